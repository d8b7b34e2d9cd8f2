use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{norm, Matrix};

/// Tolerance on the L2 norm of vectors flagged as normalized.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// One embedding row of length `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    normalized: bool,
}

impl EmbeddingVector {
    /// Checks finiteness and, when `normalized` is set, the unit-norm contract.
    pub fn new(values: Vec<f64>, normalized: bool) -> Result<Self> {
        if let Some(col) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: 0, col });
        }
        if normalized {
            let n = norm(&values);
            if (n - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(Error::Data(format!("embedding flagged normalized has norm {n}")));
            }
        }
        Ok(Self { values, normalized })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }
}

impl AsRef<[f64]> for EmbeddingVector {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

/// What the rows of an [`EmbeddingMatrix`] index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Axis {
    PerImage,
    PerClass,
    PerPrompt,
}

/// A stack of embedding rows sharing one dimension `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    axis: Axis,
    matrix: Matrix,
}

impl EmbeddingMatrix {
    pub fn new(axis: Axis, matrix: Matrix) -> Result<Self> {
        for (row, values) in matrix.iter_rows().enumerate() {
            if let Some(col) = values.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { row, col });
            }
        }
        Ok(Self { axis, matrix })
    }

    pub fn from_rows<R: AsRef<[f64]>>(axis: Axis, dim: usize, rows: &[R]) -> Result<Self> {
        Self::new(axis, Matrix::from_rows(dim, rows)?)
    }

    pub fn empty(axis: Axis, dim: usize) -> Self {
        Self {
            axis,
            matrix: Matrix::zeros(0, dim),
        }
    }

    pub fn axis(&self) -> Axis {
        self.axis
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn len(&self) -> usize {
        self.matrix.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Fails unless the row count equals the declared axis cardinality.
    pub fn expect_rows(&self, expected: usize) -> Result<()> {
        if self.len() != expected {
            return Err(Error::Shape(format!(
                "{:?} matrix has {} rows, expected {expected}",
                self.axis,
                self.len()
            )));
        }
        Ok(())
    }

    /// True if every row has unit norm within [`UNIT_NORM_TOLERANCE`].
    pub fn rows_unit_norm(&self) -> bool {
        self.matrix
            .iter_rows()
            .all(|r| (norm(r) - 1.0).abs() <= UNIT_NORM_TOLERANCE)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> Matrix {
        self.matrix
    }

    pub fn with_axis(self, axis: Axis) -> Self {
        Self { axis, ..self }
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            axis: self.axis,
            matrix: self.matrix.select_rows(indices),
        }
    }
}

impl Deref for EmbeddingMatrix {
    type Target = Matrix;

    fn deref(&self) -> &Matrix {
        &self.matrix
    }
}
