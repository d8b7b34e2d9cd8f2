use crate::backbone::text::{derive_rng, gaussian_vec, matrix_digest};
use crate::error::{Error, Result};
use crate::linalg::{dot, normalized, Matrix};
use crate::types::{Axis, CacheIndex, EmbeddingMatrix};

/// Fixed random linear map from raw features to `D`, plus an optional bias
/// row, followed by L2 normalization. The zero feature vector maps to the
/// normalized bias.
#[derive(Debug, Clone)]
pub struct SyntheticVisionEncoder {
    seed: u64,
    /// `D x F`.
    projection: Matrix,
    bias: Option<Vec<f64>>,
}

impl SyntheticVisionEncoder {
    pub fn new(seed: u64, feature_width: usize, embedding_dim: usize, with_bias: bool) -> Result<Self> {
        if feature_width == 0 || embedding_dim == 0 {
            return Err(Error::Config("encoder widths must be positive".into()));
        }
        let mut rng = derive_rng(seed, "vision-projection", "");
        let std = 1.0 / (feature_width as f64).sqrt();
        let projection = Matrix::from_vec(
            embedding_dim,
            feature_width,
            gaussian_vec(&mut rng, embedding_dim * feature_width, std),
        )?;
        let bias = with_bias.then(|| {
            let mut rng = derive_rng(seed, "vision-bias", "");
            gaussian_vec(&mut rng, embedding_dim, 0.1)
        });
        Ok(Self { seed, projection, bias })
    }

    pub fn feature_width(&self) -> usize {
        self.projection.cols()
    }

    pub fn embedding_dim(&self) -> usize {
        self.projection.rows()
    }

    pub fn projection(&self) -> &Matrix {
        &self.projection
    }

    pub fn bias(&self) -> Option<&[f64]> {
        self.bias.as_deref()
    }

    pub fn encode_one(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.feature_width() {
            return Err(Error::Shape(format!(
                "feature row has width {}, encoder expects {}",
                features.len(),
                self.feature_width()
            )));
        }
        let mut out: Vec<f64> = self.projection.iter_rows().map(|w| dot(w, features)).collect();
        if let Some(b) = &self.bias {
            out.iter_mut().zip(b).for_each(|(o, b)| *o += b);
        }
        normalized(&out).ok_or_else(|| Error::Numeric("image projection has zero norm".into()))
    }

    /// Encodes each feature row; output order matches input order.
    pub fn encode(&self, features: &Matrix) -> Result<EmbeddingMatrix> {
        let rows = features
            .iter_rows()
            .map(|f| self.encode_one(f))
            .collect::<Result<Vec<_>>>()?;
        EmbeddingMatrix::from_rows(Axis::PerImage, self.embedding_dim(), &rows)
    }

    pub fn parameter_digest(&self) -> String {
        let bias = self
            .bias
            .as_ref()
            .map(|b| Matrix::from_vec(1, b.len(), b.clone()).expect("bias row"));
        let mut parts = vec![&self.projection];
        if let Some(b) = &bias {
            parts.push(b);
        }
        matrix_digest(&parts, &[self.seed])
    }
}

/// Image embeddings exported offline, addressed by item id.
#[derive(Debug, Clone)]
pub struct CachedVisionSource {
    embeddings: EmbeddingMatrix,
    index: CacheIndex,
}

impl CachedVisionSource {
    /// Rows are re-normalized on load so the unit-norm contract holds even
    /// for caches written from unnormalized exports.
    pub fn new(embeddings: EmbeddingMatrix, index: CacheIndex) -> Result<Self> {
        if index.len() != embeddings.len() {
            return Err(Error::Data(format!(
                "cache index has {} ids for {} rows",
                index.len(),
                embeddings.len()
            )));
        }
        let dim = embeddings.dim();
        let rows = embeddings
            .iter_rows()
            .enumerate()
            .map(|(i, r)| normalized(r).ok_or_else(|| Error::Data(format!("cached image row {i} has zero norm"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            embeddings: EmbeddingMatrix::from_rows(Axis::PerImage, dim, &rows)?,
            index,
        })
    }

    pub fn embedding_dim(&self) -> usize {
        self.embeddings.dim()
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    /// Embeddings for `ids`, in request order.
    pub fn encode<S: AsRef<str>>(&self, ids: &[S]) -> Result<EmbeddingMatrix> {
        let rows = ids
            .iter()
            .map(|id| self.index.row_of(id.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.embeddings.select(&rows))
    }

    pub fn parameter_digest(&self) -> String {
        matrix_digest(&[self.embeddings.matrix()], &[])
    }
}
