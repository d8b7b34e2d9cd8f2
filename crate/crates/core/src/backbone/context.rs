use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::backbone::TextEncoder;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Standard deviation of the Gaussian rows used when the init text is
/// shorter than the context.
pub const CONTEXT_INIT_STD: f64 = 0.02;

/// The learnable prompt context: `M` rows in token-embedding space, shared
/// by every class.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextVectors {
    vectors: Matrix,
    init_text: String,
}

impl ContextVectors {
    pub fn new(vectors: Matrix, init_text: impl Into<String>) -> Result<Self> {
        if vectors.rows() == 0 {
            return Err(Error::Config("context length must be positive".into()));
        }
        if vectors.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("context contains non-finite entries".into()));
        }
        Ok(Self {
            vectors,
            init_text: init_text.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.rows() == 0
    }

    pub fn token_width(&self) -> usize {
        self.vectors.cols()
    }

    pub fn init_text(&self) -> &str {
        &self.init_text
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }

    /// Mutable access for the optimizer.
    pub fn vectors_mut(&mut self) -> &mut Matrix {
        &mut self.vectors
    }
}

/// Builds the initial context from the token embeddings of `init_text`,
/// truncated or right-padded with seeded N(0, 0.02²) rows to `m` rows.
pub fn init_context(encoder: &dyn TextEncoder, init_text: &str, m: usize, seed: u64) -> Result<ContextVectors> {
    if m == 0 {
        return Err(Error::Config("context length must be positive".into()));
    }
    let width = encoder.token_width();
    let tokens = encoder.token_embeddings(init_text);
    let mut vectors = Matrix::zeros(m, width);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, CONTEXT_INIT_STD).expect("valid std");
    for r in 0..m {
        let row = vectors.row_mut(r);
        match tokens.get(r) {
            Some(tok) => row.copy_from_slice(tok),
            None => row.iter_mut().for_each(|v| *v = normal.sample(&mut rng)),
        }
    }
    ContextVectors::new(vectors, init_text)
}
