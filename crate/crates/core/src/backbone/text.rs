use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::backbone::context::ContextVectors;
use crate::backbone::tokenizer::tokenize;
use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Matrix};
use crate::types::{Axis, ClassCatalog, EmbeddingMatrix, EmbeddingVector, PromptBank};

/// Default softmax temperature (logit scale 100).
pub const DEFAULT_TAU: f64 = 0.01;

/// Backward pass from a class text embedding to the context rows.
pub trait ContextTape: Send {
    /// Maps `dL/d(embedding)` to `dL/d(context)` (an `M x d_tok` matrix).
    fn backward(&self, grad_embedding: &[f64]) -> Matrix;
}

pub struct EncodedText {
    pub embedding: EmbeddingVector,
    pub tape: Box<dyn ContextTape>,
}

/// A frozen text encoder.
pub trait TextEncoder: Send + Sync {
    fn embedding_dim(&self) -> usize;

    fn token_width(&self) -> usize;

    fn tau(&self) -> f64;

    /// Token embeddings of `text` under the encoder's tokenizer.
    fn token_embeddings(&self, text: &str) -> Vec<Vec<f64>>;

    /// Encodes `[ctx ; class tokens]` into a unit-norm class embedding with a
    /// tape for differentiating through the context.
    fn encode_with_context(&self, ctx: &ContextVectors, class_name: &str) -> Result<EncodedText>;

    /// Encodes a plain text with no gradient.
    fn encode_text(&self, text: &str) -> Result<EmbeddingVector>;

    /// Digest of all frozen parameters.
    fn parameter_digest(&self) -> String;
}

/// Deterministic stand-in for a real text tower: hashed token table,
/// mean-pooling over the sequence, a fixed random projection, L2 norm.
#[derive(Debug, Clone)]
pub struct SyntheticTextEncoder {
    seed: u64,
    token_width: usize,
    embedding_dim: usize,
    tau: f64,
    /// `D x d_tok`.
    projection: Arc<Matrix>,
}

pub(crate) fn derive_rng(seed: u64, domain: &str, key: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(domain.as_bytes());
    h.update([0u8]);
    h.update(key.as_bytes());
    let digest: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

pub(crate) fn gaussian_vec(rng: &mut ChaCha8Rng, len: usize, std: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, std).expect("valid std");
    (0..len).map(|_| normal.sample(rng)).collect()
}

pub(crate) fn matrix_digest(parts: &[&Matrix], header: &[u64]) -> String {
    let mut h = Sha256::new();
    for v in header {
        h.update(v.to_le_bytes());
    }
    for m in parts {
        for v in m.as_slice() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

impl SyntheticTextEncoder {
    pub fn new(seed: u64, token_width: usize, embedding_dim: usize, tau: f64) -> Result<Self> {
        if token_width == 0 || embedding_dim == 0 {
            return Err(Error::Config("encoder widths must be positive".into()));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Config(format!("tau must be > 0, got {tau}")));
        }
        let mut rng = derive_rng(seed, "text-projection", "");
        let std = 1.0 / (token_width as f64).sqrt();
        let data = gaussian_vec(&mut rng, embedding_dim * token_width, std);
        Ok(Self {
            seed,
            token_width,
            embedding_dim,
            tau,
            projection: Arc::new(Matrix::from_vec(embedding_dim, token_width, data)?),
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn projection(&self) -> &Matrix {
        &self.projection
    }

    /// Hash-to-vector lookup: a token always maps to the same row.
    pub fn token_embedding(&self, token: &str) -> Vec<f64> {
        let mut rng = derive_rng(self.seed, "token", token);
        gaussian_vec(&mut rng, self.token_width, 1.0 / (self.token_width as f64).sqrt())
    }

    fn project(&self, h: &[f64]) -> Vec<f64> {
        self.projection.iter_rows().map(|w| dot(w, h)).collect()
    }

    fn pooled_tokens(&self, tokens: &[String], into: &mut [f64]) {
        for t in tokens {
            for (acc, v) in into.iter_mut().zip(self.token_embedding(t)) {
                *acc += v;
            }
        }
    }
}

fn unit(u: Vec<f64>) -> Result<(Vec<f64>, f64)> {
    let n = norm(&u);
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::Numeric(format!("cannot normalize vector of norm {n}")));
    }
    Ok((u.into_iter().map(|x| x / n).collect(), n))
}

impl TextEncoder for SyntheticTextEncoder {
    fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    fn token_width(&self) -> usize {
        self.token_width
    }

    fn tau(&self) -> f64 {
        self.tau
    }

    fn token_embeddings(&self, text: &str) -> Vec<Vec<f64>> {
        tokenize(text).iter().map(|t| self.token_embedding(t)).collect()
    }

    fn encode_with_context(&self, ctx: &ContextVectors, class_name: &str) -> Result<EncodedText> {
        if ctx.token_width() != self.token_width {
            return Err(Error::Shape(format!(
                "context width {} does not match encoder token width {}",
                ctx.token_width(),
                self.token_width
            )));
        }
        let class_tokens = tokenize(class_name);
        let seq_len = ctx.len() + class_tokens.len();
        let mut h = vec![0.0; self.token_width];
        for row in ctx.vectors().iter_rows() {
            for (acc, v) in h.iter_mut().zip(row) {
                *acc += v;
            }
        }
        self.pooled_tokens(&class_tokens, &mut h);
        let scale = 1.0 / seq_len as f64;
        h.iter_mut().for_each(|v| *v *= scale);
        let (embedding, u_norm) = unit(self.project(&h))?;
        Ok(EncodedText {
            embedding: EmbeddingVector::new(embedding.clone(), true)?,
            tape: Box::new(MeanPoolTape {
                projection: Arc::clone(&self.projection),
                embedding,
                u_norm,
                seq_len,
                context_rows: ctx.len(),
            }),
        })
    }

    fn encode_text(&self, text: &str) -> Result<EmbeddingVector> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(Error::Data(format!("text `{text}` has no tokens")));
        }
        let mut h = vec![0.0; self.token_width];
        self.pooled_tokens(&tokens, &mut h);
        let scale = 1.0 / tokens.len() as f64;
        h.iter_mut().for_each(|v| *v *= scale);
        let (embedding, _) = unit(self.project(&h))?;
        EmbeddingVector::new(embedding, true)
    }

    fn parameter_digest(&self) -> String {
        matrix_digest(
            &[&self.projection],
            &[
                self.seed,
                self.token_width as u64,
                self.embedding_dim as u64,
                self.tau.to_bits(),
            ],
        )
    }
}

struct MeanPoolTape {
    projection: Arc<Matrix>,
    embedding: Vec<f64>,
    u_norm: f64,
    seq_len: usize,
    context_rows: usize,
}

impl ContextTape for MeanPoolTape {
    fn backward(&self, grad: &[f64]) -> Matrix {
        // through e = u / |u|
        let along = dot(&self.embedding, grad);
        let du: Vec<f64> = grad
            .iter()
            .zip(&self.embedding)
            .map(|(g, e)| (g - e * along) / self.u_norm)
            .collect();
        // through u = W h
        let width = self.projection.cols();
        let mut dh = vec![0.0; width];
        for (w, d) in self.projection.iter_rows().zip(&du) {
            for (acc, wv) in dh.iter_mut().zip(w) {
                *acc += wv * d;
            }
        }
        // through the mean pool; every context row receives the same share
        let scale = 1.0 / self.seq_len as f64;
        dh.iter_mut().for_each(|v| *v *= scale);
        let mut out = Matrix::zeros(self.context_rows, width);
        for r in 0..self.context_rows {
            out.row_mut(r).copy_from_slice(&dh);
        }
        out
    }
}

/// Encodes every prompt of the bank, in catalog order. Row `i` of matrix
/// `c` is prompt `i` of class `c`.
pub fn encode_text_bank(
    encoder: &dyn TextEncoder,
    bank: &PromptBank,
    catalog: &ClassCatalog,
) -> Result<Vec<EmbeddingMatrix>> {
    let dim = encoder.embedding_dim();
    bank.ordered_prompts(catalog)?
        .into_iter()
        .map(|prompts| {
            let rows = prompts
                .iter()
                .map(|p| encoder.encode_text(p).map(EmbeddingVector::into_vec))
                .collect::<Result<Vec<_>>>()?;
            EmbeddingMatrix::from_rows(Axis::PerPrompt, dim, &rows)
        })
        .collect()
}

/// Flattens per-class banks into one class-major matrix for caching.
pub fn stack_bank(banks: &[EmbeddingMatrix]) -> Result<EmbeddingMatrix> {
    let dim = banks.first().map_or(0, |b| b.dim());
    let rows: Vec<&[f64]> = banks.iter().flat_map(|b| b.iter_rows()).collect();
    EmbeddingMatrix::from_rows(Axis::PerPrompt, dim, &rows)
}

/// Inverse of [`stack_bank`] for `classes` blocks of `n` rows each.
pub fn unstack_bank(stacked: &EmbeddingMatrix, classes: usize, n: usize) -> Result<Vec<EmbeddingMatrix>> {
    stacked.expect_rows(classes * n)?;
    Ok((0..classes)
        .map(|c| {
            let idx: Vec<usize> = (c * n..(c + 1) * n).collect();
            stacked.select(&idx).with_axis(Axis::PerPrompt)
        })
        .collect())
}
