//! Cosine-softmax classification head and the composite prompt-learning
//! objective `CE + lambda1 * SCCM + lambda2 * KDSP` with its exact gradient
//! with respect to the context vectors.

use serde::{Deserialize, Serialize};

use crate::backbone::{ContextTape, ContextVectors, TextEncoder};
use crate::error::{Error, Result};
use crate::linalg::{dot, log_softmax, norm, Matrix};
use crate::types::{Axis, EmbeddingMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub sccm: f64,
    pub kdsp: f64,
    pub total: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl LossBreakdown {
    pub fn compose(ce: f64, sccm: f64, kdsp: f64, lambda1: f64, lambda2: f64) -> Self {
        Self {
            ce,
            sccm,
            kdsp,
            total: ce + lambda1 * sccm + lambda2 * kdsp,
            lambda1,
            lambda2,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.ce.is_finite() && self.sccm.is_finite() && self.kdsp.is_finite() && self.total.is_finite()
    }
}

fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::Shape(format!("{} labels for {rows} images", labels.len())));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Data(format!("label {bad} out of range for {classes} classes")));
    }
    Ok(())
}

fn row_norms(m: &Matrix, what: &str) -> Result<Vec<f64>> {
    m.iter_rows()
        .enumerate()
        .map(|(i, r)| {
            let n = norm(r);
            if n > 0.0 && n.is_finite() {
                Ok(n)
            } else {
                Err(Error::Numeric(format!(
                    "{what} row {i} has zero norm; cosine undefined"
                )))
            }
        })
        .collect()
}

/// `cos(T_c, V_i) / tau` for every image/class pair.
pub fn cosine_logits(images: &Matrix, texts: &Matrix, tau: f64) -> Result<Matrix> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::Config(format!("tau must be > 0, got {tau}")));
    }
    if images.cols() != texts.cols() {
        return Err(Error::Shape(format!(
            "image dim {} vs text dim {}",
            images.cols(),
            texts.cols()
        )));
    }
    let vn = row_norms(images, "image")?;
    let tn = row_norms(texts, "text")?;
    let mut out = Matrix::zeros(images.rows(), texts.rows());
    for (i, v) in images.iter_rows().enumerate() {
        for (c, t) in texts.iter_rows().enumerate() {
            out.set(i, c, dot(t, v) / (tn[c] * vn[i]) / tau);
        }
    }
    Ok(out)
}

fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for (i, row) in logits.iter_rows().enumerate() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let o = out.row_mut(i);
        for (o, z) in o.iter_mut().zip(row) {
            *o = (z - max).exp();
        }
        let sum: f64 = o.iter().sum();
        o.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

fn log_softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for (i, row) in logits.iter_rows().enumerate() {
        out.row_mut(i).copy_from_slice(&log_softmax(row));
    }
    out
}

/// Softmax over classes of cosine similarity divided by `tau`.
pub fn class_probabilities(images: &Matrix, texts: &Matrix, tau: f64) -> Result<Matrix> {
    Ok(softmax_rows(&cosine_logits(images, texts, tau)?))
}

/// Row-wise argmax; ties go to the lowest index.
pub fn predict(scores: &Matrix) -> Vec<usize> {
    scores
        .iter_rows()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) },
                )
                .0
        })
        .collect()
}

/// Batch-mean negative log-likelihood of the true class from probabilities.
pub fn ce_loss(probabilities: &Matrix, labels: &[usize]) -> Result<f64> {
    check_labels(labels, probabilities.rows(), probabilities.cols())?;
    if labels.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -probabilities.get(i, y).ln())
        .sum();
    Ok(total / labels.len() as f64)
}

/// Same quantity as [`ce_loss`], computed in log space from logits.
pub fn ce_loss_from_logits(logits: &Matrix, labels: &[usize]) -> Result<f64> {
    check_labels(labels, logits.rows(), logits.cols())?;
    if labels.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = logits
        .iter_rows()
        .zip(labels)
        .map(|(row, &y)| -log_softmax(row)[y])
        .sum();
    Ok(total / labels.len() as f64)
}

/// `sum_c |T_c - P_c|^2`, summed over classes and dimensions.
pub fn sccm_loss(prompts: &Matrix, ensemble: &Matrix) -> Result<f64> {
    if prompts.rows() != ensemble.rows() || prompts.cols() != ensemble.cols() {
        return Err(Error::Shape(format!(
            "{}x{} prompts vs {}x{} ensemble",
            prompts.rows(),
            prompts.cols(),
            ensemble.rows(),
            ensemble.cols()
        )));
    }
    Ok(prompts
        .as_slice()
        .iter()
        .zip(ensemble.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

fn kl_rows(teacher_logits: &Matrix, student_logits: &Matrix) -> f64 {
    let lt = log_softmax_rows(teacher_logits);
    let ls = log_softmax_rows(student_logits);
    let mut total = 0.0;
    for i in 0..lt.rows() {
        for (t, s) in lt.row(i).iter().zip(ls.row(i)) {
            total += t.exp() * (t - s);
        }
    }
    total
}

/// Batch-mean `KL(teacher || student)` where the teacher classifies images
/// against `teacher` (the pruned ensemble) and the student against `prompts`.
pub fn kdsp_loss(images: &Matrix, prompts: &Matrix, teacher: &Matrix, tau: f64) -> Result<f64> {
    if images.rows() == 0 {
        return Ok(0.0);
    }
    let student = cosine_logits(images, prompts, tau)?;
    let teacher = cosine_logits(images, teacher, tau)?;
    // rounding can produce tiny negatives when the distributions coincide
    Ok((kl_rows(&teacher, &student) / images.rows() as f64).max(0.0))
}

/// A labeled mini-batch of image embeddings.
#[derive(Debug, Clone)]
pub struct Batch {
    pub images: EmbeddingMatrix,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(images: EmbeddingMatrix, labels: Vec<usize>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> Batch {
        Batch {
            images: self.images.select(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Loss weights of the composite objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

/// Everything fixed during a run: encoder, class names, both ensembles.
pub struct Objective<'a> {
    encoder: &'a dyn TextEncoder,
    class_names: Vec<String>,
    general: &'a EmbeddingMatrix,
    teacher: &'a EmbeddingMatrix,
    weights: LossWeights,
}

pub struct Evaluation {
    pub loss: LossBreakdown,
    /// `B x C` student logits.
    pub logits: Matrix,
    /// Learned class embeddings `T_p`, `C x D`.
    pub prompts: EmbeddingMatrix,
}

impl<'a> Objective<'a> {
    pub fn new(
        encoder: &'a dyn TextEncoder,
        class_names: Vec<String>,
        general: &'a EmbeddingMatrix,
        teacher: &'a EmbeddingMatrix,
        weights: LossWeights,
    ) -> Result<Self> {
        let c = class_names.len();
        general.expect_rows(c)?;
        teacher.expect_rows(c)?;
        let d = encoder.embedding_dim();
        if general.dim() != d || teacher.dim() != d {
            return Err(Error::Shape(format!(
                "ensembles have dims {}/{} but the encoder emits {d}",
                general.dim(),
                teacher.dim()
            )));
        }
        Ok(Self {
            encoder,
            class_names,
            general,
            teacher,
            weights,
        })
    }

    pub fn weights(&self) -> LossWeights {
        self.weights
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    fn encode(&self, ctx: &ContextVectors) -> Result<(EmbeddingMatrix, Vec<Box<dyn ContextTape>>)> {
        let mut rows = Vec::with_capacity(self.class_names.len());
        let mut tapes = Vec::with_capacity(self.class_names.len());
        for name in &self.class_names {
            let enc = self.encoder.encode_with_context(ctx, name)?;
            rows.push(enc.embedding.into_vec());
            tapes.push(enc.tape);
        }
        let prompts = EmbeddingMatrix::from_rows(Axis::PerClass, self.encoder.embedding_dim(), &rows)?;
        Ok((prompts, tapes))
    }

    /// Learned class embeddings for the current context.
    pub fn class_embeddings(&self, ctx: &ContextVectors) -> Result<EmbeddingMatrix> {
        Ok(self.encode(ctx)?.0)
    }

    fn breakdown(&self, batch: &Batch, prompts: &EmbeddingMatrix) -> Result<(LossBreakdown, Matrix)> {
        check_labels(&batch.labels, batch.images.len(), self.num_classes())?;
        let tau = self.encoder.tau();
        let logits = cosine_logits(&batch.images, prompts, tau)?;
        let ce = ce_loss_from_logits(&logits, &batch.labels)?;
        let sccm = sccm_loss(prompts, self.general)?;
        let kdsp = kdsp_loss(&batch.images, prompts, self.teacher, tau)?;
        let loss = LossBreakdown::compose(ce, sccm, kdsp, self.weights.lambda1, self.weights.lambda2);
        Ok((loss, logits))
    }

    pub fn evaluate(&self, ctx: &ContextVectors, batch: &Batch) -> Result<Evaluation> {
        let (prompts, _) = self.encode(ctx)?;
        let (loss, logits) = self.breakdown(batch, &prompts)?;
        Ok(Evaluation { loss, logits, prompts })
    }

    /// Loss breakdown and `dL/d(ctx)`. Terms with a zero weight contribute
    /// no gradient; the teacher is constant.
    pub fn evaluate_with_gradient(&self, ctx: &ContextVectors, batch: &Batch) -> Result<(Evaluation, Matrix)> {
        let (prompts, tapes) = self.encode(ctx)?;
        let (loss, logits) = self.breakdown(batch, &prompts)?;
        let tau = self.encoder.tau();
        let c_count = self.num_classes();
        let dim = prompts.dim();
        let b = batch.len() as f64;

        // dL/d(logits)
        let mut grad_logits = Matrix::zeros(batch.len(), c_count);
        let teacher_probs = if self.weights.lambda2 != 0.0 && !batch.is_empty() {
            Some(class_probabilities(&batch.images, self.teacher, tau)?)
        } else {
            None
        };
        for (i, row) in logits.iter_rows().enumerate() {
            let student = log_softmax(row);
            let out = grad_logits.row_mut(i);
            for c in 0..c_count {
                let p = student[c].exp();
                let target = if c == batch.labels[i] { 1.0 } else { 0.0 };
                let mut g = p - target;
                if let Some(t) = &teacher_probs {
                    g += self.weights.lambda2 * (p - t.get(i, c));
                }
                out[c] = g / b;
            }
        }

        // dL/d(T_p)
        let vn = row_norms(&batch.images, "image")?;
        let mut grad_prompts = Matrix::zeros(c_count, dim);
        for c in 0..c_count {
            let t = prompts.row(c);
            let tn = norm(t);
            let gt = grad_prompts.row_mut(c);
            for (i, v) in batch.images.iter_rows().enumerate() {
                let g = grad_logits.get(i, c);
                if g == 0.0 {
                    continue;
                }
                let cos = dot(t, v) / (tn * vn[i]);
                let scale = g / tau;
                for d in 0..dim {
                    gt[d] += scale * (v[d] / (tn * vn[i]) - cos * t[d] / (tn * tn));
                }
            }
            if self.weights.lambda1 != 0.0 {
                let pg = self.general.row(c);
                for d in 0..dim {
                    gt[d] += self.weights.lambda1 * 2.0 * (t[d] - pg[d]);
                }
            }
        }

        // dL/d(ctx)
        let mut grad = Matrix::zeros(ctx.len(), ctx.token_width());
        for (c, tape) in tapes.iter().enumerate() {
            let part = tape.backward(grad_prompts.row(c));
            for (acc, v) in grad.as_mut_slice().iter_mut().zip(part.as_slice()) {
                *acc += v;
            }
        }
        Ok((Evaluation { loss, logits, prompts }, grad))
    }
}

/// Loss breakdown of `ctx` on `batch`.
pub fn total_loss(objective: &Objective<'_>, ctx: &ContextVectors, batch: &Batch) -> Result<LossBreakdown> {
    Ok(objective.evaluate(ctx, batch)?.loss)
}

/// Exact gradient of [`total_loss`] with respect to the context rows.
pub fn loss_gradient(objective: &Objective<'_>, ctx: &ContextVectors, batch: &Batch) -> Result<Matrix> {
    Ok(objective.evaluate_with_gradient(ctx, batch)?.1)
}
