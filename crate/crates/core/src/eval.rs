//! Accuracy, base/novel splitting, harmonic mean, seed aggregation, reports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::{ContextVectors, TextEncoder};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::objective::{cosine_logits, predict, Batch};
use crate::types::{Axis, ClassCatalog, EmbeddingMatrix};

/// Recorded in every report header; results are only comparable under the
/// same rule.
pub const SPLIT_RULE: &str = "first ceil(C/2) classes in catalog order are base, the rest novel";

/// Percentage of positions where `predictions` equals `labels`.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Data("accuracy of an empty set".into()));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(100.0 * hits as f64 / labels.len() as f64)
}

/// Class indices of the base and novel halves.
pub fn base_novel_split(catalog: &ClassCatalog) -> Result<(Vec<usize>, Vec<usize>)> {
    let c = catalog.len();
    if c < 2 {
        return Err(Error::Data(format!(
            "base-to-novel needs at least 2 classes, catalog has {c}"
        )));
    }
    let base = c.div_ceil(2);
    Ok(((0..base).collect(), (base..c).collect()))
}

pub fn harmonic_mean(base: f64, novel: f64) -> Result<f64> {
    for v in [base, novel] {
        if !(0.0..=100.0).contains(&v) {
            return Err(Error::Data(format!("accuracy {v} outside [0, 100]")));
        }
    }
    if base + novel == 0.0 {
        return Err(Error::Data("harmonic mean of two zero accuracies".into()));
    }
    Ok(2.0 * base * novel / (base + novel))
}

/// Mean and sample standard deviation; a single value has std 0.
pub fn aggregate_seeds(values: &[f64]) -> Result<(f64, f64)> {
    let n = values.len();
    if n == 0 {
        return Err(Error::Data("no per-seed values to aggregate".into()));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Ok((mean, 0.0));
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    Ok((mean, (ss / (n - 1) as f64).sqrt()))
}

pub fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// Accuracy of nearest-class-embedding prediction under cosine logits.
pub fn classify_accuracy(class_embeddings: &Matrix, batch: &Batch, tau: f64) -> Result<f64> {
    let logits = cosine_logits(&batch.images, class_embeddings, tau)?;
    accuracy(&predict(&logits), &batch.labels)
}

/// Class embeddings `E_t([ctx ; class])` for each name.
pub fn context_class_embeddings(
    encoder: &dyn TextEncoder,
    ctx: &ContextVectors,
    class_names: &[String],
) -> Result<EmbeddingMatrix> {
    let rows = class_names
        .iter()
        .map(|n| Ok(encoder.encode_with_context(ctx, n)?.embedding.into_vec()))
        .collect::<Result<Vec<_>>>()?;
    EmbeddingMatrix::from_rows(Axis::PerClass, encoder.embedding_dim(), &rows)
}

/// Accuracy of a learned (or freshly initialized) context on `batch`.
pub fn context_accuracy(
    encoder: &dyn TextEncoder,
    ctx: &ContextVectors,
    class_names: &[String],
    batch: &Batch,
) -> Result<f64> {
    let t = context_class_embeddings(encoder, ctx, class_names)?;
    classify_accuracy(&t, batch, encoder.tau())
}

/// One seed's outcome. `accuracy` is the few-shot accuracy, or the harmonic
/// mean in base-to-novel runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub accuracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub novel: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub dataset: String,
    pub seeds: Vec<SeedResult>,
    pub mean: f64,
    pub std: f64,
    pub base: Option<f64>,
    pub novel: Option<f64>,
    pub hm: Option<f64>,
}

impl DatasetReport {
    /// Aggregates per-seed results; base/novel are averaged over seeds and
    /// the reported HM is taken of those averages.
    pub fn aggregate(dataset: impl Into<String>, seeds: Vec<SeedResult>) -> Result<Self> {
        let accs: Vec<f64> = seeds.iter().map(|s| s.accuracy).collect();
        let (mean, std) = aggregate_seeds(&accs)?;
        let mean_of = |f: fn(&SeedResult) -> Option<f64>| -> Option<f64> {
            let v: Option<Vec<f64>> = seeds.iter().map(f).collect();
            v.map(|v| v.iter().sum::<f64>() / v.len() as f64)
        };
        let base = mean_of(|s| s.base);
        let novel = mean_of(|s| s.novel);
        let hm = match (base, novel) {
            (Some(b), Some(n)) => Some(harmonic_mean(b, n)?),
            _ => None,
        };
        Ok(Self {
            dataset: dataset.into(),
            seeds,
            mean,
            std,
            base,
            novel,
            hm,
        })
    }

    fn rounded(&self) -> Self {
        let r = |v: Option<f64>| v.map(round2);
        Self {
            dataset: self.dataset.clone(),
            seeds: self
                .seeds
                .iter()
                .map(|s| SeedResult {
                    seed: s.seed,
                    accuracy: round2(s.accuracy),
                    base: r(s.base),
                    novel: r(s.novel),
                })
                .collect(),
            mean: round2(self.mean),
            std: round2(self.std),
            base: r(self.base),
            novel: r(self.novel),
            hm: r(self.hm),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split_rule: String,
    pub config_digest: String,
    pub seed: u64,
    pub benchmark: String,
    pub datasets: Vec<DatasetReport>,
}

impl EvalReport {
    pub fn new(config_digest: impl Into<String>, seed: u64, benchmark: impl Into<String>) -> Self {
        Self {
            split_rule: SPLIT_RULE.to_string(),
            config_digest: config_digest.into(),
            seed,
            benchmark: benchmark.into(),
            datasets: Vec::new(),
        }
    }

    /// Pretty JSON with every accuracy rounded to two decimals.
    pub fn to_json(&self) -> String {
        let rounded = Self {
            datasets: self.datasets.iter().map(DatasetReport::rounded).collect(),
            ..self.clone()
        };
        let mut s = serde_json::to_string_pretty(&rounded).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# config {} seed {}", self.config_digest, self.seed);
        let _ = writeln!(out, "# split rule: {}", self.split_rule);
        let b2n = self.datasets.iter().any(|d| d.hm.is_some());
        if b2n {
            let _ = writeln!(out, "{:<24}{:>8}{:>8}{:>8}", "Dataset", "Base", "Novel", "HM");
        } else {
            let _ = writeln!(out, "{:<24}{:>16}", "Dataset", "Accuracy (%)");
        }
        for d in &self.datasets {
            match (d.base, d.novel, d.hm) {
                (Some(b), Some(n), Some(h)) => {
                    let _ = writeln!(out, "{:<24}{:>8.2}{:>8.2}{:>8.2}", d.dataset, b, n, h);
                }
                _ => {
                    let cell = format!("{:.2} ± {:.2}", d.mean, d.std);
                    let _ = writeln!(out, "{:<24}{:>16}", d.dataset, cell);
                }
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}
