//! Desk-scale synthetic classification tasks.
//!
//! Class centroids are the Gram-Schmidt orthonormalization of the encoder's
//! class-name embeddings, so the text side carries real signal about the
//! images. Images are `normalize(centroid + N(0, sigma^2 I))`, rounded to
//! `f32` so in-memory and cached copies agree exactly.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::backbone::{CachedVisionSource, TextEncoder};
use crate::error::{Error, Result};
use crate::linalg::{dot, normalized, Matrix};
use crate::objective::Batch;
use crate::prompt_gen::QUERY_TEMPLATE;
use crate::types::{
    write_embedding_cache, Axis, CacheIndex, ClassCatalog, ClassPrompts, DatasetManifest, EmbeddingMatrix,
    GeneratorInfo, ManifestRecord, PromptBank, Split,
};

const CLASS_NAMES: &[&str] = &[
    "glioma",
    "meningioma",
    "pituitary",
    "benign",
    "malignant",
    "normal",
    "adenoma",
    "carcinoma",
];

const ADJECTIVES: &[&str] = &[
    "irregular",
    "smooth",
    "bright",
    "dark",
    "lobulated",
    "diffuse",
    "focal",
    "cystic",
    "solid",
    "calcified",
];

const NOUNS: &[&str] = &["margins", "mass", "lesion", "texture", "borders"];

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub sigma: f64,
    pub n_prompts: usize,
    pub seed: u64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            classes: 3,
            train_per_class: 32,
            test_per_class: 32,
            sigma: 0.1,
            n_prompts: 50,
            seed: 0,
        }
    }
}

/// Class names for a `classes`-way task.
pub fn class_names(classes: usize) -> Vec<String> {
    (0..classes)
        .map(|c| match CLASS_NAMES.get(c) {
            Some(n) => n.to_string(),
            None => format!("class{c}"),
        })
        .collect()
}

/// `n` descriptive prompts that all mention `class_name`.
pub fn aligned_prompts(class_name: &str, n: usize) -> Vec<String> {
    (0..n)
        .map(|i| {
            let adj = ADJECTIVES[i % ADJECTIVES.len()];
            let noun = NOUNS[(i / ADJECTIVES.len()) % NOUNS.len()];
            let round = i / (ADJECTIVES.len() * NOUNS.len());
            if round == 0 {
                format!("{class_name} with {adj} {noun}")
            } else {
                format!("{class_name} with {adj} {noun} variant {round}")
            }
        })
        .collect()
}

pub fn aligned_bank(catalog: &ClassCatalog, n: usize) -> PromptBank {
    PromptBank {
        query_template: QUERY_TEMPLATE.to_string(),
        generator: GeneratorInfo {
            model: "synthetic".to_string(),
            timestamp: None,
            extra: Default::default(),
        },
        classes: catalog
            .entries()
            .iter()
            .map(|e| ClassPrompts {
                name: e.name.clone(),
                modality: e.modality.clone(),
                prompts: aligned_prompts(&e.name, n),
            })
            .collect(),
    }
}

/// Orthonormalizes the encoder's class-name embeddings.
pub fn orthogonal_centroids(encoder: &dyn TextEncoder, names: &[String]) -> Result<Matrix> {
    let dim = encoder.embedding_dim();
    if names.len() > dim {
        return Err(Error::Config(format!(
            "{} classes exceed embedding dim {dim}",
            names.len()
        )));
    }
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(names.len());
    for name in names {
        let mut v = encoder.encode_text(name)?.into_vec();
        for u in &rows {
            let p = dot(&v, u);
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= p * b);
        }
        let v = normalized(&v).ok_or_else(|| Error::Numeric(format!("class `{name}` is degenerate")))?;
        rows.push(v);
    }
    Matrix::from_rows(dim, &rows)
}

#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub catalog: ClassCatalog,
    pub manifest: DatasetManifest,
    pub centroids: Matrix,
    /// One row per manifest record, in manifest order.
    pub embeddings: EmbeddingMatrix,
    pub index: CacheIndex,
    pub bank: PromptBank,
}

/// Paths written by [`SyntheticTask::write`].
#[derive(Debug, Clone)]
pub struct TaskFiles {
    pub catalog: PathBuf,
    pub manifest: PathBuf,
    pub image_cache: PathBuf,
    pub image_index: PathBuf,
    pub bank: PathBuf,
}

impl SyntheticTask {
    pub fn generate(encoder: &dyn TextEncoder, spec: &TaskSpec) -> Result<Self> {
        if spec.classes == 0 || spec.train_per_class == 0 {
            return Err(Error::Config("task needs at least one class and one train item".into()));
        }
        if !(spec.sigma >= 0.0 && spec.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be >= 0, got {}", spec.sigma)));
        }
        let names = class_names(spec.classes);
        let catalog = ClassCatalog::from_names(&names, "MRI")?;
        let centroids = orthogonal_centroids(encoder, &names)?;
        let dim = encoder.embedding_dim();
        let noise = Normal::new(0.0, spec.sigma).map_err(|e| Error::Config(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

        let mut records = Vec::new();
        let mut rows = Vec::new();
        for (split, per_class) in [(Split::Train, spec.train_per_class), (Split::Test, spec.test_per_class)] {
            for (c, name) in names.iter().enumerate() {
                for i in 0..per_class {
                    let raw: Vec<f64> = centroids.row(c).iter().map(|&m| m + noise.sample(&mut rng)).collect();
                    let unit = normalized(&raw).ok_or_else(|| Error::Numeric("zero image".into()))?;
                    rows.push(unit.into_iter().map(|v| f64::from(v as f32)).collect::<Vec<_>>());
                    records.push(ManifestRecord {
                        item_id: format!("{name}-{}-{i}", split.as_str()),
                        class_name: name.clone(),
                        split,
                    });
                }
            }
        }
        let index = CacheIndex::from_ids(records.iter().map(|r| r.item_id.as_str()))?;
        Ok(Self {
            bank: aligned_bank(&catalog, spec.n_prompts),
            manifest: DatasetManifest {
                records,
                image_size: None,
            },
            embeddings: EmbeddingMatrix::from_rows(Axis::PerImage, dim, &rows)?,
            catalog,
            centroids,
            index,
        })
    }

    pub fn vision(&self) -> Result<CachedVisionSource> {
        CachedVisionSource::new(self.embeddings.clone(), self.index.clone())
    }

    /// Every item of `split`, in manifest order.
    pub fn split_batch(&self, split: Split) -> Result<Batch> {
        let vision = self.vision()?;
        let records: Vec<&ManifestRecord> = self.manifest.records_in(split).collect();
        let ids: Vec<&str> = records.iter().map(|r| r.item_id.as_str()).collect();
        let labels = records
            .iter()
            .map(|r| {
                self.catalog
                    .index_of(&r.class_name)
                    .expect("manifest classes are in the catalog")
            })
            .collect();
        Batch::new(vision.encode(&ids)?, labels)
    }

    pub fn write(&self, dir: &Path) -> Result<TaskFiles> {
        let files = TaskFiles {
            catalog: dir.join("catalog.tsv"),
            manifest: dir.join("manifest.tsv"),
            image_cache: dir.join("images.bin"),
            image_index: dir.join("images.idx"),
            bank: dir.join("bank.json"),
        };
        self.catalog.save(&files.catalog)?;
        self.manifest.save(&files.manifest)?;
        write_embedding_cache(&self.embeddings, &files.image_cache)?;
        self.index.write(&files.image_index)?;
        self.bank.save(&files.bank)?;
        Ok(files)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::SyntheticTextEncoder;

    #[test]
    fn centroids_are_orthonormal() {
        let enc = SyntheticTextEncoder::new(3, 32, 16, 0.01).unwrap();
        let c = orthogonal_centroids(&enc, &class_names(5)).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((dot(c.row(i), c.row(j)) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn prompts_are_distinct_and_mention_the_class() {
        let p = aligned_prompts("glioma", 120);
        let unique: std::collections::HashSet<_> = p.iter().collect();
        assert_eq!(unique.len(), 120);
        assert!(p.iter().all(|s| s.starts_with("glioma ")));
    }

    #[test]
    fn generation_is_deterministic_and_counts_match() {
        let enc = SyntheticTextEncoder::new(3, 32, 16, 0.01).unwrap();
        let spec = TaskSpec {
            train_per_class: 5,
            test_per_class: 2,
            n_prompts: 4,
            ..TaskSpec::default()
        };
        let a = SyntheticTask::generate(&enc, &spec).unwrap();
        let b = SyntheticTask::generate(&enc, &spec).unwrap();
        assert_eq!(a.embeddings, b.embeddings);
        assert_eq!(a.manifest.split_counts()[&Split::Train], 15);
        assert_eq!(a.manifest.split_counts()[&Split::Test], 6);
        assert_eq!(a.split_batch(Split::Test).unwrap().labels, vec![0, 0, 1, 1, 2, 2]);
        a.bank.check(&a.catalog, 4).unwrap();
    }
}
