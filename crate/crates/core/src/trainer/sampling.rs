use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::CachedVisionSource;
use crate::error::{Error, Result};
use crate::objective::Batch;
use crate::types::{ClassCatalog, DatasetManifest, Split};

/// `K` train items per class, class-major in catalog order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FewShotSupportSet {
    pub shots: usize,
    pub seed: u64,
    pub item_ids: Vec<String>,
    pub labels: Vec<usize>,
}

impl FewShotSupportSet {
    pub fn len(&self) -> usize {
        self.item_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.item_ids.is_empty()
    }

    /// Attaches image embeddings from a cache.
    pub fn to_batch(&self, images: &CachedVisionSource) -> Result<Batch> {
        Batch::new(images.encode(&self.item_ids)?, self.labels.clone())
    }
}

/// Draws `shots` train items per class without replacement. Deterministic
/// in `(seed, manifest order)`; within a class, the sampled items keep
/// manifest order.
pub fn sample_few_shot(
    manifest: &DatasetManifest,
    catalog: &ClassCatalog,
    shots: usize,
    seed: u64,
) -> Result<FewShotSupportSet> {
    if shots == 0 {
        return Err(Error::Config("shots must be positive".into()));
    }
    let mut per_class: Vec<Vec<&str>> = vec![Vec::new(); catalog.len()];
    for r in manifest.records_in(Split::Train) {
        let c = catalog
            .index_of(&r.class_name)
            .ok_or_else(|| Error::Data(format!("class `{}` not in catalog", r.class_name)))?;
        per_class[c].push(&r.item_id);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut item_ids = Vec::with_capacity(shots * catalog.len());
    let mut labels = Vec::with_capacity(shots * catalog.len());
    for (c, items) in per_class.iter().enumerate() {
        if items.len() < shots {
            return Err(Error::InsufficientItems {
                class: catalog.entries()[c].name.clone(),
                available: items.len(),
                requested: shots,
            });
        }
        let mut picked = index::sample(&mut rng, items.len(), shots).into_vec();
        picked.sort_unstable();
        for i in picked {
            item_ids.push(items[i].to_string());
            labels.push(c);
        }
    }
    Ok(FewShotSupportSet {
        shots,
        seed,
        item_ids,
        labels,
    })
}
