//! Fixtures shared by the benchmarks.

use medcoop::backbone::encode_text_bank;
use medcoop::synthetic::{SyntheticTask, TaskSpec};
use medcoop::trainer::sample_few_shot;
use medcoop::types::{ClassCatalog, EmbeddingMatrix};
use medcoop::{build_ensembles, Batch, ContextVectors, Ensembles, RunConfig, SyntheticTextEncoder, Trainer};

pub struct Fixture {
    pub encoder: SyntheticTextEncoder,
    pub catalog: ClassCatalog,
    pub names: Vec<String>,
    pub banks: Vec<EmbeddingMatrix>,
    pub support: Batch,
    pub ensembles: Ensembles,
    pub config: RunConfig,
}

impl Fixture {
    /// `classes` classes, `n_prompts` prompts each, 16 shots, backbone of
    /// `token_width` -> `dim`.
    pub fn new(classes: usize, n_prompts: usize, token_width: usize, dim: usize) -> Self {
        let encoder = SyntheticTextEncoder::new(0, token_width, dim, 0.01).expect("valid backbone");
        let spec = TaskSpec {
            classes,
            train_per_class: 16,
            test_per_class: 1,
            n_prompts,
            ..TaskSpec::default()
        };
        let task = SyntheticTask::generate(&encoder, &spec).expect("valid task");
        let config = RunConfig {
            epochs: Some(1),
            ..RunConfig::default()
        };
        let vision = task.vision().expect("vision cache");
        let support = sample_few_shot(&task.manifest, &task.catalog, 16, config.seed)
            .and_then(|s| s.to_batch(&vision))
            .expect("support set");
        let banks = encode_text_bank(&encoder, &task.bank, &task.catalog).expect("bank encodes");
        let ensembles =
            build_ensembles(&banks, &support.images, &task.catalog, config.beta, config.zeta_s).expect("ensembles");
        Self {
            encoder,
            names: task.catalog.names().map(str::to_string).collect(),
            catalog: task.catalog,
            banks,
            support,
            ensembles,
            config,
        }
    }

    pub fn trainer(&self) -> Trainer<'_> {
        Trainer::new(
            &self.encoder,
            self.names.clone(),
            &self.ensembles,
            &self.support,
            &self.config,
        )
        .expect("trainer")
    }

    pub fn context(&self) -> ContextVectors {
        self.trainer().initial_state().expect("initial context").ctx
    }
}
