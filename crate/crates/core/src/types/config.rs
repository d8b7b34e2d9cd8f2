use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which evaluation protocol a run belongs to. Only affects the default
/// epoch count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Benchmark {
    #[default]
    FewShot,
    BaseToNovel,
}

impl Benchmark {
    pub fn default_epochs(self) -> usize {
        match self {
            Benchmark::FewShot => 100,
            Benchmark::BaseToNovel => 50,
        }
    }
}

/// Hyperparameters of one prompt-learning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Weight of the ensemble-consistency term.
    pub lambda1: f64,
    /// Weight of the selective distillation term.
    pub lambda2: f64,
    /// Modified z-score threshold for keeping a prompt in the teacher.
    pub zeta_s: f64,
    /// Logit scale used only for prompt scoring.
    pub beta: f64,
    /// Softmax temperature shared by student and teacher.
    pub tau: f64,
    pub context_length: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// `None` means the benchmark default (100 few-shot, 50 base-to-novel).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    pub shots: usize,
    pub seed: u64,
    pub context_init_text: String,
    pub n_prompts: usize,
    pub benchmark: Benchmark,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.5,
            lambda2: 0.5,
            zeta_s: 1.5,
            beta: 100.0,
            tau: 0.01,
            context_length: 4,
            learning_rate: 0.0025,
            batch_size: 4,
            epochs: None,
            shots: 16,
            seed: 1,
            context_init_text: "a photo of a".to_string(),
            n_prompts: 50,
            benchmark: Benchmark::FewShot,
        }
    }
}

impl RunConfig {
    pub const KEYS: &'static [&'static str] = &[
        "lambda1",
        "lambda2",
        "zeta_s",
        "beta",
        "tau",
        "context_length",
        "learning_rate",
        "batch_size",
        "epochs",
        "shots",
        "seed",
        "context_init_text",
        "n_prompts",
        "benchmark",
    ];

    pub fn epochs(&self) -> usize {
        self.epochs.unwrap_or_else(|| self.benchmark.default_epochs())
    }

    pub fn validate(&self) -> Result<()> {
        let reals = [
            ("lambda1", self.lambda1, true),
            ("lambda2", self.lambda2, true),
            ("zeta_s", self.zeta_s, false),
            ("beta", self.beta, false),
            ("tau", self.tau, false),
            ("learning_rate", self.learning_rate, false),
        ];
        for (key, value, zero_ok) in reals {
            let ok = value.is_finite() && if zero_ok { value >= 0.0 } else { value > 0.0 };
            if !ok {
                let bound = if zero_ok { ">= 0" } else { "> 0" };
                return Err(Error::Config(format!("`{key}` must be {bound}, got {value}")));
            }
        }
        let counts = [
            ("context_length", self.context_length),
            ("batch_size", self.batch_size),
            ("shots", self.shots),
            ("n_prompts", self.n_prompts),
        ];
        for (key, value) in counts {
            if value == 0 {
                return Err(Error::Config(format!("`{key}` must be positive")));
            }
        }
        Ok(())
    }
}
