//! Few-shot prompt learning for frozen vision-language encoders.
//!
//! A small set of context vectors is learned in front of every class name.
//! Besides cross-entropy, the objective pulls the learned class embeddings
//! towards the mean of an LLM-generated prompt bank and distills from a
//! teacher built from the bank after outlier prompts (by median absolute
//! deviation of their image affinity) are dropped.

pub mod backbone;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod objective;
pub mod prompt_gen;
pub mod synthetic;
pub mod trainer;
pub mod types;

pub use backbone::{CachedVisionSource, ContextVectors, SyntheticTextEncoder, SyntheticVisionEncoder, TextEncoder};
pub use ensemble::{build_ensembles, Ensembles, PromptScoreReport};
pub use error::{Category, Error, Result};
pub use eval::{DatasetReport, EvalReport, SeedResult};
pub use linalg::Matrix;
pub use objective::{Batch, LossBreakdown, LossWeights, Objective};
pub use trainer::{train_run, EpochRecord, FewShotSupportSet, TrainOutcome, TrainState, Trainer};
pub use types::*;
