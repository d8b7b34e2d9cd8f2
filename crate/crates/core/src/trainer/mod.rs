//! Few-shot support sampling, the SGD loop over the context, checkpoints.
//!
//! The context is stored at `f32` precision: the initial context and every
//! SGD step are rounded to `f32`, while all loss and gradient arithmetic runs
//! in `f64`. Checkpoints therefore capture the state exactly and a resumed
//! run reproduces an uninterrupted one bit for bit.

mod checkpoint;
mod sampling;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use sampling::{sample_few_shot, FewShotSupportSet};

use crate::backbone::{init_context, ContextVectors, TextEncoder};
use crate::ensemble::Ensembles;
use crate::error::{Error, Result};
use crate::eval::accuracy;
use crate::linalg::Matrix;
use crate::objective::{predict, Batch, LossBreakdown, LossWeights, Objective};
use crate::types::RunConfig;

/// Mutable learning state. The ensembles live in the [`Trainer`] and never
/// change.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub ctx: ContextVectors,
    /// Number of completed epochs.
    pub epoch: usize,
    pub rng: ChaCha8Rng,
}

/// Full-support loss and accuracy after `epoch` completed epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
    /// Percent.
    pub train_accuracy: f64,
}

impl EpochRecord {
    /// `epoch<TAB>ce<TAB>sccm<TAB>kdsp<TAB>total<TAB>train_acc`
    pub fn log_line(&self) -> String {
        format!(
            "{}\t{:.8}\t{:.8}\t{:.8}\t{:.8}\t{:.2}",
            self.epoch, self.loss.ce, self.loss.sccm, self.loss.kdsp, self.loss.total, self.train_accuracy
        )
    }
}

pub fn render_log(records: &[EpochRecord], header: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(h) = header {
        let _ = writeln!(out, "# {h}");
    }
    for r in records {
        out.push_str(&r.log_line());
        out.push('\n');
    }
    out
}

fn round_to_f32(m: &mut Matrix) {
    for v in m.as_mut_slice() {
        *v = f64::from(*v as f32);
    }
}

pub struct Trainer<'a> {
    encoder: &'a dyn TextEncoder,
    objective: Objective<'a>,
    support: &'a Batch,
    config: &'a RunConfig,
}

impl<'a> Trainer<'a> {
    pub fn new(
        encoder: &'a dyn TextEncoder,
        class_names: Vec<String>,
        ensembles: &'a Ensembles,
        support: &'a Batch,
        config: &'a RunConfig,
    ) -> Result<Self> {
        config.validate()?;
        if support.is_empty() {
            return Err(Error::Data("support set is empty".into()));
        }
        let weights = LossWeights {
            lambda1: config.lambda1,
            lambda2: config.lambda2,
        };
        let objective = Objective::new(encoder, class_names, &ensembles.general, &ensembles.selected, weights)?;
        Ok(Self {
            encoder,
            objective,
            support,
            config,
        })
    }

    pub fn objective(&self) -> &Objective<'a> {
        &self.objective
    }

    /// Context initialized from the configured text, rounded to `f32`, and a
    /// fresh run RNG.
    pub fn initial_state(&self) -> Result<TrainState> {
        let mut ctx = init_context(
            self.encoder,
            &self.config.context_init_text,
            self.config.context_length,
            self.config.seed,
        )?;
        round_to_f32(ctx.vectors_mut());
        Ok(TrainState {
            ctx,
            epoch: 0,
            rng: ChaCha8Rng::seed_from_u64(self.config.seed),
        })
    }

    pub fn record(&self, state: &TrainState) -> Result<EpochRecord> {
        let eval = self.objective.evaluate(&state.ctx, self.support)?;
        if !eval.loss.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss at epoch {}: {:?}",
                state.epoch, eval.loss
            )));
        }
        Ok(EpochRecord {
            epoch: state.epoch,
            loss: eval.loss,
            train_accuracy: accuracy(&predict(&eval.logits), &self.support.labels)?,
        })
    }

    /// One pass of shuffled mini-batch SGD; the last partial batch is kept.
    pub fn run_epoch(&self, state: &mut TrainState) -> Result<()> {
        let mut order: Vec<usize> = (0..self.support.len()).collect();
        order.shuffle(&mut state.rng);
        let lr = self.config.learning_rate;
        for (b, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let batch = self.support.select(chunk);
            let (eval, grad) = self.objective.evaluate_with_gradient(&state.ctx, &batch)?;
            if !eval.loss.is_finite() || grad.as_slice().iter().any(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite loss or gradient at epoch {}, batch {b}: {:?}; ctx norm {:e}",
                    state.epoch + 1,
                    eval.loss,
                    crate::linalg::norm(state.ctx.vectors().as_slice()),
                )));
            }
            let ctx = state.ctx.vectors_mut();
            for (v, g) in ctx.as_mut_slice().iter_mut().zip(grad.as_slice()) {
                *v -= lr * g;
            }
            round_to_f32(ctx);
            if ctx.as_slice().iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "context diverged at epoch {}, batch {b} (loss before step {:?})",
                    state.epoch + 1,
                    eval.loss
                )));
            }
        }
        state.epoch += 1;
        Ok(())
    }

    /// Trains from `state` until `until` epochs are complete, recording the
    /// starting point (when at epoch 0) and every finished epoch.
    pub fn run_until(&self, mut state: TrainState, until: usize) -> Result<(TrainState, Vec<EpochRecord>)> {
        let mut log = Vec::new();
        if state.epoch == 0 {
            log.push(self.record(&state)?);
        }
        while state.epoch < until {
            self.run_epoch(&mut state)?;
            let rec = self.record(&state)?;
            log::debug!("{}", rec.log_line());
            log.push(rec);
        }
        Ok((state, log))
    }

    pub fn run(&self, state: TrainState) -> Result<(TrainState, Vec<EpochRecord>)> {
        self.run_until(state, self.config.epochs())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub log: Vec<EpochRecord>,
}

/// Trains a fresh context for `config.epochs()` epochs.
pub fn train_run(
    encoder: &dyn TextEncoder,
    class_names: Vec<String>,
    ensembles: &Ensembles,
    support: &Batch,
    config: &RunConfig,
) -> Result<TrainOutcome> {
    let trainer = Trainer::new(encoder, class_names, ensembles, support, config)?;
    let (state, log) = trainer.run(trainer.initial_state()?)?;
    Ok(TrainOutcome { state, log })
}
