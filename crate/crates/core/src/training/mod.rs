//! Contrastive training of the encoder on seed alignments: the multi-surface objective,
//! AdamW with warm-up and cosine decay, validation-based early stopping and the optional
//! second stage on mutual-nearest-neighbour pseudo-labels.

mod augment;
mod loss;
mod optim;
mod task;
mod trainer;

use serde::Serialize;

use crate::error::{Error, Result};

pub use augment::{iterative_augment, mutual_nearest_neighbors};
pub use loss::{
    alignment_probability, batch_probabilities, contrastive_loss_tape, energy_tape, pair_loss, probabilities_tape,
    total_loss_tape, LossBreakdown, LossConfig, LossTerms,
};
pub use optim::{AdamW, Schedule};
pub use task::AlignmentTask;
pub use trainer::{total_loss, train, write_history_csv, write_history_csv_file, HistoryRow, TrainResult, Validation};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainConfig {
    pub loss: LossConfig,
    /// Pairs per batch, clipped to the number of training pairs.
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub warmup_fraction: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    /// Batches whose gradients are summed before one optimizer step.
    pub grad_accumulation: usize,
    /// Share of the training seeds held out for validation.
    pub validation_fraction: f64,
    /// Stop after this many epochs without a better validation Hits@1.
    pub patience: Option<usize>,
    pub iterative: bool,
    pub extra_epochs: usize,
    /// Minimum similarity for a pseudo-label pair.
    pub mutual_floor: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossConfig::default(),
            batch_size: 3500,
            epochs: 500,
            learning_rate: 5e-3,
            warmup_fraction: 0.15,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 1e-2,
            grad_accumulation: 1,
            validation_fraction: 0.1,
            patience: None,
            iterative: false,
            extra_epochs: 500,
            mutual_floor: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.grad_accumulation == 0 {
            return bad("grad_accumulation must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return bad("warmup_fraction must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam moments must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if self.patience == Some(0) {
            return bad("patience must be positive when set");
        }
        Ok(())
    }
}
