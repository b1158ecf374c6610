//! Decoder-only transformer trained from scratch with a language-model loss
//! on the music tokens and an auxiliary difficulty classifier at END.

mod checkpoint;
mod decoder;
mod gradcheck;
mod model;
mod ops;
mod optim;
mod params;
mod train;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use checkpoint::{
    checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint, CheckpointMeta, LogSummary,
    CHECKPOINT_VERSION, MAGIC,
};
pub use decoder::Decoder;
pub use gradcheck::{grad_check, random_batch, GradCheckCase, GradCheckReport, FD_STEP, PARAM_NOISE, ZERO_GUARD};
pub use model::{
    loss_aux, loss_ce, loss_total, shift_targets, AuxOutput, BatchLoss, EvalStats, Example, ForwardOutput, Gradients,
    Transformer,
};
pub use optim::{clip_grad_norm, cosine_lr, AdamW};
pub use params::{aux_layout, lm_layout, ParamSet, Tensor};
pub use train::{train, train_with, EvalRecord, Scorer, TrainConfig, TrainOutcome};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("sequence of length {len} exceeds max_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("token id {0} is outside the vocabulary")]
    TokenOutOfRange(u32),
    #[error("sequence has no END token")]
    MissingEnd,
    #[error("sequence has no SEP token")]
    MissingSep,
    #[error("no target positions under the mask")]
    EmptyMask,
    #[error("empty training set")]
    EmptyDataset,
    #[error("non-finite loss at epoch {epoch}, step {step} (ce {ce}, aux {aux})")]
    NonFiniteLoss { epoch: usize, step: usize, ce: f64, aux: f64 },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("vocabulary hash mismatch: expected {expected}, checkpoint has {found}")]
    VocabMismatch { expected: String, found: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("i/o: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub num_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 0,
            d_model: 128,
            layers: 4,
            heads: 4,
            d_ff: 512,
            max_len: 1024,
            dropout: 0.1,
            num_classes: 3,
        }
    }
}

impl ModelConfig {
    /// Tiny configuration used by the gradient check.
    pub fn tiny(vocab_size: usize) -> Self {
        ModelConfig { vocab_size, d_model: 16, layers: 2, heads: 2, d_ff: 32, max_len: 12, dropout: 0.0, num_classes: 3 }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::InvalidConfig(m.to_string()));
        if self.vocab_size < 4 {
            return bad("vocab_size must cover the reserved tokens");
        }
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return bad("d_model must be a positive multiple of heads");
        }
        if self.d_ff == 0 || self.max_len == 0 || self.num_classes < 2 {
            return bad("d_ff, max_len must be positive and num_classes >= 2");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        Ok(())
    }
}
