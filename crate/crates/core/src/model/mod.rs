//! The attention-over-attention reader: bi-GRU encoders, pairwise matching,
//! the two attention axes, sum attention over word types, training and
//! ensembles.

mod checkpoint;
mod config;
mod forward;
mod params;
mod predict;
mod train;

use thiserror::Error;

use crate::autodiff::AutodiffError;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use config::{MergeStrategy, ModelConfig};
pub use forward::{
    attend, attention_over_attention, attention_over_attention_on, average_attention_on, encode, matching_matrix,
    single_attention_on, AttentionTrace, AttentionVars, Encodings, PassOptions,
};
pub use params::{init_params, BiGru, GruParams, ModelParams};
pub use predict::{ensemble_predict, ensemble_predict_many, n_best, rank_prediction, sum_attention, word_probabilities, Prediction, Reader};
pub use train::{accuracy, batch_loss, batch_objective, nll, sample_nll, EpochStats, Trainer, TrainingLog, LOG_EPS};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("{0}")]
    Contract(String),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("non-finite training state in epoch {epoch}: loss {loss}, gradient norm {grad_norm}, batch {sample_ids:?}")]
    Numeric { epoch: usize, loss: f64, grad_norm: f64, sample_ids: Vec<String> },
    #[error("checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
