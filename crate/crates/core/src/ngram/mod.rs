//! Kneser–Ney n-gram language models and exchange word clustering.

mod cluster;
mod kn;

use thiserror::Error;

pub use cluster::{class_token, cluster_exchange, ClassMap, Clustering};
pub use kn::{KnModel, LmScore, BOS, EOS, LM_VERSION, UNK};

#[derive(Debug, Error)]
pub enum NgramError {
    #[error("empty training corpus")]
    EmptyCorpus,
    #[error("{0}")]
    Contract(String),
    #[error("language model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
