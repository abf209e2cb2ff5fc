//! N-best re-ranking: refill candidates into the query, score them with the
//! reader probability and three n-gram features, tune weights with k-best
//! MIRA and pick the best weighted candidate.

mod features;
mod file;
mod mira;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ngram::NgramError;

pub use features::{refill, score_features, LanguageModels};
pub use file::{read_nbest, write_nbest};
pub use mira::{mira_tune, MiraConfig, MiraResult};

pub const FEATURE_NAMES: [&str; 4] = ["nn", "global_lm", "local_lm", "class_lm"];

#[derive(Debug, Error)]
pub enum RerankError {
    #[error("{0}")]
    Contract(String),
    #[error("nothing to tune: no list contains the gold candidate")]
    NothingToTune,
    #[error("feature ratio undefined: local LM weight is zero")]
    UndefinedRatio,
    #[error("n-best file line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error(transparent)]
    Ngram(#[from] NgramError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NBestEntry {
    pub sample_id: String,
    pub candidate: String,
    /// The query with the blank replaced by `candidate`.
    pub sentence: Vec<String>,
    /// `nn`, `global_lm`, `local_lm`, `class_lm`, all higher-is-better.
    pub features: [f64; 4],
    pub is_gold: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureWeights {
    pub nn: f64,
    pub global_lm: f64,
    pub local_lm: f64,
    pub class_lm: f64,
}

impl Default for FeatureWeights {
    fn default() -> Self {
        Self::from_array([1.0, 0.0, 0.0, 0.0])
    }
}

impl FeatureWeights {
    pub fn from_array(w: [f64; 4]) -> Self {
        Self { nn: w[0], global_lm: w[1], local_lm: w[2], class_lm: w[3] }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.nn, self.global_lm, self.local_lm, self.class_lm]
    }

    pub fn score(&self, features: &[f64; 4]) -> f64 {
        self.to_array().iter().zip(features).map(|(w, f)| w * f).sum()
    }

    /// Divided by the sum of absolute values; unchanged if all are zero.
    pub fn l1_normalized(&self) -> Self {
        let norm: f64 = self.to_array().iter().map(|w| w.abs()).sum();
        if norm == 0.0 {
            *self
        } else {
            Self::from_array(self.to_array().map(|w| w / norm))
        }
    }
}

/// `(w_global + w_class) / w_local`.
pub fn feature_ratio(weights: &FeatureWeights) -> Result<f64, RerankError> {
    if weights.local_lm == 0.0 {
        return Err(RerankError::UndefinedRatio);
    }
    Ok((weights.global_lm + weights.class_lm) / weights.local_lm)
}

/// Index of the entry with the highest weighted score. Ties go to the
/// higher reader probability, then to the earlier entry.
pub fn rerank(entries: &[NBestEntry], weights: &FeatureWeights) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, e) in entries.iter().enumerate() {
        let s = weights.score(&e.features);
        best = match best {
            Some((j, b)) if b > s || (b == s && entries[j].features[0] >= e.features[0]) => Some((j, b)),
            _ => Some((i, s)),
        };
    }
    best.map(|(i, _)| i)
}

/// Fraction of lists whose re-ranked choice is gold. Empty lists and lists
/// without gold count as misses.
pub fn rerank_accuracy(lists: &[Vec<NBestEntry>], weights: &FeatureWeights) -> f64 {
    if lists.is_empty() {
        return 0.0;
    }
    let hits = lists.iter().filter(|l| rerank(l, weights).is_some_and(|i| l[i].is_gold)).count();
    hits as f64 / lists.len() as f64
}
