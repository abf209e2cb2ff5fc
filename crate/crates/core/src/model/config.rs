use serde::{Deserialize, Serialize};

use crate::autodiff::AdamConfig;

use super::ModelError;

/// How the per-query-word document attentions are merged into one.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeStrategy {
    /// Weighted by the averaged document-to-query attention.
    #[default]
    AttentionOverAttention,
    /// Plain average of the document attentions (sum then renormalise).
    Average,
    /// One attention from the final query states, no merging at all.
    Single,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    /// One-way GRU size; encodings are twice this wide.
    pub hidden_dim: usize,
    pub dropout_rate: f64,
    /// Apply dropout to GRU outputs as well as embeddings.
    pub dropout_gru_outputs: bool,
    pub l2_coeff: f64,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub clip_threshold: f64,
    pub batch_size: usize,
    pub init_range: f64,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub merge: MergeStrategy,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 384,
            hidden_dim: 256,
            dropout_rate: 0.1,
            dropout_gru_outputs: false,
            l2_coeff: 0.0001,
            learning_rate: 0.001,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            clip_threshold: 5.0,
            batch_size: 32,
            init_range: 0.05,
            epochs: 10,
            patience: 3,
            merge: MergeStrategy::AttentionOverAttention,
            seed: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |what: &str| Err(ModelError::Config(what.to_owned()));
        if self.embed_dim == 0 || self.hidden_dim == 0 {
            return bad("embed_dim and hidden_dim must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1)");
        }
        if self.l2_coeff < 0.0 || self.learning_rate < 0.0 {
            return bad("l2_coeff and learning_rate must be non-negative");
        }
        if !(self.clip_threshold > 0.0) {
            return bad("clip_threshold must be positive");
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be positive");
        }
        if !(self.init_range > 0.0) {
            return bad("init_range must be positive");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_epsilon > 0.0) {
            return bad("adam betas must lie in [0, 1) and epsilon must be positive");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { learning_rate: self.learning_rate, beta1: self.adam_beta1, beta2: self.adam_beta2, epsilon: self.adam_epsilon }
    }
}
