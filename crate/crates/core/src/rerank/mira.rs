use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{rerank, FeatureWeights, NBestEntry, RerankError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiraConfig {
    /// Cap on the step size.
    pub c: f64,
    pub epochs: usize,
    /// Only the first `k` entries of each list are used.
    pub k: usize,
    pub seed: u64,
}

impl Default for MiraConfig {
    fn default() -> Self {
        Self { c: 0.01, epochs: 15, k: 5, seed: 1 }
    }
}

impl MiraConfig {
    pub fn validate(&self) -> Result<(), RerankError> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(RerankError::Contract(format!("MIRA C must be positive, got {}", self.c)));
        }
        if self.epochs == 0 || self.k == 0 {
            return Err(RerankError::Contract("MIRA epochs and k must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiraResult {
    /// Average of the weight vector over every visit of a tunable list.
    pub weights: FeatureWeights,
    pub last: FeatureWeights,
    pub updates: usize,
    /// Lists without a gold entry; they never cause updates.
    pub skipped_no_gold: usize,
}

/// K-best MIRA with hope/fear pairs. A list updates the weights only when
/// its current choice is wrong (0/1 loss). The step moves the best-scoring
/// gold entry (hope) above the best-scoring wrong entry (fear) by a margin
/// of 1, capped at `c`. Starts from the reader-only weights `(1, 0, 0, 0)`.
pub fn mira_tune(lists: &[Vec<NBestEntry>], config: &MiraConfig) -> Result<MiraResult, RerankError> {
    config.validate()?;
    let lists: Vec<&[NBestEntry]> = lists.iter().map(|l| &l[..l.len().min(config.k)]).collect();
    let mut usable: Vec<usize> = (0..lists.len()).filter(|&i| lists[i].iter().any(|e| e.is_gold)).collect();
    let skipped_no_gold = lists.len() - usable.len();
    if usable.is_empty() {
        return Err(RerankError::NothingToTune);
    }
    let mut w = FeatureWeights::default().to_array();
    let mut sum = [0.0; 4];
    let mut visits = 0usize;
    let mut updates = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for _ in 0..config.epochs {
        usable.shuffle(&mut rng);
        for &i in &usable {
            let list = lists[i];
            let weights = FeatureWeights::from_array(w);
            let chosen = rerank(list, &weights).expect("tunable lists are non-empty");
            if !list[chosen].is_gold {
                let best = |gold: bool| {
                    list.iter()
                        .filter(|e| e.is_gold == gold)
                        .map(|e| (e, weights.score(&e.features)))
                        .fold(None, |acc: Option<(&NBestEntry, f64)>, x| match acc {
                            Some(a) if a.1 >= x.1 => Some(a),
                            _ => Some(x),
                        })
                        .expect("list has both gold and non-gold entries")
                };
                let (hope, hope_score) = best(true);
                let (fear, fear_score) = best(false);
                let delta: Vec<f64> = hope.features.iter().zip(&fear.features).map(|(h, f)| h - f).collect();
                let norm_sq: f64 = delta.iter().map(|d| d * d).sum();
                let hinge = 1.0 + fear_score - hope_score;
                if norm_sq > 0.0 && hinge > 0.0 {
                    let tau = config.c.min(hinge / norm_sq);
                    for (wk, d) in w.iter_mut().zip(&delta) {
                        *wk += tau * d;
                    }
                    updates += 1;
                }
            }
            for (s, wk) in sum.iter_mut().zip(&w) {
                *s += wk;
            }
            visits += 1;
        }
    }
    Ok(MiraResult {
        weights: FeatureWeights::from_array(sum.map(|s| s / visits as f64)),
        last: FeatureWeights::from_array(w),
        updates,
        skipped_no_gold,
    })
}
