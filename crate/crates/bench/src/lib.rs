//! Fixtures shared by the benchmarks.

use aoa_core::corpus::{ClozeSample, Vocabulary};
use aoa_core::model::ModelConfig;
use aoa_core::synthetic::distractor_task;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Distractor-task samples with their vocabulary.
pub fn reader_data(samples: usize) -> (Vec<ClozeSample>, Vocabulary) {
    let data = distractor_task(samples, 7);
    let vocab = Vocabulary::build(&data, 1);
    (data, vocab)
}

pub fn small_config(batch_size: usize) -> ModelConfig {
    ModelConfig { embed_dim: 32, hidden_dim: 32, batch_size, ..ModelConfig::default() }
}

/// Zipf-ish random sentences over `types` words, about `tokens` tokens in total.
pub fn text(tokens: usize, types: usize, seed: u64) -> Vec<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut n = 0;
    while n < tokens {
        let len = rng.random_range(5..20);
        out.push((0..len).map(|_| format!("w{}", rng.random_range(0..types).min(rng.random_range(0..types)))).collect::<Vec<_>>());
        n += len;
    }
    out
}
