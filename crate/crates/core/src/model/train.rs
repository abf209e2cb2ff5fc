use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{clip_global_norm, global_norm, AdamState, Axis, Tape, Tensor, Var};
use crate::corpus::{encode_ordered, Batch, ClozeSample, Vocabulary};

use super::forward::{attend, mix, PassOptions};
use super::{init_params, ModelConfig, ModelError, ModelParams, Reader};

/// Guards the log against an exact-zero probability.
pub const LOG_EPS: f64 = 1e-12;

/// `-ln(p + eps)` for one sample.
pub fn nll(p_answer: f64) -> f64 {
    -(p_answer + LOG_EPS).ln()
}

/// Mean negative log-likelihood plus `l2 * |W_e|^2`.
pub fn batch_loss(p_answers: &[f64], l2_coeff: f64, embedding: &Tensor) -> f64 {
    let mean = p_answers.iter().map(|p| nll(*p)).sum::<f64>() / p_answers.len() as f64;
    mean + l2_coeff * embedding.squared_norm()
}

/// Records `-ln(sum of s over answer positions + eps)`. `None` when the
/// answer does not occur in the document.
pub fn sample_nll(tape: &mut Tape, s: Var, doc_ids: &[usize], answer: usize) -> Result<Option<Var>, ModelError> {
    let n = tape.value(s).rows();
    let indicator: Vec<f64> = doc_ids[..n].iter().map(|&id| if id == answer { 1.0 } else { 0.0 }).collect();
    if indicator.iter().all(|x| *x == 0.0) {
        return Ok(None);
    }
    let ind = tape.constant(Tensor::row_vector(indicator)?);
    let p = tape.matmul(ind, s)?;
    Ok(Some(tape.neg_log(p, 0, LOG_EPS)?))
}

/// Records the mean loss of a batch. Returns the loss handle (if any sample
/// counted), the number of skipped samples and how many rows put the most
/// mass on the answer.
pub fn batch_objective(
    tape: &mut Tape,
    params: &ModelParams,
    config: &ModelConfig,
    batch: &Batch,
    opts: PassOptions,
) -> Result<(Option<Var>, usize, usize), ModelError> {
    let attention = attend(tape, params, config, batch, opts)?;
    let mut losses = Vec::with_capacity(batch.size());
    let mut hits = 0;
    for (b, v) in attention.iter().enumerate() {
        let s = tape.value(v.s).data().to_vec();
        if best_id(&s, &batch.doc_ids[b]) == batch.answer_ids[b] {
            hits += 1;
        }
        if let Some(l) = sample_nll(tape, v.s, &batch.doc_ids[b], batch.answer_ids[b])? {
            losses.push(l);
        }
    }
    let skipped = batch.size() - losses.len();
    if losses.is_empty() {
        return Ok((None, skipped, hits));
    }
    let stacked = tape.concat(&losses, Axis::Rows)?;
    let total = tape.sum(stacked);
    let mean = tape.scale(total, 1.0 / losses.len() as f64);
    Ok((Some(mean), skipped, hits))
}

/// Vocabulary-space argmax of the summed attention, first occurrence wins.
fn best_id(s: &[f64], ids: &[usize]) -> usize {
    let mut order: Vec<usize> = Vec::new();
    let mut mass: std::collections::HashMap<usize, f64> = std::collections::HashMap::new();
    for (&id, &p) in ids.iter().zip(s) {
        *mass.entry(id).or_insert_with(|| {
            order.push(id);
            0.0
        }) += p;
    }
    let mut best = order[0];
    for &id in &order[1..] {
        if mass[&id] > mass[&best] {
            best = id;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Accuracy of the training-mode forward passes (dropout on).
    pub train_accuracy: f64,
    pub valid_accuracy: Option<f64>,
    pub max_grad_norm: f64,
    pub skipped_answer_absent: usize,
    pub dropped_unk_answers: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: Option<usize>,
    pub best_valid_accuracy: Option<f64>,
}

/// Owns the parameters and optimiser state during training.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ModelParams,
    pub adam: AdamState,
    /// Completed epochs.
    pub epoch: usize,
}

impl Trainer {
    pub fn new(config: ModelConfig, vocab: Vocabulary) -> Result<Self, ModelError> {
        config.validate()?;
        let params = init_params(&config, vocab.len());
        let adam = AdamState::new(&params.tensors(), config.adam());
        Ok(Self { config, vocab, params, adam, epoch: 0 })
    }

    /// Resumes from saved state.
    pub fn resume(config: ModelConfig, vocab: Vocabulary, params: ModelParams, adam: AdamState, epoch: usize) -> Result<Self, ModelError> {
        config.validate()?;
        if params.vocab_size() != vocab.len() {
            return Err(ModelError::Contract(format!("{} embedding rows for a vocabulary of {}", params.vocab_size(), vocab.len())));
        }
        Ok(Self { config, vocab, params, adam, epoch })
    }

    pub fn reader(&self) -> Reader {
        Reader { config: self.config.clone(), vocab: self.vocab.clone(), params: self.params.clone() }
    }

    /// One pass over `samples` in a seeded shuffled order.
    pub fn train_epoch(&mut self, samples: &[ClozeSample]) -> Result<EpochStats, ModelError> {
        let epoch = self.epoch + 1;
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(self.config.seed, epoch as u64)));
        let encoded = encode_ordered(samples, &order, &self.vocab, self.config.batch_size);
        let (mut loss_sum, mut counted, mut hits, mut seen, mut skipped) = (0.0, 0usize, 0usize, 0usize, 0usize);
        let mut max_norm: f64 = 0.0;
        for batch in &encoded.batches {
            let step = self.adam.step;
            let opts = PassOptions { train: true, trainable: true, dropout_seed: mix(self.config.seed ^ 0xD0, step) };
            let mut tape = Tape::new();
            let (loss, skip, hit) = batch_objective(&mut tape, &self.params, &self.config, batch, opts)?;
            skipped += skip;
            hits += hit;
            seen += batch.size();
            let Some(loss) = loss else { continue };
            let grads = tape.backward(loss)?;
            self.params.zero_grad();
            tape.accumulate_into(&grads, &mut self.params.tensors_mut())?;
            let l2 = self.config.l2_coeff;
            let emb = &mut self.params.embedding;
            let value = tape.value(loss).item() + l2 * emb.value.squared_norm();
            for (g, w) in emb.grad.data_mut().iter_mut().zip(emb.value.data()) {
                *g += 2.0 * l2 * w;
            }
            let norm = global_norm(self.params.tensors().into_iter().map(|p| &p.grad));
            if !value.is_finite() || !norm.is_finite() {
                return Err(ModelError::Numeric { epoch, loss: value, grad_norm: norm, sample_ids: batch.sample_ids.clone() });
            }
            max_norm = max_norm.max(norm);
            let mut grads: Vec<&mut Tensor> = self.params.tensors_mut().into_iter().map(|p| &mut p.grad).collect();
            clip_global_norm(&mut grads, self.config.clip_threshold);
            self.adam.step(&mut self.params.tensors_mut())?;
            let k = batch.size() - skip;
            loss_sum += value * k as f64;
            counted += k;
            debug!("epoch {epoch} step {} loss {value:.6} grad norm {norm:.4}", self.adam.step);
        }
        if skipped > 0 {
            warn!("epoch {epoch}: skipped {skipped} samples whose answer is absent from the document");
        }
        self.epoch = epoch;
        Ok(EpochStats {
            epoch,
            mean_loss: if counted == 0 { f64::NAN } else { loss_sum / counted as f64 },
            train_accuracy: if seen == 0 { 0.0 } else { hits as f64 / seen as f64 },
            valid_accuracy: None,
            max_grad_norm: max_norm,
            skipped_answer_absent: skipped,
            dropped_unk_answers: encoded.dropped_unk_answers,
        })
    }

    /// Trains for up to `config.epochs` more epochs, keeping the parameters
    /// with the best validation accuracy and stopping after `patience`
    /// epochs without improvement. Without validation data the final
    /// parameters are kept.
    pub fn fit(&mut self, train: &[ClozeSample], valid: &[ClozeSample]) -> Result<(Reader, TrainingLog), ModelError> {
        let mut log = TrainingLog::default();
        let mut best: Option<Reader> = None;
        let mut since_best = 0;
        for _ in 0..self.config.epochs {
            let mut stats = self.train_epoch(train)?;
            if !valid.is_empty() {
                let acc = accuracy(&self.reader(), valid)?;
                stats.valid_accuracy = Some(acc);
                if log.best_valid_accuracy.is_none_or(|b| acc > b) {
                    log.best_valid_accuracy = Some(acc);
                    log.best_epoch = Some(stats.epoch);
                    best = Some(self.reader());
                    since_best = 0;
                } else {
                    since_best += 1;
                }
            }
            info!(
                "epoch {} loss {:.4} train acc {:.4} valid acc {}",
                stats.epoch,
                stats.mean_loss,
                stats.train_accuracy,
                stats.valid_accuracy.map_or("-".into(), |a| format!("{a:.4}"))
            );
            log.epochs.push(stats);
            if !valid.is_empty() && since_best >= self.config.patience {
                info!("no validation improvement for {since_best} epochs, stopping");
                break;
            }
        }
        let best = best.unwrap_or_else(|| {
            log.best_epoch = Some(self.epoch);
            self.reader()
        });
        Ok((best, log))
    }
}

/// Fraction of samples whose top prediction equals the answer.
pub fn accuracy(reader: &Reader, samples: &[ClozeSample]) -> Result<f64, ModelError> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let preds = reader.predict_many(samples, false)?;
    let correct = preds.iter().zip(samples).filter(|(p, s)| p.best() == s.answer).count();
    Ok(correct as f64 / samples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_examples() {
        assert!(nll(1.0).abs() < 1e-11);
        assert!((nll(0.5) - 2f64.ln()).abs() < 1e-11);
        let e = Tensor::zeros(2, 2);
        assert!((batch_loss(&[1.0, (-1f64).exp()], 0.0001, &e) - 0.5).abs() < 1e-11);
        let e = Tensor::filled(2, 2, 1.0);
        assert!((batch_loss(&[0.5], 0.0001, &e) - (2f64.ln() + 0.0004)).abs() < 1e-11);
    }

    #[test]
    fn best_id_prefers_first() {
        assert_eq!(best_id(&[0.25, 0.25, 0.5], &[7, 8, 7]), 7);
        assert_eq!(best_id(&[0.5, 0.5], &[8, 7]), 8);
    }
}
