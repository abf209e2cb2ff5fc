use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::corpus::{encode_one_batch, ClozeSample, Vocabulary};

use super::forward::{attend, AttentionTrace, PassOptions};
use super::{ModelConfig, ModelError, ModelParams};

/// Ranked answer distribution for one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// Best first. Ties are ordered by first position in the document.
    pub ranked: Vec<(String, f64)>,
    /// No candidate occurs in the document, so the ranking is over
    /// document words instead.
    pub fallback: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<AttentionTrace>,
}

impl Prediction {
    pub fn best(&self) -> &str {
        &self.ranked[0].0
    }

    pub fn probability(&self, word: &str) -> f64 {
        self.ranked.iter().find(|(w, _)| w == word).map_or(0.0, |(_, p)| *p)
    }

    pub fn n_best(&self, n: usize) -> &[(String, f64)] {
        &self.ranked[..n.min(self.ranked.len())]
    }
}

/// `P(w) = sum of s_i over the positions where w occurs`, keyed by word in
/// order of first occurrence.
pub fn word_probabilities(s: &[f64], document: &[&str]) -> IndexMap<String, f64> {
    let mut probs = IndexMap::new();
    for (w, p) in document.iter().zip(s) {
        *probs.entry((*w).to_owned()).or_insert(0.0) += p;
    }
    probs
}

/// Ranks `probs` (as produced by [`word_probabilities`]), restricted to
/// `candidates` when any of them occurs in the document.
pub fn rank_prediction(probs: &IndexMap<String, f64>, candidates: &[String]) -> Result<Prediction, ModelError> {
    if probs.is_empty() {
        return Err(ModelError::Contract("cannot rank an empty document".into()));
    }
    let fallback = !candidates.is_empty() && !candidates.iter().any(|c| probs.contains_key(c));
    let mut keyed: Vec<(usize, &str, f64)> = if candidates.is_empty() || fallback {
        probs.iter().enumerate().map(|(i, (w, p))| (i, w.as_str(), *p)).collect()
    } else {
        let mut seen = std::collections::HashSet::new();
        candidates
            .iter()
            .filter(|c| seen.insert(c.as_str()))
            .map(|c| match probs.get_full(c) {
                Some((i, _, p)) => (i, c.as_str(), *p),
                None => (usize::MAX, c.as_str(), 0.0),
            })
            .collect()
    };
    keyed.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then_with(|| a.1.cmp(b.1)));
    Ok(Prediction { ranked: keyed.into_iter().map(|(_, w, p)| (w.to_owned(), p)).collect(), fallback, trace: None })
}

pub fn sum_attention(s: &[f64], document: &[&str], candidates: &[String]) -> Result<Prediction, ModelError> {
    if s.len() != document.len() {
        return Err(ModelError::Contract(format!("{} attention weights for {} document tokens", s.len(), document.len())));
    }
    rank_prediction(&word_probabilities(s, document), candidates)
}

/// A trained reader ready for inference.
#[derive(Clone, Debug, PartialEq)]
pub struct Reader {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ModelParams,
}

impl Reader {
    /// Attention over document positions for each sample.
    pub fn attention(&self, samples: &[ClozeSample], with_trace: bool) -> Result<Vec<(Vec<f64>, Option<AttentionTrace>)>, ModelError> {
        let mut out = Vec::with_capacity(samples.len());
        let indices: Vec<usize> = (0..samples.len()).collect();
        for chunk in indices.chunks(self.config.batch_size.max(1)) {
            let batch = encode_one_batch(samples, chunk, &self.vocab);
            let mut tape = Tape::new();
            let vars = attend(&mut tape, &self.params, &self.config, &batch, PassOptions::inference())?;
            for v in &vars {
                let trace = with_trace.then(|| AttentionTrace::from_vars(&tape, v));
                out.push((tape.value(v.s).data().to_vec(), trace));
            }
        }
        Ok(out)
    }

    pub fn word_probabilities(&self, samples: &[ClozeSample]) -> Result<Vec<IndexMap<String, f64>>, ModelError> {
        let att = self.attention(samples, false)?;
        Ok(samples.iter().zip(att).map(|(smp, (s, _))| word_probabilities(&s, &smp.document())).collect())
    }

    pub fn predict_many(&self, samples: &[ClozeSample], with_trace: bool) -> Result<Vec<Prediction>, ModelError> {
        let att = self.attention(samples, with_trace)?;
        samples
            .iter()
            .zip(att)
            .map(|(smp, (s, trace))| {
                let mut p = sum_attention(&s, &smp.document(), &smp.candidates)?;
                p.trace = trace;
                Ok(p)
            })
            .collect()
    }

    pub fn predict(&self, sample: &ClozeSample) -> Result<Prediction, ModelError> {
        let mut p = self.predict_many(std::slice::from_ref(sample), false)?;
        Ok(p.remove(0))
    }
}

/// Top `n` answers by probability, with the document-order tie rule.
pub fn n_best(reader: &Reader, sample: &ClozeSample, n: usize) -> Result<Vec<(String, f64)>, ModelError> {
    if n == 0 {
        return Err(ModelError::Contract("n-best size must be at least 1".into()));
    }
    Ok(reader.predict(sample)?.n_best(n).to_vec())
}

/// Averages per-word probabilities across models, then ranks.
pub fn ensemble_predict_many(readers: &[Reader], samples: &[ClozeSample]) -> Result<Vec<Prediction>, ModelError> {
    let first = readers.first().ok_or_else(|| ModelError::Contract("empty ensemble".into()))?;
    if readers.iter().any(|r| r.vocab != first.vocab) {
        return Err(ModelError::Contract("ensemble members use different vocabularies".into()));
    }
    let per_model: Vec<_> = readers.iter().map(|r| r.word_probabilities(samples)).collect::<Result<_, _>>()?;
    let k = readers.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, smp)| {
            let mut avg = per_model[0][i].clone();
            for (w, p) in avg.iter_mut() {
                let total: f64 = per_model.iter().map(|m| m[i][w]).sum();
                *p = total / k;
            }
            rank_prediction(&avg, &smp.candidates)
        })
        .collect()
}

pub fn ensemble_predict(readers: &[Reader], sample: &ClozeSample) -> Result<Prediction, ModelError> {
    Ok(ensemble_predict_many(readers, std::slice::from_ref(sample))?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn strings(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| (*s).to_owned()).collect()
    }

    #[test]
    fn two_position_sum() {
        let p = sum_attention(&[0.2, 0.3, 0.5], &["a", "b", "a"], &[]).unwrap();
        assert_eq!(p.best(), "a");
        assert!((p.probability("a") - 0.7).abs() < 1e-15);
        assert_eq!(p.probability("b"), 0.3);
    }

    #[test]
    fn candidates_absent_fall_back() {
        let p = sum_attention(&[0.6, 0.4], &["a", "b"], &strings(&["x", "y"])).unwrap();
        assert!(p.fallback);
        assert_eq!(p.best(), "a");
        let q = sum_attention(&[0.6, 0.4], &["a", "b"], &strings(&["x", "b"])).unwrap();
        assert!(!q.fallback);
        assert_eq!(q.ranked, vec![("b".to_owned(), 0.4), ("x".to_owned(), 0.0)]);
    }

    #[test]
    fn empty_document_is_an_error() {
        assert!(sum_attention(&[], &[], &strings(&["x"])).is_err());
    }

    #[test]
    fn ties_go_to_first_occurrence() {
        let p = sum_attention(&[0.25, 0.25, 0.25, 0.25], &["c", "b", "a", "d"], &strings(&["a", "b", "c"])).unwrap();
        assert_eq!(p.ranked.iter().map(|x| x.0.as_str()).collect::<Vec<_>>(), vec!["c", "b", "a"]);
    }

    #[test]
    fn random_document_against_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let words = ["w0", "w1", "w2", "w3", "w4", "w5"];
        let doc: Vec<&str> = (0..20).map(|_| words[rng.random_range(0..words.len())]).collect();
        let raw: Vec<f64> = (0..20).map(|_| rng.random::<f64>()).collect();
        let total: f64 = raw.iter().sum();
        let s: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let p = sum_attention(&s, &doc, &[]).unwrap();
        for w in words {
            let mut scan = 0.0;
            for i in 0..doc.len() {
                if doc[i] == w {
                    scan += s[i];
                }
            }
            assert_eq!(p.probability(w), scan);
        }
    }

    #[test]
    fn permuting_candidates_keeps_answer() {
        let s = [0.1, 0.3, 0.2, 0.3, 0.1];
        let doc = ["a", "b", "c", "d", "a"];
        let mut cands = strings(&["a", "b", "c", "d", "z"]);
        let best = sum_attention(&s, &doc, &cands).unwrap().best().to_owned();
        for _ in 0..5 {
            cands.rotate_left(1);
            assert_eq!(sum_attention(&s, &doc, &cands).unwrap().best(), best);
            cands.reverse();
            assert_eq!(sum_attention(&s, &doc, &cands).unwrap().best(), best);
        }
    }
}
