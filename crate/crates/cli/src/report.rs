use std::collections::HashMap;
use std::io::Write;

use aoa_core::corpus::ClozeSample;
use aoa_core::model::Prediction;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const LENGTH_BIN_WIDTH: usize = 100;
pub const LENGTH_BINS: usize = 10;
pub const RANK_BINS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinStats {
    pub label: String,
    pub samples: usize,
    pub correct: usize,
    pub accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub models: usize,
    pub total: usize,
    pub evaluated: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub dropped_empty_document: usize,
    /// Predictions made over document words because no candidate occurs
    /// in the document.
    pub fallback_predictions: usize,
    pub length_bins: Vec<BinStats>,
    pub rank_bins: Vec<BinStats>,
}

pub fn length_bin(doc_len: usize) -> usize {
    (doc_len / LENGTH_BIN_WIDTH).min(LENGTH_BINS - 1)
}

pub fn length_label(bin: usize) -> String {
    if bin == LENGTH_BINS - 1 {
        format!("{}+", bin * LENGTH_BIN_WIDTH)
    } else {
        format!("{}-{}", bin * LENGTH_BIN_WIDTH, (bin + 1) * LENGTH_BIN_WIDTH - 1)
    }
}

/// Rank of the answer when the candidates (or, without candidates, the
/// document words) are ordered by frequency in the document; 1 is the most
/// frequent. Equal frequencies share a rank.
pub fn frequency_rank(sample: &ClozeSample) -> usize {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in sample.document_tokens() {
        *counts.entry(t).or_default() += 1;
    }
    let answer = counts.get(sample.answer.as_str()).copied().unwrap_or(0);
    let pool: Vec<usize> = if sample.candidates.is_empty() {
        counts.values().copied().collect()
    } else {
        let mut seen = std::collections::HashSet::new();
        sample.candidates.iter().filter(|c| seen.insert(c.as_str())).map(|c| counts.get(c.as_str()).copied().unwrap_or(0)).collect()
    };
    1 + pool.iter().filter(|&&c| c > answer).count()
}

pub fn rank_bin(rank: usize) -> usize {
    rank.clamp(1, RANK_BINS) - 1
}

pub fn rank_label(bin: usize) -> String {
    if bin == RANK_BINS - 1 {
        format!("{RANK_BINS}+")
    } else {
        (bin + 1).to_string()
    }
}

fn bins(labels: impl Iterator<Item = String>, hits: &[(usize, bool)]) -> Vec<BinStats> {
    let mut out: Vec<BinStats> = labels.map(|label| BinStats { label, samples: 0, correct: 0, accuracy: None }).collect();
    for &(bin, ok) in hits {
        out[bin].samples += 1;
        out[bin].correct += usize::from(ok);
    }
    for b in &mut out {
        b.accuracy = (b.samples > 0).then(|| b.correct as f64 / b.samples as f64);
    }
    out
}

/// `predictions` pairs with the evaluated samples, which exclude
/// `dropped` samples with empty documents.
pub fn build_report(split: &str, models: usize, evaluated: &[&ClozeSample], predictions: &[Prediction], dropped: usize) -> EvalReport {
    let outcomes: Vec<bool> = evaluated.iter().zip(predictions).map(|(s, p)| p.best() == s.answer).collect();
    let correct = outcomes.iter().filter(|o| **o).count();
    let by_len: Vec<(usize, bool)> = evaluated.iter().zip(&outcomes).map(|(s, o)| (length_bin(s.document_len()), *o)).collect();
    let by_rank: Vec<(usize, bool)> = evaluated.iter().zip(&outcomes).map(|(s, o)| (rank_bin(frequency_rank(s)), *o)).collect();
    EvalReport {
        split: split.to_owned(),
        models,
        total: evaluated.len() + dropped,
        evaluated: evaluated.len(),
        correct,
        accuracy: if evaluated.is_empty() { 0.0 } else { correct as f64 / evaluated.len() as f64 },
        dropped_empty_document: dropped,
        fallback_predictions: predictions.iter().filter(|p| p.fallback).count(),
        length_bins: bins((0..LENGTH_BINS).map(length_label), &by_len),
        rank_bins: bins((0..RANK_BINS).map(rank_label), &by_rank),
    }
}

pub fn write_bins_csv(bins: &[BinStats], w: &mut dyn Write) -> Result<(), CliError> {
    writeln!(w, "bin,samples,correct,accuracy")?;
    for b in bins {
        let acc = b.accuracy.map_or(String::new(), |a| format!("{a:.6}"));
        writeln!(w, "{},{},{},{}", b.label, b.samples, b.correct, acc)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(doc: &str, answer: &str, candidates: &[&str]) -> ClozeSample {
        ClozeSample {
            sample_id: "s".into(),
            sentences: vec![doc.split_whitespace().map(str::to_owned).collect()],
            query_tokens: vec!["XXXXX".into()],
            answer: answer.into(),
            candidates: candidates.iter().map(|c| (*c).to_owned()).collect(),
        }
    }

    #[test]
    fn length_bins() {
        assert_eq!(length_label(length_bin(433)), "400-499");
        assert_eq!(length_label(length_bin(0)), "0-99");
        assert_eq!(length_label(length_bin(99)), "0-99");
        assert_eq!(length_label(length_bin(100)), "100-199");
        assert_eq!(length_label(length_bin(5000)), "900+");
    }

    #[test]
    fn ranks() {
        assert_eq!(frequency_rank(&sample("a a a b c", "a", &["a", "b", "c"])), 1);
        assert_eq!(frequency_rank(&sample("a a a b b c", "c", &["a", "b", "c"])), 3);
        assert_eq!(frequency_rank(&sample("a b", "b", &["a", "b"])), 1);
        assert_eq!(rank_label(rank_bin(14)), "10+");
        assert_eq!(rank_label(rank_bin(1)), "1");
    }

    #[test]
    fn perfect_predictions_fill_bins_with_ones() {
        let samples = [sample("a a b", "a", &["a", "b"]), sample("b c c", "b", &["b", "c"])];
        let refs: Vec<&ClozeSample> = samples.iter().collect();
        let preds: Vec<Prediction> = samples
            .iter()
            .map(|s| Prediction { ranked: vec![(s.answer.clone(), 1.0)], fallback: false, trace: None })
            .collect();
        let r = build_report("test", 1, &refs, &preds, 1);
        assert_eq!((r.total, r.evaluated, r.correct, r.accuracy), (3, 2, 2, 1.0));
        for b in r.length_bins.iter().chain(&r.rank_bins) {
            if b.samples > 0 {
                assert_eq!(b.accuracy, Some(1.0));
            }
        }
        assert_eq!(r.length_bins.iter().map(|b| b.samples).sum::<usize>(), 2);
        assert_eq!(r.rank_bins.iter().map(|b| b.samples).sum::<usize>(), 2);
        assert_eq!(r.rank_bins[0].samples, 1);
        assert_eq!(r.rank_bins[1].samples, 1);
    }
}
