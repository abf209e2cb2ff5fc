use log::info;
use serde::Serialize;

use super::sample::ClozeSample;
use super::vocab::{Vocabulary, PAD, UNK};

/// Padded, id-encoded slice of samples. Row `b` of every matrix belongs to
/// `samples[sample_indices[b]]` of the slice that was encoded.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub doc_ids: Vec<Vec<usize>>,
    pub doc_mask: Vec<Vec<bool>>,
    pub query_ids: Vec<Vec<usize>>,
    pub query_mask: Vec<Vec<bool>>,
    pub answer_ids: Vec<usize>,
    pub candidate_ids: Vec<Vec<usize>>,
    pub candidate_mask: Vec<Vec<bool>>,
    pub sample_ids: Vec<String>,
    pub sample_indices: Vec<usize>,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn doc_width(&self) -> usize {
        self.doc_ids.first().map_or(0, Vec::len)
    }

    pub fn query_width(&self) -> usize {
        self.query_ids.first().map_or(0, Vec::len)
    }

    pub fn doc_len(&self, row: usize) -> usize {
        self.doc_mask[row].iter().filter(|m| **m).count()
    }

    pub fn query_len(&self, row: usize) -> usize {
        self.query_mask[row].iter().filter(|m| **m).count()
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct EncodedBatches {
    #[serde(skip)]
    pub batches: Vec<Batch>,
    /// Samples whose answer is out of vocabulary; they cannot be trained on.
    pub dropped_unk_answers: usize,
}

fn pad<T: Copy>(rows: Vec<Vec<T>>, fill: T) -> (Vec<Vec<T>>, Vec<Vec<bool>>) {
    let width = rows.iter().map(Vec::len).max().unwrap_or(0);
    let mask = rows.iter().map(|r| (0..width).map(|i| i < r.len()).collect()).collect();
    let padded = rows
        .into_iter()
        .map(|mut r| {
            r.resize(width, fill);
            r
        })
        .collect();
    (padded, mask)
}

/// Encodes `samples` in order, `batch_size` at a time.
pub fn encode_batch(samples: &[ClozeSample], vocab: &Vocabulary, batch_size: usize) -> EncodedBatches {
    let order: Vec<usize> = (0..samples.len()).collect();
    encode_ordered(samples, &order, vocab, batch_size)
}

/// Encodes `samples[order[..]]`, so a trainer can batch a shuffled view
/// without copying samples.
pub fn encode_ordered(samples: &[ClozeSample], order: &[usize], vocab: &Vocabulary, batch_size: usize) -> EncodedBatches {
    assert!(batch_size >= 1, "batch size must be positive");
    let mut kept = Vec::with_capacity(order.len());
    let mut dropped = 0;
    for &i in order {
        if vocab.id(&samples[i].answer) == UNK {
            dropped += 1;
        } else {
            kept.push(i);
        }
    }
    if dropped > 0 {
        info!("dropped {dropped} samples with out-of-vocabulary answers");
    }
    let batches = kept.chunks(batch_size).map(|chunk| build(samples, chunk, vocab)).collect();
    EncodedBatches { batches, dropped_unk_answers: dropped }
}

/// Encodes exactly the given samples as one batch, UNK answers included.
pub fn encode_one_batch(samples: &[ClozeSample], indices: &[usize], vocab: &Vocabulary) -> Batch {
    build(samples, indices, vocab)
}

fn build(samples: &[ClozeSample], indices: &[usize], vocab: &Vocabulary) -> Batch {
    let chosen: Vec<&ClozeSample> = indices.iter().map(|&i| &samples[i]).collect();
    let (doc_ids, doc_mask) = pad(chosen.iter().map(|s| s.document_tokens().map(|t| vocab.id(t)).collect()).collect(), PAD);
    let (query_ids, query_mask) =
        pad(chosen.iter().map(|s| s.query_tokens.iter().map(|t| vocab.query_id(t)).collect()).collect(), PAD);
    let (candidate_ids, candidate_mask) =
        pad(chosen.iter().map(|s| s.candidates.iter().map(|t| vocab.id(t)).collect()).collect(), PAD);
    Batch {
        doc_ids,
        doc_mask,
        query_ids,
        query_mask,
        answer_ids: chosen.iter().map(|s| vocab.id(&s.answer)).collect(),
        candidate_ids,
        candidate_mask,
        sample_ids: chosen.iter().map(|s| s.sample_id.clone()).collect(),
        sample_indices: indices.to_vec(),
    }
}
