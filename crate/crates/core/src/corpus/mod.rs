//! Cloze dataset ingestion: CBTest and JSONL parsing, vocabularies and
//! padded batches.

mod batch;
mod parse;
mod sample;
mod vocab;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use batch::{encode_batch, encode_one_batch, encode_ordered, Batch, EncodedBatches};
pub use parse::{parse_cbt, parse_generic, to_generic_line};
pub use sample::{ClozeSample, BLANK};
pub use vocab::{Vocabulary, PAD, PLACEHOLDER, UNK};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("block {block}: {reason}")]
    Parse { block: usize, reason: String },
    #[error("line {line}: {reason}")]
    Record { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Input file flavour.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Cbt,
    Generic,
}

pub fn parse(reader: impl std::io::BufRead, format: Format, prefix: &str) -> Result<Vec<ClozeSample>, CorpusError> {
    match format {
        Format::Cbt => parse_cbt(reader, prefix),
        Format::Generic => parse_generic(reader, prefix),
    }
}

/// Corpus summary in the shape of the usual dataset statistics table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub queries: usize,
    pub max_candidates: usize,
    pub avg_candidates: f64,
    /// Document plus query tokens, averaged over samples.
    pub avg_tokens: f64,
    pub vocabulary_size: usize,
}

pub fn stats(samples: &[ClozeSample]) -> DatasetStats {
    let n = samples.len();
    let mean = |total: usize| if n == 0 { 0.0 } else { total as f64 / n as f64 };
    let mut types = HashSet::new();
    for s in samples {
        types.extend(s.document_tokens());
        types.extend(s.query_tokens.iter().map(String::as_str).filter(|t| *t != BLANK));
    }
    DatasetStats {
        queries: n,
        max_candidates: samples.iter().map(|s| s.candidates.len()).max().unwrap_or(0),
        avg_candidates: mean(samples.iter().map(|s| s.candidates.len()).sum()),
        avg_tokens: mean(samples.iter().map(|s| s.document_len() + s.query_tokens.len()).sum()),
        vocabulary_size: types.len(),
    }
}
