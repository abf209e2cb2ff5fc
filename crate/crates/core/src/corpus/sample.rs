use serde::{Deserialize, Serialize};

/// Blank marker shared by the CBTest files and the JSONL format.
pub const BLANK: &str = "XXXXX";

/// One cloze question: a document, a query with a single blank, the answer
/// and an optional candidate list.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClozeSample {
    pub sample_id: String,
    /// Document tokens split into the source's sentences (lines). The
    /// reader only sees the flattened sequence; the n-gram models use the
    /// sentence structure.
    pub sentences: Vec<Vec<String>>,
    pub query_tokens: Vec<String>,
    pub answer: String,
    pub candidates: Vec<String>,
}

impl ClozeSample {
    /// Checks the blank/candidate invariants, returning a description of the
    /// first violation.
    pub fn validate(&self) -> Result<(), String> {
        let blanks = self.query_tokens.iter().filter(|t| *t == BLANK).count();
        if blanks != 1 {
            return Err(format!("query must contain exactly one {BLANK}, found {blanks}"));
        }
        if self.document_len() == 0 {
            return Err("empty document".into());
        }
        if self.answer.is_empty() || self.answer.contains(char::is_whitespace) {
            return Err(format!("answer {:?} is not a single token", self.answer));
        }
        if !self.candidates.is_empty() && !self.candidates.contains(&self.answer) {
            return Err(format!("answer {:?} missing from candidate list", self.answer));
        }
        Ok(())
    }

    pub fn document_tokens(&self) -> impl Iterator<Item = &str> + '_ {
        self.sentences.iter().flatten().map(String::as_str)
    }

    pub fn document(&self) -> Vec<&str> {
        self.document_tokens().collect()
    }

    pub fn document_len(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }

    pub fn blank_position(&self) -> Option<usize> {
        self.query_tokens.iter().position(|t| t == BLANK)
    }

    pub fn answer_in_document(&self) -> bool {
        self.document_tokens().any(|t| t == self.answer)
    }
}

pub(crate) fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_owned).collect()
}
