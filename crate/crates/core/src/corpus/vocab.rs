use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::sample::{ClozeSample, BLANK};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PLACEHOLDER: usize = 2;
const RESERVED: [&str; 3] = ["<pad>", "<unk>", "<placeholder>"];

/// Token ↔ id map. Ids 0..3 are reserved and never produced by looking up a
/// corpus token, so a document containing the literal string `<pad>` still
/// gets an ordinary id.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabFile", into = "VocabFile")]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    words: Vec<String>,
}

impl From<VocabFile> for Vocabulary {
    fn from(f: VocabFile) -> Self {
        Self::from_words(f.words)
    }
}

impl From<Vocabulary> for VocabFile {
    fn from(v: Vocabulary) -> Self {
        VocabFile { words: v.words }
    }
}

impl Vocabulary {
    /// Builds a vocabulary whose non-reserved ids follow `words` in order.
    pub fn from_words(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i + RESERVED.len())).collect();
        Self { words, index }
    }

    /// Documents and queries contribute counts; tokens seen at least
    /// `min_count` times get ids ordered by descending frequency, then
    /// lexicographically.
    pub fn build(samples: &[ClozeSample], min_count: usize) -> Self {
        assert!(min_count >= 1, "min_count must be at least 1");
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for s in samples {
            let query = s.query_tokens.iter().map(String::as_str).filter(|t| *t != BLANK);
            for t in s.document_tokens().chain(query) {
                *counts.entry(t).or_default() += 1;
            }
        }
        let mut words: Vec<(&str, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Self::from_words(words.into_iter().map(|(w, _)| w.to_owned()).collect())
    }

    /// Total size including reserved ids.
    pub fn len(&self) -> usize {
        self.words.len() + RESERVED.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of corpus words, excluding the reserved entries.
    pub fn word_count(&self) -> usize {
        self.words.len()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    /// Like [`Vocabulary::id`] but maps the blank marker to `PLACEHOLDER`.
    pub fn query_id(&self, token: &str) -> usize {
        if token == BLANK {
            PLACEHOLDER
        } else {
            self.id(token)
        }
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        match id {
            i if i < RESERVED.len() => Some(RESERVED[i]),
            i => self.words.get(i - RESERVED.len()).map(String::as_str),
        }
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<&str> {
        ids.iter().map(|&i| self.token(i).unwrap_or(RESERVED[UNK])).collect()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::sample::tokenize;

    fn corpus(text: &str) -> Vec<ClozeSample> {
        vec![ClozeSample {
            sample_id: "0".into(),
            sentences: vec![tokenize(text)],
            query_tokens: vec![BLANK.into()],
            answer: "a".into(),
            candidates: vec![],
        }]
    }

    #[test]
    fn min_count_filters() {
        let v = Vocabulary::build(&corpus("a a b"), 1);
        assert_eq!(v.words(), &["a", "b"]);
        assert_eq!(v.len(), 5);
        let v = Vocabulary::build(&corpus("a a b"), 2);
        assert_eq!(v.words(), &["a"]);
        assert_eq!(v.id("b"), UNK);
    }

    #[test]
    fn deterministic_ids() {
        let a = Vocabulary::build(&corpus("z y x y z q"), 1);
        let b = Vocabulary::build(&corpus("z y x y z q"), 1);
        assert_eq!(a, b);
        assert_eq!(a.words(), &["y", "z", "q", "x"]);
    }

    #[test]
    fn reserved_never_collide() {
        let v = Vocabulary::build(&corpus("<pad> <unk> a"), 1);
        assert!(v.id("<pad>") >= 3);
        assert!(v.id("<unk>") >= 3);
        assert_eq!(v.query_id(BLANK), PLACEHOLDER);
        assert_eq!(v.token(PAD), Some("<pad>"));
    }

    #[test]
    fn serde_round_trip() {
        let v = Vocabulary::build(&corpus("c b a b"), 1);
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(v, back);
        assert_eq!(back.id("b"), 3);
    }
}
