use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::NgramError;

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";
const BOS_ID: u32 = 0;
const EOS_ID: u32 = 1;
const UNK_ID: u32 = 2;
const MAGIC: &[u8; 8] = b"AOAKNLM\0";
pub const LM_VERSION: u32 = 1;

/// Sum of natural-log probabilities over a token sequence.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmScore {
    pub log_prob: f64,
    /// Words scored, excluding the sentence-end marker.
    pub tokens: usize,
}

impl LmScore {
    /// Log-probability per word.
    pub fn normalized(&self) -> f64 {
        self.log_prob / self.tokens.max(1) as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct ContextStats {
    total: u64,
    types: u64,
}

/// Interpolated Kneser–Ney model with one discount per order.
///
/// The highest order uses raw counts. Lower orders use continuation counts
/// (number of distinct left extensions), except n-grams starting with `<s>`,
/// which cannot be extended and keep their raw counts.
#[derive(Clone, Debug, PartialEq)]
pub struct KnModel {
    order: usize,
    words: Vec<String>,
    index: HashMap<String, u32>,
    /// `counts[k - 1]` holds adjusted counts of k-grams.
    counts: Vec<HashMap<Box<[u32]>, u64>>,
    contexts: Vec<HashMap<Box<[u32]>, ContextStats>>,
    discounts: Vec<f64>,
}

fn specials() -> Vec<String> {
    vec![BOS.to_owned(), EOS.to_owned(), UNK.to_owned()]
}

fn discount(counts: &HashMap<Box<[u32]>, u64>) -> f64 {
    let n1 = counts.values().filter(|c| **c == 1).count() as f64;
    let n2 = counts.values().filter(|c| **c == 2).count() as f64;
    if n1 == 0.0 || n2 == 0.0 {
        0.5
    } else {
        n1 / (n1 + 2.0 * n2)
    }
}

impl KnModel {
    /// Trains on sentences (each a token sequence, padded here with one
    /// `<s>` and one `</s>`).
    pub fn train<S: AsRef<str>>(sentences: &[Vec<S>], order: usize) -> Result<Self, NgramError> {
        if order == 0 {
            return Err(NgramError::Contract("order must be at least 1".into()));
        }
        if sentences.iter().all(|s| s.is_empty()) {
            return Err(NgramError::EmptyCorpus);
        }
        let mut words = specials();
        let mut index: HashMap<String, u32> = words.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
        let mut raw: Vec<HashMap<Box<[u32]>, u64>> = vec![HashMap::new(); order];
        let mut padded = Vec::new();
        for sentence in sentences.iter().filter(|s| !s.is_empty()) {
            padded.clear();
            padded.push(BOS_ID);
            for t in sentence {
                let t = t.as_ref();
                let id = *index.entry(t.to_owned()).or_insert_with(|| {
                    words.push(t.to_owned());
                    (words.len() - 1) as u32
                });
                padded.push(id);
            }
            padded.push(EOS_ID);
            for k in 1..=order {
                for (start, gram) in padded.windows(k).enumerate() {
                    if k == 1 && start == 0 {
                        continue;
                    }
                    *raw[k - 1].entry(gram.into()).or_default() += 1;
                }
            }
        }
        let mut counts = Vec::with_capacity(order);
        for k in 1..=order {
            if k == order {
                counts.push(raw[k - 1].clone());
                continue;
            }
            let mut adjusted: HashMap<Box<[u32]>, u64> = HashMap::with_capacity(raw[k - 1].len());
            for longer in raw[k].keys() {
                *adjusted.entry(longer[1..].into()).or_default() += 1;
            }
            for (gram, c) in &raw[k - 1] {
                if gram[0] == BOS_ID {
                    adjusted.insert(gram.clone(), *c);
                }
            }
            counts.push(adjusted);
        }
        let discounts = counts.iter().map(discount).collect();
        let contexts = counts.iter().map(context_stats).collect();
        Ok(Self { order, words, index, counts, contexts, discounts })
    }

    /// A model over one document only, with the order capped at the
    /// document's token count.
    pub fn train_local<S: AsRef<str>>(sentences: &[Vec<S>], order: usize) -> Result<Self, NgramError> {
        let len: usize = sentences.iter().map(Vec::len).sum();
        if len == 0 {
            return Err(NgramError::EmptyCorpus);
        }
        Self::train(sentences, order.min(len).max(1))
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn discounts(&self) -> &[f64] {
        &self.discounts
    }

    /// Predictable vocabulary: training words plus `</s>` and `<unk>`.
    pub fn vocabulary(&self) -> impl Iterator<Item = &str> {
        self.words.iter().skip(1).map(String::as_str)
    }

    pub fn vocab_size(&self) -> usize {
        self.words.len() - 1
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    fn id(&self, word: &str) -> u32 {
        match self.index.get(word) {
            Some(&BOS_ID) | None => UNK_ID,
            Some(&id) => id,
        }
    }

    fn prob_ids(&self, word: u32, context: &[u32], key: &mut Vec<u32>) -> f64 {
        let context = &context[context.len().saturating_sub(self.order - 1)..];
        let k = context.len() + 1;
        let lower = if k == 1 { 1.0 / self.vocab_size() as f64 } else { self.prob_ids(word, &context[1..], key) };
        match self.contexts[k - 1].get(context) {
            None => lower,
            Some(st) => {
                key.clear();
                key.extend_from_slice(context);
                key.push(word);
                let c = self.counts[k - 1].get(key.as_slice()).copied().unwrap_or(0) as f64;
                let d = self.discounts[k - 1];
                ((c - d).max(0.0) + d * st.types as f64 * lower) / st.total as f64
            }
        }
    }

    /// `P(word | context)`; only the last `order - 1` context tokens are
    /// used. Unknown words are scored as `<unk>`.
    pub fn prob(&self, word: &str, context: &[&str]) -> f64 {
        let ctx: Vec<u32> = context.iter().map(|w| if *w == BOS { BOS_ID } else { self.id(w) }).collect();
        self.prob_ids(self.id(word), &ctx, &mut Vec::new())
    }

    /// Scores one sentence with boundary padding.
    pub fn score<S: AsRef<str>>(&self, tokens: &[S]) -> LmScore {
        let mut ids = Vec::with_capacity(tokens.len() + 2);
        ids.push(BOS_ID);
        ids.extend(tokens.iter().map(|t| self.id(t.as_ref())));
        ids.push(EOS_ID);
        let mut key = Vec::with_capacity(self.order);
        let log_prob = (1..ids.len()).map(|i| self.prob_ids(ids[i], &ids[..i], &mut key).ln()).sum();
        LmScore { log_prob, tokens: tokens.len() }
    }

    /// Sentences scored independently; the boundary state resets.
    pub fn score_sentences<S: AsRef<str>>(&self, sentences: &[Vec<S>]) -> LmScore {
        sentences.iter().fold(LmScore { log_prob: 0.0, tokens: 0 }, |acc, s| {
            let one = self.score(s);
            LmScore { log_prob: acc.log_prob + one.log_prob, tokens: acc.tokens + one.tokens }
        })
    }

    /// Per-prediction perplexity, counting each sentence end as a
    /// prediction.
    pub fn perplexity<S: AsRef<str>>(&self, sentences: &[Vec<S>]) -> f64 {
        let score = self.score_sentences(sentences);
        let n = score.tokens + sentences.len();
        (-score.log_prob / n as f64).exp()
    }

    /// Persists the model: magic, version, order, vocabulary, discounts and
    /// count tables with keys in sorted order, all little-endian.
    pub fn write_to(&self, mut w: impl Write) -> Result<(), NgramError> {
        w.write_all(MAGIC)?;
        w.write_all(&LM_VERSION.to_le_bytes())?;
        w.write_all(&(self.order as u32).to_le_bytes())?;
        w.write_all(&(self.words.len() as u32).to_le_bytes())?;
        for word in &self.words {
            w.write_all(&(word.len() as u32).to_le_bytes())?;
            w.write_all(word.as_bytes())?;
        }
        for d in &self.discounts {
            w.write_all(&d.to_le_bytes())?;
        }
        for table in &self.counts {
            let mut entries: Vec<(&Box<[u32]>, &u64)> = table.iter().collect();
            entries.sort();
            w.write_all(&(entries.len() as u64).to_le_bytes())?;
            for (gram, c) in entries {
                for id in gram.iter() {
                    w.write_all(&id.to_le_bytes())?;
                }
                w.write_all(&c.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, NgramError> {
        let bad = |m: &str| NgramError::Format(m.to_owned());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(bad("not a language model file"));
        }
        let version = read_u32(&mut r)?;
        if version != LM_VERSION {
            return Err(NgramError::Format(format!("unsupported language model version {version}")));
        }
        let order = read_u32(&mut r)? as usize;
        if order == 0 {
            return Err(bad("order 0"));
        }
        let n_words = read_u32(&mut r)? as usize;
        let mut words = Vec::with_capacity(n_words);
        for _ in 0..n_words {
            let len = read_u32(&mut r)? as usize;
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf)?;
            words.push(String::from_utf8(buf).map_err(|_| bad("vocabulary entry is not UTF-8"))?);
        }
        if words.len() < 3 || words[..3] != specials()[..] {
            return Err(bad("missing boundary and unknown-word entries"));
        }
        let mut discounts = Vec::with_capacity(order);
        for _ in 0..order {
            discounts.push(read_f64(&mut r)?);
        }
        let mut counts = Vec::with_capacity(order);
        for k in 1..=order {
            let n = read_u64(&mut r)? as usize;
            let mut table = HashMap::with_capacity(n);
            for _ in 0..n {
                let mut gram = Vec::with_capacity(k);
                for _ in 0..k {
                    let id = read_u32(&mut r)?;
                    if id as usize >= words.len() {
                        return Err(bad("n-gram refers to an unknown word id"));
                    }
                    gram.push(id);
                }
                table.insert(gram.into_boxed_slice(), read_u64(&mut r)?);
            }
            counts.push(table);
        }
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
        let contexts = counts.iter().map(context_stats).collect();
        Ok(Self { order, words, index, counts, contexts, discounts })
    }

    /// ARPA text: for every stored n-gram its interpolated log10
    /// probability and, for n-grams that are contexts, the log10 backoff
    /// weight `D * N1+(h .) / total(h)`.
    pub fn write_arpa(&self, mut w: impl Write) -> Result<(), NgramError> {
        let mut tables: Vec<Vec<(&Box<[u32]>, f64)>> = Vec::with_capacity(self.order);
        let mut key = Vec::new();
        for k in 1..=self.order {
            let mut entries: Vec<(&Box<[u32]>, f64)> = self.counts[k - 1]
                .keys()
                .map(|g| (g, self.prob_ids(g[k - 1], &g[..k - 1], &mut key)))
                .collect();
            entries.sort_by(|a, b| a.0.cmp(b.0));
            tables.push(entries);
        }
        let mut unigrams: Vec<(Vec<u32>, f64)> = tables[0].iter().map(|(g, p)| (g.to_vec(), *p)).collect();
        if !self.counts[0].contains_key(&[UNK_ID][..]) {
            unigrams.push((vec![UNK_ID], self.prob_ids(UNK_ID, &[], &mut key)));
        }
        unigrams.push((vec![BOS_ID], 0.0));
        unigrams.sort_by(|a, b| a.0.cmp(&b.0));
        writeln!(w, "\\data\\")?;
        writeln!(w, "ngram 1={}", unigrams.len())?;
        for (k, t) in tables.iter().enumerate().skip(1) {
            writeln!(w, "ngram {}={}", k + 1, t.len())?;
        }
        let backoff = |gram: &[u32]| -> Option<f64> {
            let next = self.contexts.get(gram.len())?;
            let st = next.get(gram)?;
            Some(self.discounts[gram.len()] * st.types as f64 / st.total as f64)
        };
        let text = |gram: &[u32]| gram.iter().map(|&i| self.words[i as usize].as_str()).collect::<Vec<_>>().join(" ");
        writeln!(w, "\n\\1-grams:")?;
        for (gram, p) in &unigrams {
            let lp = if gram[0] == BOS_ID { -99.0 } else { p.log10() };
            match backoff(gram) {
                Some(b) => writeln!(w, "{lp:.12}\t{}\t{:.12}", text(gram), b.log10())?,
                None => writeln!(w, "{lp:.12}\t{}", text(gram))?,
            }
        }
        for (k, table) in tables.iter().enumerate().skip(1) {
            writeln!(w, "\n\\{}-grams:", k + 1)?;
            for (gram, p) in table {
                match backoff(gram) {
                    Some(b) => writeln!(w, "{:.12}\t{}\t{:.12}", p.log10(), text(gram), b.log10())?,
                    None => writeln!(w, "{:.12}\t{}", p.log10(), text(gram))?,
                }
            }
        }
        writeln!(w, "\n\\end\\")?;
        Ok(())
    }
}

fn context_stats(counts: &HashMap<Box<[u32]>, u64>) -> HashMap<Box<[u32]>, ContextStats> {
    let mut out: HashMap<Box<[u32]>, ContextStats> = HashMap::new();
    for (gram, c) in counts {
        let st = out.entry(gram[..gram.len() - 1].into()).or_insert(ContextStats { total: 0, types: 0 });
        st.total += c;
        st.types += 1;
    }
    out
}

fn read_u32(r: &mut impl Read) -> Result<u32, NgramError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64, NgramError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64, NgramError> {
    Ok(f64::from_bits(read_u64(r)?))
}
