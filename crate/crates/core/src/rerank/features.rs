use crate::corpus::{ClozeSample, BLANK};
use crate::model::LOG_EPS;
use crate::ngram::{ClassMap, KnModel, LmScore};

use super::{NBestEntry, RerankError};

/// Replaces the single blank in `query` with `candidate`.
pub fn refill<S: AsRef<str>>(query: &[S], candidate: &str) -> Result<Vec<String>, RerankError> {
    let blanks = query.iter().filter(|t| t.as_ref() == BLANK).count();
    if blanks != 1 {
        return Err(RerankError::Contract(format!("query must contain exactly one {BLANK}, found {blanks}")));
    }
    Ok(query.iter().map(|t| if t.as_ref() == BLANK { candidate.to_owned() } else { t.as_ref().to_owned() }).collect())
}

/// The models behind the three n-gram features. The local model is not
/// stored here; it is trained per sample from that sample's document.
#[derive(Clone, Debug)]
pub struct LanguageModels {
    pub global: KnModel,
    pub class_lm: KnModel,
    pub class_map: ClassMap,
    pub local_order: usize,
    /// Divide LM log-probabilities by the sentence's word count.
    pub normalize: bool,
}

impl LanguageModels {
    fn feature(&self, score: LmScore) -> f64 {
        if self.normalize {
            score.normalized()
        } else {
            score.log_prob
        }
    }

    pub fn local_model(&self, sample: &ClozeSample) -> Result<KnModel, RerankError> {
        Ok(KnModel::train_local(&sample.sentences, self.local_order)?)
    }

    /// Fills the three LM features of every entry in one sample's list,
    /// keeping the stored reader feature.
    pub fn featurize(&self, entries: &mut [NBestEntry], sample: &ClozeSample) -> Result<(), RerankError> {
        let local = self.local_model(sample)?;
        for e in entries {
            if e.sample_id != sample.sample_id {
                return Err(RerankError::Contract(format!("entry for {} scored against sample {}", e.sample_id, sample.sample_id)));
            }
            let f = score_features(1.0, &e.sentence, self, Some(&local))?;
            e.features[1..].copy_from_slice(&f[1..]);
        }
        Ok(())
    }
}

/// `(ln p_nn, global, local, class)` for a refilled sentence.
pub fn score_features(
    nn_prob: f64,
    sentence: &[String],
    lms: &LanguageModels,
    local: Option<&KnModel>,
) -> Result<[f64; 4], RerankError> {
    let local = local.ok_or_else(|| RerankError::Contract("local language model missing".into()))?;
    if sentence.iter().any(|t| t == BLANK) {
        return Err(RerankError::Contract("sentence still contains the blank".into()));
    }
    Ok([
        nn_prob.max(LOG_EPS).ln(),
        lms.feature(lms.global.score(sentence)),
        lms.feature(local.score(sentence)),
        lms.feature(lms.class_lm.score(&lms.class_map.to_class_tokens(sentence))),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ngram::cluster_exchange;

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_owned).collect()
    }

    fn models() -> LanguageModels {
        let text = vec![words("the dog ran home"), words("a cat sat down"), words("the cat ran")];
        let clustering = cluster_exchange(&text, 3, 10).unwrap();
        let classed: Vec<Vec<String>> = text.iter().map(|s| clustering.map.to_class_tokens(s)).collect();
        LanguageModels {
            global: KnModel::train(&text, 8).unwrap(),
            class_lm: KnModel::train(&classed, 8).unwrap(),
            class_map: clustering.map,
            local_order: 8,
            normalize: true,
        }
    }

    #[test]
    fn refill_positions() {
        assert_eq!(refill(&["the", BLANK, "ran"], "dog").unwrap(), words("the dog ran"));
        assert_eq!(refill(&[BLANK, "ran"], "dog").unwrap(), words("dog ran"));
        assert!(refill(&["the", "ran"], "dog").is_err());
        assert!(refill(&[BLANK, BLANK], "dog").is_err());
    }

    #[test]
    fn seen_sentence_gets_higher_global_feature() {
        let lms = models();
        let local = KnModel::train_local(&[words("x y")], 8).unwrap();
        let seen = score_features(0.5, &words("the dog ran home"), &lms, Some(&local)).unwrap();
        let unseen = score_features(0.5, &words("the sat ran home"), &lms, Some(&local)).unwrap();
        assert!(seen[1] > unseen[1]);
        assert_eq!(seen[0], 0.5f64.ln());
        assert!(score_features(0.5, &words("the dog"), &lms, None).is_err());
    }

    #[test]
    fn same_class_sequence_same_class_feature() {
        let lms = models();
        let local = KnModel::train_local(&[words("x y")], 8).unwrap();
        let a = score_features(0.5, &words("the zzz ran"), &lms, Some(&local)).unwrap();
        let b = score_features(0.5, &words("the qqq ran"), &lms, Some(&local)).unwrap();
        assert_eq!(a[3], b[3]);
    }

    #[test]
    fn featurize_keeps_reader_feature() {
        let lms = models();
        let sample = ClozeSample {
            sample_id: "q".into(),
            sentences: vec![words("the dog ran home")],
            query_tokens: words(&format!("the {BLANK} ran")),
            answer: "dog".into(),
            candidates: vec![],
        };
        let mut list = vec![NBestEntry {
            sample_id: "q".into(),
            candidate: "dog".into(),
            sentence: words("the dog ran"),
            features: [-0.3, 0.0, 0.0, 0.0],
            is_gold: true,
        }];
        lms.featurize(&mut list, &sample).unwrap();
        assert_eq!(list[0].features[0], -0.3);
        assert!(list[0].features[1..].iter().all(|f| f.is_finite() && *f < 0.0));
    }
}
