//! Small generated cloze corpora for tests, benchmarks and smoke runs.
//!
//! Each document has four sentences, each naming one entity surrounded by
//! up to two filler words on either side (at least one in
//! [`sentence_task`]). Vocabulary: 20 entities
//! `e0..e19` and 10 fillers `f0..f9`.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{ClozeSample, BLANK};

const ENTITIES: usize = 20;
const FILLERS: usize = 10;
const PER_DOC: usize = 4;
const CANDIDATES: usize = 10;

fn word(prefix: char, i: usize) -> String {
    format!("{prefix}{i}")
}

struct Drawn {
    sentences: Vec<Vec<String>>,
    entities: Vec<usize>,
}

fn draw_document(rng: &mut ChaCha8Rng, min_fill: usize) -> Drawn {
    let mut entities: Vec<usize> = (0..ENTITIES).collect();
    entities.shuffle(rng);
    entities.truncate(PER_DOC);
    let sentences = entities
        .iter()
        .map(|&e| {
            let mut s = Vec::new();
            for _ in 0..rng.random_range(min_fill..3) {
                s.push(word('f', rng.random_range(0..FILLERS)));
            }
            s.push(word('e', e));
            for _ in 0..rng.random_range(min_fill..3) {
                s.push(word('f', rng.random_range(0..FILLERS)));
            }
            s
        })
        .collect();
    Drawn { sentences, entities }
}

fn candidates(entities: &[usize], rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut pool: Vec<usize> = (0..ENTITIES).filter(|e| !entities.contains(e)).collect();
    pool.shuffle(rng);
    let mut out: Vec<String> = entities.iter().chain(&pool[..CANDIDATES - entities.len()]).map(|&e| word('e', e)).collect();
    out.shuffle(rng);
    out
}

/// The query repeats the answer right before the blank; the reader only
/// has to find the matching document token.
pub fn copy_task(samples: usize, seed: u64) -> Vec<ClozeSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..samples)
        .map(|i| {
            let d = draw_document(&mut rng, 0);
            let pick = rng.random_range(0..PER_DOC);
            let filler = word('f', rng.random_range(0..FILLERS));
            ClozeSample {
                sample_id: format!("copy:{i}"),
                query_tokens: vec![filler, word('e', d.entities[pick]), BLANK.to_owned()],
                answer: word('e', d.entities[pick]),
                candidates: candidates(&d.entities, &mut rng),
                sentences: d.sentences,
            }
        })
        .collect()
}

/// Like [`copy_task`], but the query also names the other entities of the
/// document. Only the word right before the blank is the answer, so a
/// reader has to weigh query words unevenly.
pub fn distractor_task(samples: usize, seed: u64) -> Vec<ClozeSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..samples)
        .map(|i| {
            let d = draw_document(&mut rng, 0);
            let pick = rng.random_range(0..PER_DOC);
            let mut others: Vec<String> = d.entities.iter().filter(|&&e| e != d.entities[pick]).map(|&e| word('e', e)).collect();
            others.shuffle(&mut rng);
            let split = rng.random_range(0..=others.len());
            let mut query: Vec<String> = others[..split].to_vec();
            query.push(word('e', d.entities[pick]));
            query.push(BLANK.to_owned());
            query.extend_from_slice(&others[split..]);
            query.push((*["f0", "f1", "f2"].choose(&mut rng).unwrap()).to_owned());
            ClozeSample {
                sample_id: format!("cue:{i}"),
                query_tokens: query,
                answer: word('e', d.entities[pick]),
                candidates: candidates(&d.entities, &mut rng),
                sentences: d.sentences,
            }
        })
        .collect()
}

/// The query is one of the document's sentences with its entity blanked,
/// so the surrounding fillers identify the answer.
pub fn sentence_task(samples: usize, seed: u64) -> Vec<ClozeSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..samples)
        .map(|i| {
            let d = draw_document(&mut rng, 1);
            let pick = rng.random_range(0..PER_DOC);
            let answer = word('e', d.entities[pick]);
            let query_tokens = d.sentences[pick].iter().map(|t| if *t == answer { BLANK.to_owned() } else { t.clone() }).collect();
            ClozeSample {
                sample_id: format!("sent:{i}"),
                query_tokens,
                answer,
                candidates: candidates(&d.entities, &mut rng),
                sentences: d.sentences,
            }
        })
        .collect()
}
