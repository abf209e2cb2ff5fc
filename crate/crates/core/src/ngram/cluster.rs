use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::NgramError;

/// Word to class assignment. Words never seen in clustering share the class
/// of the least frequent clustered word.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMap {
    pub k: usize,
    pub unk_class: u32,
    pub classes: BTreeMap<String, u32>,
}

impl ClassMap {
    pub fn class_of(&self, word: &str) -> u32 {
        self.classes.get(word).copied().unwrap_or(self.unk_class)
    }

    pub fn to_class_sequence<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens.iter().map(|t| self.class_of(t.as_ref())).collect()
    }

    /// Class ids as tokens for training and scoring class language models.
    pub fn to_class_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<String> {
        self.to_class_sequence(tokens).into_iter().map(class_token).collect()
    }

    /// Number of classes with at least one member.
    pub fn used_classes(&self) -> usize {
        let mut used: Vec<u32> = self.classes.values().copied().collect();
        used.sort_unstable();
        used.dedup();
        used.len()
    }
}

pub fn class_token(class: u32) -> String {
    format!("C{class}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub map: ClassMap,
    /// Log-likelihood after initialisation and after every pass.
    pub objective: Vec<f64>,
    /// Words moved in each pass.
    pub moves: Vec<usize>,
}

fn xlogx(x: u64) -> f64 {
    if x == 0 {
        0.0
    } else {
        let x = x as f64;
        x * x.ln()
    }
}

struct State {
    /// Real classes are `0..k`; the sentence boundary has class `k`.
    k: usize,
    class: Vec<usize>,
    n: Vec<u64>,
    left: Vec<u64>,
    right: Vec<u64>,
}

impl State {
    fn cell(&mut self, a: usize, b: usize) -> &mut u64 {
        &mut self.n[a * (self.k + 1) + b]
    }
}

struct Graph {
    succ: Vec<Vec<(usize, u64)>>,
    pred: Vec<Vec<(usize, u64)>>,
    self_loop: Vec<u64>,
    out_count: Vec<u64>,
    in_count: Vec<u64>,
}

/// Exchange clustering maximising the class-bigram likelihood
/// `sum log P(c(w2) | c(w1)) + log P(w2 | c(w2))` with maximum-likelihood
/// estimates. A fixed boundary class marks sentence starts and ends.
///
/// Words are initialised by frequency rank modulo `k` and visited in rank
/// order; a word moves only on a strict gain.
pub fn cluster_exchange<S: AsRef<str>>(corpus: &[Vec<S>], k: usize, max_iters: usize) -> Result<Clustering, NgramError> {
    if k < 2 {
        return Err(NgramError::Contract(format!("need at least 2 classes, got {k}")));
    }
    let mut freq: HashMap<&str, u64> = HashMap::new();
    for t in corpus.iter().flatten() {
        *freq.entry(t.as_ref()).or_default() += 1;
    }
    if freq.is_empty() {
        return Err(NgramError::EmptyCorpus);
    }
    let mut words: Vec<(&str, u64)> = freq.into_iter().collect();
    words.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let k = if k > words.len() {
        log::warn!("{k} classes requested for {} distinct words; using {}", words.len(), words.len());
        words.len()
    } else {
        k
    };
    let index: HashMap<&str, usize> = words.iter().enumerate().map(|(i, (w, _))| (*w, i)).collect();
    let boundary = words.len();
    let graph = build_graph(corpus, &index, boundary);

    let mut class: Vec<usize> = (0..words.len()).map(|i| i % k).collect();
    class.push(k);
    let mut st = State { k, class, n: vec![0; (k + 1) * (k + 1)], left: vec![0; k + 1], right: vec![0; k + 1] };
    for (w, succ) in graph.succ.iter().enumerate() {
        for &(v, c) in succ {
            let (a, b) = (st.class[w], st.class[v]);
            *st.cell(a, b) += c;
        }
        let a = st.class[w];
        st.left[a] += graph.out_count[w];
        st.right[a] += graph.in_count[w];
    }
    let emission: f64 = graph.in_count.iter().map(|&c| xlogx(c)).sum();
    let objective = |st: &State| {
        st.n.iter().map(|&c| xlogx(c)).sum::<f64>() - st.left.iter().map(|&c| xlogx(c)).sum::<f64>()
            - st.right.iter().map(|&c| xlogx(c)).sum::<f64>()
            + emission
    };

    let mut trace = vec![objective(&st)];
    let mut moves = Vec::new();
    let mut r = vec![0u64; k + 1];
    let mut l = vec![0u64; k + 1];
    for _ in 0..max_iters {
        let mut moved = 0;
        for w in 0..boundary {
            if exchange_word(&mut st, &graph, w, &mut r, &mut l) {
                moved += 1;
            }
        }
        trace.push(objective(&st));
        moves.push(moved);
        if moved == 0 {
            break;
        }
    }
    let classes = words.iter().enumerate().map(|(i, (w, _))| ((*w).to_owned(), st.class[i] as u32)).collect();
    let map = ClassMap { k, unk_class: st.class[boundary - 1] as u32, classes };
    Ok(Clustering { map, objective: trace, moves })
}

fn build_graph<S: AsRef<str>>(corpus: &[Vec<S>], index: &HashMap<&str, usize>, boundary: usize) -> Graph {
    let mut pairs: HashMap<(usize, usize), u64> = HashMap::new();
    for sentence in corpus.iter().filter(|s| !s.is_empty()) {
        let mut prev = boundary;
        for t in sentence {
            let id = index[t.as_ref()];
            *pairs.entry((prev, id)).or_default() += 1;
            prev = id;
        }
        *pairs.entry((prev, boundary)).or_default() += 1;
    }
    let mut sorted: Vec<((usize, usize), u64)> = pairs.into_iter().collect();
    sorted.sort_unstable();
    let n = boundary + 1;
    let mut g = Graph {
        succ: vec![Vec::new(); n],
        pred: vec![Vec::new(); n],
        self_loop: vec![0; n],
        out_count: vec![0; n],
        in_count: vec![0; n],
    };
    for ((a, b), c) in sorted {
        g.succ[a].push((b, c));
        g.out_count[a] += c;
        g.in_count[b] += c;
        if a == b {
            g.self_loop[a] += c;
        } else {
            g.pred[b].push((a, c));
        }
    }
    g
}

/// Takes `w` out of its class, then puts it into the best class. Returns
/// whether the class changed.
fn exchange_word(st: &mut State, g: &Graph, w: usize, r: &mut [u64], l: &mut [u64]) -> bool {
    let mut touched_r = Vec::new();
    let mut touched_l = Vec::new();
    for &(v, c) in &g.succ[w] {
        if v != w {
            let cv = st.class[v];
            if r[cv] == 0 {
                touched_r.push(cv);
            }
            r[cv] += c;
        }
    }
    for &(u, c) in &g.pred[w] {
        let cu = st.class[u];
        if l[cu] == 0 {
            touched_l.push(cu);
        }
        l[cu] += c;
    }
    let (s, nl, nr) = (g.self_loop[w], g.out_count[w], g.in_count[w]);
    let from = st.class[w];
    apply(st, from, r, l, &touched_r, &touched_l, s, nl, nr, false);

    let gain = |st: &State, b: usize| -> f64 {
        let row = b * (st.k + 1);
        let mut d = 0.0;
        for &c in &touched_r {
            if c != b {
                let old = st.n[row + c];
                d += xlogx(old + r[c]) - xlogx(old);
            }
        }
        for &c in &touched_l {
            if c != b {
                let old = st.n[c * (st.k + 1) + b];
                d += xlogx(old + l[c]) - xlogx(old);
            }
        }
        let old = st.n[row + b];
        d += xlogx(old + r[b] + l[b] + s) - xlogx(old);
        d - (xlogx(st.left[b] + nl) - xlogx(st.left[b])) - (xlogx(st.right[b] + nr) - xlogx(st.right[b]))
    };
    let stay = gain(st, from);
    let mut best = (from, stay);
    for b in 0..st.k {
        let v = gain(st, b);
        if v > best.1 + 1e-9 * (1.0 + stay.abs()) {
            best = (b, v);
        }
    }
    apply(st, best.0, r, l, &touched_r, &touched_l, s, nl, nr, true);
    st.class[w] = best.0;
    for &c in touched_r.iter().chain(&touched_l) {
        r[c] = 0;
        l[c] = 0;
    }
    best.0 != from
}

#[allow(clippy::too_many_arguments)]
fn apply(st: &mut State, b: usize, r: &[u64], l: &[u64], tr: &[usize], tl: &[usize], s: u64, nl: u64, nr: u64, add: bool) {
    let step = |x: &mut u64, by: u64| {
        if add {
            *x += by
        } else {
            *x -= by
        }
    };
    for &c in tr {
        step(st.cell(b, c), r[c]);
    }
    for &c in tl {
        step(st.cell(c, b), l[c]);
    }
    step(st.cell(b, b), s);
    step(&mut st.left[b], nl);
    step(&mut st.right[b], nr);
}
