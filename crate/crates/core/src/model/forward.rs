use serde::{Deserialize, Serialize};

use crate::autodiff::{Axis, Tape, Tensor, Var};
use crate::corpus::Batch;

use super::params::{GruParams, ModelParams, GRU_TENSORS};
use super::{MergeStrategy, ModelConfig, ModelError};

/// Tape handles for one GRU direction's weights.
struct GruVars {
    w: [Var; 3],
    u: [Var; 3],
    b: [Var; 3],
}

fn put_gru(tape: &mut Tape, gru: &GruParams, first_slot: usize, trainable: bool) -> GruVars {
    let mut vars = gru.tensors().into_iter().enumerate().map(|(i, p)| {
        if trainable {
            tape.param(first_slot + i, &p.value)
        } else {
            tape.constant(p.value.clone())
        }
    });
    let mut next3 = || [vars.next().unwrap(), vars.next().unwrap(), vars.next().unwrap()];
    GruVars { w: next3(), u: next3(), b: next3() }
}

/// Runs one direction over time-major inputs `x` (`steps * batch` rows).
/// `mask[b][t]` marks real tokens. Returns one `batch x d` output per step,
/// zero at padded positions; state is carried unchanged across padding.
fn run_gru(tape: &mut Tape, g: &GruVars, x: Var, mask: &[Vec<bool>], reverse: bool) -> Result<Vec<Var>, ModelError> {
    let batch = mask.len();
    let steps = mask[0].len();
    let hidden = tape.value(g.u[0]).rows();
    let mut projected = [x; 3];
    for k in 0..3 {
        let xw = tape.matmul(x, g.w[k])?;
        projected[k] = tape.add_row(xw, g.b[k])?;
    }
    let mut h = tape.constant(Tensor::zeros(batch, hidden));
    let mut outputs = vec![h; steps];
    let order: Box<dyn Iterator<Item = usize>> = if reverse { Box::new((0..steps).rev()) } else { Box::new(0..steps) };
    for t in order {
        let xz = tape.slice_rows(projected[0], t * batch, batch)?;
        let xr = tape.slice_rows(projected[1], t * batch, batch)?;
        let xh = tape.slice_rows(projected[2], t * batch, batch)?;
        let hz = tape.matmul(h, g.u[0])?;
        let pre_z = tape.add(xz, hz)?;
        let z = tape.sigmoid(pre_z);
        let hr = tape.matmul(h, g.u[1])?;
        let pre_r = tape.add(xr, hr)?;
        let r = tape.sigmoid(pre_r);
        let rh = tape.mul(r, h)?;
        let rhu = tape.matmul(rh, g.u[2])?;
        let pre_h = tape.add(xh, rhu)?;
        let candidate = tape.tanh(pre_h);
        // (1 - z) h + z h~ written as h + z (h~ - h)
        let diff = tape.sub(candidate, h)?;
        let step = tape.mul(z, diff)?;
        let h_new = tape.add(h, step)?;
        if mask.iter().all(|m| m[t]) {
            h = h_new;
            outputs[t] = h_new;
        } else {
            let m = tape.constant(mask_matrix(mask, t, hidden));
            let delta = tape.sub(h_new, h)?;
            let kept = tape.mul(m, delta)?;
            h = tape.add(h, kept)?;
            outputs[t] = tape.mul(m, h)?;
        }
    }
    Ok(outputs)
}

fn mask_matrix(mask: &[Vec<bool>], t: usize, width: usize) -> Tensor {
    let data = mask.iter().flat_map(|m| std::iter::repeat_n(if m[t] { 1.0 } else { 0.0 }, width)).collect();
    Tensor::new(mask.len(), width, data).expect("positive extents")
}

fn time_major(ids: &[Vec<usize>]) -> Vec<usize> {
    let steps = ids[0].len();
    (0..steps).flat_map(|t| ids.iter().map(move |row| row[t])).collect()
}

/// Contextual encodings for every sample of a batch, trimmed to real
/// tokens: `doc[b]` is `len_d x 2d`, `query[b]` is `len_q x 2d`.
pub struct Encodings {
    pub doc: Vec<Var>,
    pub query: Vec<Var>,
    /// Final forward state joined with the final backward state (`1 x 2d`).
    pub query_summary: Vec<Var>,
}

/// Options that vary between training and inference.
#[derive(Clone, Copy, Debug)]
pub struct PassOptions {
    pub train: bool,
    /// Record parameters as differentiable leaves.
    pub trainable: bool,
    pub dropout_seed: u64,
}

impl PassOptions {
    pub fn inference() -> Self {
        Self { train: false, trainable: false, dropout_seed: 0 }
    }
}

pub fn encode(
    tape: &mut Tape,
    params: &ModelParams,
    config: &ModelConfig,
    batch: &Batch,
    opts: PassOptions,
) -> Result<Encodings, ModelError> {
    if batch.size() == 0 {
        return Err(ModelError::Contract("empty batch".into()));
    }
    let vocab = params.vocab_size();
    if let Some(bad) = batch.doc_ids.iter().chain(&batch.query_ids).flatten().find(|&&id| id >= vocab) {
        return Err(ModelError::Contract(format!("token id {bad} outside an embedding table of {vocab} rows")));
    }
    for b in 0..batch.size() {
        if batch.doc_len(b) == 0 || batch.query_len(b) == 0 {
            return Err(ModelError::Contract(format!("sample {} has an empty document or query", batch.sample_ids[b])));
        }
    }
    let mut slot = 1;
    let mut gru_vars = Vec::with_capacity(4);
    for g in [&params.doc.forward, &params.doc.backward, &params.query.forward, &params.query.backward] {
        gru_vars.push(put_gru(tape, g, slot, opts.trainable));
        slot += GRU_TENSORS;
    }
    let seed = opts.dropout_seed;
    let mut side = |ids: &[Vec<usize>], mask: &[Vec<bool>], fwd: &GruVars, bwd: &GruVars, salt: u64| -> Result<_, ModelError> {
        let emb = tape.embedding(0, &params.embedding.value, &time_major(ids), opts.trainable)?;
        let emb = tape.dropout(emb, config.dropout_rate, opts.train, mix(seed, salt))?;
        let f = run_gru(tape, fwd, emb, mask, false)?;
        let r = run_gru(tape, bwd, emb, mask, true)?;
        let mut joined = Vec::with_capacity(mask.len());
        let mut summary = Vec::with_capacity(mask.len());
        for (b, m) in mask.iter().enumerate() {
            let len = m.iter().filter(|x| **x).count();
            let hf = tape.stack_row(&f[..len], b)?;
            let hb = tape.stack_row(&r[..len], b)?;
            let mut h = tape.concat(&[hf, hb], Axis::Cols)?;
            if config.dropout_gru_outputs {
                h = tape.dropout(h, config.dropout_rate, opts.train, mix(mix(seed, salt), 1 + b as u64))?;
            }
            joined.push(h);
            let last_f = tape.stack_row(&f[len - 1..len], b)?;
            let first_b = tape.stack_row(&r[..1], b)?;
            summary.push(tape.concat(&[last_f, first_b], Axis::Cols)?);
        }
        Ok((joined, summary))
    };
    let (doc, _) = side(&batch.doc_ids, &batch.doc_mask, &gru_vars[0], &gru_vars[1], 1)?;
    let (query, query_summary) = side(&batch.query_ids, &batch.query_mask, &gru_vars[2], &gru_vars[3], 2)?;
    Ok(Encodings { doc, query, query_summary })
}

/// splitmix64 finaliser, used to derive independent dropout streams.
pub(crate) fn mix(seed: u64, salt: u64) -> u64 {
    let mut z = seed.wrapping_add(salt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `M(i, j) = h_doc(i) . h_query(j)`.
pub fn matching_matrix(h_doc: &Tensor, h_query: &Tensor) -> Result<Tensor, ModelError> {
    Ok(h_doc.matmul(&h_query.transpose())?)
}

/// Tape handles for one sample's attention computation.
#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub m: Var,
    pub alpha: Var,
    pub beta_rows: Option<Var>,
    pub beta_avg: Option<Var>,
    /// Attention over document positions, `len_d x 1`.
    pub s: Var,
}

/// Column-wise softmax `alpha`, row-wise softmax `beta`, `beta` averaged
/// over real document rows, and `s = alpha . beta_avg^T`.
pub fn attention_over_attention_on(tape: &mut Tape, m: Var, doc_mask: &[bool], query_mask: &[bool]) -> Result<AttentionVars, ModelError> {
    let (rows, cols) = (tape.value(m).rows(), tape.value(m).cols());
    check_masks(rows, cols, doc_mask, query_mask)?;
    let alpha_mask: Vec<bool> = (0..rows * cols).map(|k| doc_mask[k / cols]).collect();
    let beta_mask: Vec<bool> = (0..rows * cols).map(|k| query_mask[k % cols]).collect();
    let alpha = tape.masked_softmax(m, &alpha_mask, Axis::Rows)?;
    let beta_rows = tape.masked_softmax(m, &beta_mask, Axis::Cols)?;
    let beta_avg = tape.mean(beta_rows, Axis::Rows, Some(doc_mask))?;
    let beta_col = tape.transpose(beta_avg);
    let s = tape.matmul(alpha, beta_col)?;
    Ok(AttentionVars { m, alpha, beta_rows: Some(beta_rows), beta_avg: Some(beta_avg), s })
}

/// Heuristic merge: the document attentions of the real query words,
/// averaged.
pub fn average_attention_on(tape: &mut Tape, m: Var, doc_mask: &[bool], query_mask: &[bool]) -> Result<AttentionVars, ModelError> {
    let (rows, cols) = (tape.value(m).rows(), tape.value(m).cols());
    check_masks(rows, cols, doc_mask, query_mask)?;
    let alpha_mask: Vec<bool> = (0..rows * cols).map(|k| doc_mask[k / cols]).collect();
    let alpha = tape.masked_softmax(m, &alpha_mask, Axis::Rows)?;
    let s = tape.mean(alpha, Axis::Cols, Some(query_mask))?;
    Ok(AttentionVars { m, alpha, beta_rows: None, beta_avg: None, s })
}

/// Single attention: softmax over `h_doc . q` for one query vector `q`
/// (`1 x 2d`).
pub fn single_attention_on(tape: &mut Tape, h_doc: Var, q: Var, doc_mask: &[bool]) -> Result<AttentionVars, ModelError> {
    let qt = tape.transpose(q);
    let m = tape.matmul(h_doc, qt)?;
    if doc_mask.len() != tape.value(m).rows() {
        return Err(ModelError::Contract(format!("doc mask of {} for {} rows", doc_mask.len(), tape.value(m).rows())));
    }
    let s = tape.masked_softmax(m, doc_mask, Axis::Rows)?;
    Ok(AttentionVars { m, alpha: s, beta_rows: None, beta_avg: None, s })
}

fn check_masks(rows: usize, cols: usize, doc_mask: &[bool], query_mask: &[bool]) -> Result<(), ModelError> {
    if doc_mask.len() != rows || query_mask.len() != cols {
        return Err(ModelError::Contract(format!(
            "masks of {}/{} for a {rows}x{cols} matching matrix",
            doc_mask.len(),
            query_mask.len()
        )));
    }
    Ok(())
}

/// Everything the attention layer computed for one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace {
    pub m: Vec<Vec<f64>>,
    pub alpha: Vec<Vec<f64>>,
    pub beta_rows: Vec<Vec<f64>>,
    pub beta_avg: Vec<f64>,
    pub s: Vec<f64>,
}

fn rows_of(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

impl AttentionTrace {
    pub(crate) fn from_vars(tape: &Tape, v: &AttentionVars) -> Self {
        Self {
            m: rows_of(tape.value(v.m)),
            alpha: rows_of(tape.value(v.alpha)),
            beta_rows: v.beta_rows.map(|b| rows_of(tape.value(b))).unwrap_or_default(),
            beta_avg: v.beta_avg.map(|b| tape.value(b).data().to_vec()).unwrap_or_default(),
            s: tape.value(v.s).data().to_vec(),
        }
    }
}

/// Off-tape attention-over-attention for a given matching matrix.
pub fn attention_over_attention(m: &Tensor, doc_mask: &[bool], query_mask: &[bool]) -> Result<AttentionTrace, ModelError> {
    let mut tape = Tape::new();
    let mv = tape.constant(m.clone());
    let vars = attention_over_attention_on(&mut tape, mv, doc_mask, query_mask)?;
    Ok(AttentionTrace::from_vars(&tape, &vars))
}

/// Encodes a batch and applies the configured merge to every sample.
pub fn attend(
    tape: &mut Tape,
    params: &ModelParams,
    config: &ModelConfig,
    batch: &Batch,
    opts: PassOptions,
) -> Result<Vec<AttentionVars>, ModelError> {
    let enc = encode(tape, params, config, batch, opts)?;
    let mut out = Vec::with_capacity(batch.size());
    for b in 0..batch.size() {
        let (hd, hq) = (enc.doc[b], enc.query[b]);
        let doc_mask = vec![true; tape.value(hd).rows()];
        let query_mask = vec![true; tape.value(hq).rows()];
        let vars = match config.merge {
            MergeStrategy::Single => single_attention_on(tape, hd, enc.query_summary[b], &doc_mask)?,
            merge => {
                let hqt = tape.transpose(hq);
                let m = tape.matmul(hd, hqt)?;
                if merge == MergeStrategy::Average {
                    average_attention_on(tape, m, &doc_mask, &query_mask)?
                } else {
                    attention_over_attention_on(tape, m, &doc_mask, &query_mask)?
                }
            }
        };
        out.push(vars);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{encode_one_batch, ClozeSample, Vocabulary, BLANK};
    use crate::model::init_params;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn matching_unit_and_orthogonal() {
        let d = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let q = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let m = matching_matrix(&d, &q).unwrap();
        assert_eq!(m.data(), &[1.0, 0.0]);
    }

    #[test]
    fn matching_against_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (d, q) = (random(3, 4, &mut rng), random(2, 4, &mut rng));
        let m = matching_matrix(&d, &q).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let mut dot = 0.0;
                for k in 0..4 {
                    dot += d.get(i, k) * q.get(j, k);
                }
                assert_eq!(m.get(i, j), dot);
            }
        }
    }

    #[test]
    fn single_query_word() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = random(5, 1, &mut rng);
        let tr = attention_over_attention(&m, &[true; 5], &[true]).unwrap();
        assert_eq!(tr.beta_avg, vec![1.0]);
        let col: Vec<f64> = tr.alpha.iter().map(|r| r[0]).collect();
        assert_eq!(tr.s, col);
    }

    #[test]
    fn uniform_matrix() {
        let m = Tensor::filled(4, 3, 0.7);
        let tr = attention_over_attention(&m, &[true, true, true, false], &[true, true, false]).unwrap();
        for row in &tr.alpha[..3] {
            for &a in &row[..2] {
                assert!((a - 1.0 / 3.0).abs() < 1e-15);
            }
        }
        assert_eq!(tr.alpha[3], vec![0.0; 3]);
        assert!((tr.beta_avg[0] - 0.5).abs() < 1e-15 && tr.beta_avg[2] == 0.0);
        for &s in &tr.s[..3] {
            assert!((s - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(tr.s[3], 0.0);
    }

    #[test]
    fn random_instance_against_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random(4, 3, &mut rng);
        let tr = attention_over_attention(&m, &[true; 4], &[true; 3]).unwrap();
        for i in 0..4 {
            let mut acc = 0.0;
            for j in 0..3 {
                acc += tr.beta_avg[j] * tr.alpha[i][j];
            }
            assert!((acc - tr.s[i]).abs() < 1e-12);
        }
        assert!((tr.s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fully_masked_query_is_degenerate() {
        let m = Tensor::filled(2, 2, 1.0);
        assert!(attention_over_attention(&m, &[true, true], &[false, false]).is_err());
        assert!(attention_over_attention(&m, &[false, false], &[true, true]).is_err());
    }

    fn scalar_gru(w: [f64; 3], u: [f64; 3], b: [f64; 3]) -> GruParams {
        use crate::autodiff::Param;
        let t = |x: f64| Param::new("x", Tensor::scalar(x));
        GruParams { w_z: t(w[0]), w_r: t(w[1]), w_h: t(w[2]), u_z: t(u[0]), u_r: t(u[1]), u_h: t(u[2]), b_z: t(b[0]), b_r: t(b[1]), b_h: t(b[2]) }
    }

    #[test]
    fn scalar_gru_matches_hand_formula() {
        let (w, u, b) = ([0.5, -0.3, 0.8], [0.2, 0.7, -0.4], [0.1, 0.0, -0.2]);
        let g = scalar_gru(w, u, b);
        let xs = [0.9, -1.1];
        let mut tape = Tape::new();
        let vars = put_gru(&mut tape, &g, 0, false);
        let x = tape.constant(Tensor::column_vector(xs.to_vec()).unwrap());
        let out = run_gru(&mut tape, &vars, x, &[vec![true, true]], false).unwrap();
        let sig = crate::autodiff::sigmoid;
        let mut h = 0.0;
        for (t, &xt) in xs.iter().enumerate() {
            let z = sig(xt * w[0] + b[0] + h * u[0]);
            let r = sig(xt * w[1] + b[1] + h * u[1]);
            let cand = (xt * w[2] + b[2] + (r * h) * u[2]).tanh();
            h = (1.0 - z) * h + z * cand;
            assert!((tape.value(out[t]).item() - h).abs() < 1e-12);
        }
    }

    fn sample(doc: &str, query: &str) -> ClozeSample {
        ClozeSample {
            sample_id: "s".into(),
            sentences: vec![doc.split_whitespace().map(str::to_owned).collect()],
            query_tokens: query.split_whitespace().map(str::to_owned).collect(),
            answer: "a".into(),
            candidates: vec![],
        }
    }

    fn tiny() -> ModelConfig {
        ModelConfig { embed_dim: 4, hidden_dim: 3, seed: 11, ..ModelConfig::default() }
    }

    #[test]
    fn one_token_both_directions_see_same_input() {
        let samples = vec![sample("a", BLANK)];
        let vocab = Vocabulary::build(&samples, 1);
        let config = tiny();
        let mut params = init_params(&config, vocab.len());
        params.doc.backward = params.doc.forward.clone();
        let batch = encode_one_batch(&samples, &[0], &vocab);
        let mut tape = Tape::new();
        let enc = encode(&mut tape, &params, &config, &batch, PassOptions::inference()).unwrap();
        let h = tape.value(enc.doc[0]);
        assert_eq!(h.shape(), [1, 6]);
        assert_eq!(&h.row(0)[..3], &h.row(0)[3..]);
    }

    #[test]
    fn padding_changes_nothing() {
        let samples = vec![sample("a b c a", &format!("b {BLANK}")), sample("c b a b c a b", &format!("a c {BLANK} b"))];
        let vocab = Vocabulary::build(&samples, 1);
        let config = tiny();
        let params = init_params(&config, vocab.len());
        let run = |idx: &[usize]| {
            let batch = encode_one_batch(&samples, idx, &vocab);
            let mut tape = Tape::new();
            let att = attend(&mut tape, &params, &config, &batch, PassOptions::inference()).unwrap();
            att.iter().map(|v| tape.value(v.s).data().to_vec()).collect::<Vec<_>>()
        };
        let alone = run(&[0]);
        let padded = run(&[0, 1]);
        for (a, b) in alone[0].iter().zip(&padded[0]) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
