//! Minimal reverse-mode automatic differentiation over dense `f64`
//! matrices, with exactly the primitives the reader needs, plus Adam and
//! global-norm gradient clipping.
//!
//! A forward pass appends nodes to a [`Tape`]; [`Tape::backward`] sweeps it
//! in reverse and [`Tape::accumulate_into`] moves parameter gradients into
//! their [`Param`] accumulators.

mod optim;
mod tape;
mod tensor;

pub use optim::{clip_global_norm, global_norm, AdamConfig, AdamState};
pub use tape::{sigmoid, Axis, Gradients, Tape, Var};
pub use tensor::{Param, Tensor};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("{op}: dimension mismatch: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: slice {slice} has no unmasked entry")]
    DegenerateMask { op: &'static str, slice: usize },
    #[error("backward needs a 1x1 loss, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("{0}")]
    Contract(String),
}

impl AutodiffError {
    pub(crate) fn shape(op: &'static str, detail: String) -> Self {
        Self::Shape { op, detail }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
        Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Central finite differences against the tape's analytic gradient.
    /// Non-scalar outputs are reduced with fixed random weights first so
    /// every output entry matters.
    fn grad_check(inputs: Vec<Tensor>, build: impl Fn(&mut Tape, &[Var]) -> Var) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let weights = {
            let mut t = Tape::new();
            let vs: Vec<Var> = inputs.iter().map(|x| t.constant(x.clone())).collect();
            let out = build(&mut t, &vs);
            let [r, c] = t.value(out).shape();
            random(&mut rng, r, c)
        };
        let eval = |tape: &mut Tape, vars: &[Var]| -> Var {
            let out = build(tape, vars);
            let w = tape.constant(weights.clone());
            let prod = tape.mul(out, w).unwrap();
            tape.sum(prod)
        };
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = eval(&mut tape, &vars);
        let grads = tape.backward(loss).unwrap();

        let h = 1e-5;
        let mut worst = 0.0f64;
        for (k, input) in inputs.iter().enumerate() {
            let analytic = grads.wrt(&tape, vars[k]);
            for i in 0..input.len() {
                let at = |delta: f64| {
                    let mut t = Tape::new();
                    let vs: Vec<Var> = inputs
                        .iter()
                        .enumerate()
                        .map(|(j, x)| {
                            let mut x = x.clone();
                            if j == k {
                                x.data_mut()[i] += delta;
                            }
                            t.constant(x)
                        })
                        .collect();
                    let l = eval(&mut t, &vs);
                    t.value(l).item()
                };
                let numeric = (at(h) - at(-h)) / (2.0 * h);
                let a = analytic.data()[i];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
        worst
    }

    #[test]
    fn matmul_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random(&mut rng, 3, 4);
        let mut tape = Tape::new();
        let i = tape.constant(Tensor::identity(3));
        let av = tape.constant(a.clone());
        let out = tape.matmul(i, av).unwrap();
        assert_eq!(tape.value(out), &a);
    }

    #[test]
    fn masked_softmax_example() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row_vector(vec![1.0; 4]).unwrap());
        let y = tape.masked_softmax(x, &[true, true, true, false], Axis::Cols).unwrap();
        let v = tape.value(y).data();
        for &p in &v[..3] {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(v[3], 0.0);
    }

    #[test]
    fn masked_softmax_rejects_empty_slice() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(2, 2));
        let err = tape.masked_softmax(x, &[true, false, true, false], Axis::Rows).unwrap_err();
        assert!(matches!(err, AutodiffError::DegenerateMask { slice: 1, .. }));
    }

    #[test]
    fn analytic_activation_values() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::scalar(0.0));
        let s = tape.sigmoid(z);
        let t = tape.tanh(z);
        assert_eq!(tape.value(s).item(), 0.5);
        assert_eq!(tape.value(t).item(), 0.0);
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(2, 3));
        let b = tape.constant(Tensor::zeros(2, 3));
        let err = tape.matmul(a, b).unwrap_err();
        assert!(err.to_string().starts_with("matmul"));
        let c = tape.constant(Tensor::zeros(3, 2));
        assert!(tape.add(a, c).unwrap_err().to_string().starts_with("add"));
    }

    #[test]
    fn sum_gives_all_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::filled(2, 3, 0.7));
        let l = tape.sum(x);
        let g = tape.backward(l).unwrap();
        assert!(g.wrt(&tape, x).data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn sigmoid_slope_at_zero() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::scalar(0.0));
        let s = tape.sigmoid(w);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(&tape, w).item(), 0.25);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(2, 1));
        assert!(matches!(tape.backward(x), Err(AutodiffError::NonScalarLoss { .. })));
    }

    #[test]
    fn unreachable_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0));
        let y = tape.leaf(Tensor::filled(1, 2, 1.0));
        let l = tape.scale(x, 3.0);
        let g = tape.backward(l).unwrap();
        assert!(g.get(y).is_none());
        assert_eq!(g.wrt(&tape, y).data(), &[0.0, 0.0]);
    }

    #[test]
    fn param_grads_accumulate_until_zeroed() {
        let mut p = Param::new("w", Tensor::row_vector(vec![1.0, 2.0]).unwrap());
        for expected in [3.0, 6.0] {
            let mut tape = Tape::new();
            let w = tape.param(0, &p.value);
            let l = tape.sum(w);
            let l = tape.scale(l, 3.0);
            let g = tape.backward(l).unwrap();
            tape.accumulate_into(&g, &mut [&mut p]).unwrap();
            assert_eq!(p.grad.data(), &[expected, expected]);
        }
        p.zero_grad();
        assert_eq!(p.grad.data(), &[0.0, 0.0]);
    }

    #[test]
    fn embedding_scatters_into_param_rows() {
        let mut table = Param::new("emb", Tensor::new(3, 2, vec![0., 1., 2., 3., 4., 5.]).unwrap());
        let mut tape = Tape::new();
        let e = tape.embedding(0, &table.value, &[2, 0, 2], true).unwrap();
        assert_eq!(tape.value(e).data(), &[4., 5., 0., 1., 4., 5.]);
        let l = tape.sum(e);
        let g = tape.backward(l).unwrap();
        tape.accumulate_into(&g, &mut [&mut table]).unwrap();
        assert_eq!(table.grad.data(), &[1., 1., 0., 0., 2., 2.]);
    }

    #[test]
    fn dropout_identity_cases() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::filled(2, 2, 3.0));
        assert_eq!(tape.dropout(x, 0.5, false, 7).unwrap(), x);
        assert_eq!(tape.dropout(x, 0.0, true, 7).unwrap(), x);
        assert!(tape.dropout(x, 1.0, true, 7).is_err());
    }

    #[test]
    fn dropout_preserves_expectation() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::filled(1, 200, 2.0));
        let trials = 400;
        let mut total = 0.0;
        for seed in 0..trials {
            let y = tape.dropout(x, 0.3, true, seed).unwrap();
            total += tape.value(y).data().iter().sum::<f64>();
        }
        let mean = total / (trials as f64 * 200.0);
        // Per-entry std is 2*sqrt(0.3/0.7) ~ 1.31; 80k samples give ~0.005.
        assert!((mean - 2.0).abs() < 0.03, "mean {mean}");
    }

    #[test]
    fn dropout_is_deterministic_per_seed() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::filled(4, 4, 1.0));
        let a = tape.dropout(x, 0.5, true, 11).unwrap();
        let b = tape.dropout(x, 0.5, true, 11).unwrap();
        assert_eq!(tape.value(a), tape.value(b));
    }

    #[test]
    fn gradient_check_per_primitive() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tol = 1e-4;
        let a = random(&mut rng, 3, 4);
        let b = random(&mut rng, 4, 2);
        let c = random(&mut rng, 3, 4);
        let row = random(&mut rng, 1, 4);

        let checks: Vec<(&str, Vec<Tensor>, Box<dyn Fn(&mut Tape, &[Var]) -> Var>)> = vec![
            ("matmul", vec![a.clone(), b.clone()], Box::new(|t, v| t.matmul(v[0], v[1]).unwrap())),
            ("transpose", vec![a.clone()], Box::new(|t, v| t.transpose(v[0]))),
            ("add", vec![a.clone(), c.clone()], Box::new(|t, v| t.add(v[0], v[1]).unwrap())),
            ("sub", vec![a.clone(), c.clone()], Box::new(|t, v| t.sub(v[0], v[1]).unwrap())),
            ("mul", vec![a.clone(), c.clone()], Box::new(|t, v| t.mul(v[0], v[1]).unwrap())),
            ("add_row", vec![a.clone(), row.clone()], Box::new(|t, v| t.add_row(v[0], v[1]).unwrap())),
            ("scale", vec![a.clone()], Box::new(|t, v| t.scale(v[0], -1.7))),
            ("sigmoid", vec![a.clone()], Box::new(|t, v| t.sigmoid(v[0]))),
            ("tanh", vec![a.clone()], Box::new(|t, v| t.tanh(v[0]))),
            ("concat_cols", vec![a.clone(), b.transpose().clone()], Box::new(|t, v| {
                let x = t.transpose(v[1]);
                let x = t.slice_rows(x, 0, 3).unwrap();
                t.concat(&[v[0], x], Axis::Cols).unwrap()
            })),
            ("concat_rows", vec![a.clone(), c.clone()], Box::new(|t, v| t.concat(&[v[0], v[1]], Axis::Rows).unwrap())),
            ("slice_rows", vec![a.clone()], Box::new(|t, v| t.slice_rows(v[0], 1, 2).unwrap())),
            ("stack_row", vec![a.clone(), c.clone()], Box::new(|t, v| t.stack_row(&[v[0], v[1], v[0]], 2).unwrap())),
            ("softmax_rows", vec![a.clone()], Box::new(|t, v| {
                let mask = [true, true, false, true, false, true, true, true, true, true, true, false];
                t.masked_softmax(v[0], &mask, Axis::Rows).unwrap()
            })),
            ("softmax_cols", vec![a.clone()], Box::new(|t, v| {
                let mask = [true, false, true, true, true, true, true, false, false, false, true, true];
                t.masked_softmax(v[0], &mask, Axis::Cols).unwrap()
            })),
            ("mean_rows", vec![a.clone()], Box::new(|t, v| t.mean(v[0], Axis::Rows, Some(&[true, false, true])).unwrap())),
            ("mean_cols", vec![a.clone()], Box::new(|t, v| t.mean(v[0], Axis::Cols, None).unwrap())),
            ("sum", vec![a.clone()], Box::new(|t, v| t.sum(v[0]))),
            ("gather", vec![a.clone()], Box::new(|t, v| t.gather_rows(v[0], &[2, 0, 2, 1]).unwrap())),
            ("dropout", vec![a.clone()], Box::new(|t, v| t.dropout(v[0], 0.4, true, 3).unwrap())),
            ("neg_log", vec![a.clone()], Box::new(|t, v| {
                let p = t.sigmoid(v[0]);
                t.neg_log(p, 5, 1e-12).unwrap()
            })),
        ];
        for (name, inputs, build) in checks {
            let err = grad_check(inputs, build);
            assert!(err < tol, "{name}: relative error {err}");
        }
    }

    #[test]
    fn gradient_check_composite_graph() {
        // Five inputs through a GRU-like cell, softmax and log loss.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let inputs = vec![
            random(&mut rng, 2, 3),
            random(&mut rng, 3, 3),
            random(&mut rng, 2, 3),
            random(&mut rng, 3, 3),
            random(&mut rng, 1, 3),
        ];
        let err = grad_check(inputs, |t, v| {
            let xw = t.matmul(v[0], v[1]).unwrap();
            let hu = t.matmul(v[2], v[3]).unwrap();
            let pre = t.add(xw, hu).unwrap();
            let pre = t.add_row(pre, v[4]).unwrap();
            let z = t.sigmoid(pre);
            let c = t.tanh(pre);
            let h = t.mul(z, c).unwrap();
            let ht = t.transpose(h);
            let m = t.matmul(h, ht).unwrap();
            let sm = t.masked_softmax(m, &[true; 4], Axis::Rows).unwrap();
            let mean = t.mean(sm, Axis::Cols, None).unwrap();
            t.neg_log(mean, 1, 1e-12).unwrap()
        });
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn backward_is_bit_deterministic() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let mut tape = Tape::new();
            let a = tape.leaf(random(&mut rng, 4, 4));
            let d = tape.dropout(a, 0.2, true, 9).unwrap();
            let s = tape.masked_softmax(d, &[true; 16], Axis::Cols).unwrap();
            let l = tape.neg_log(s, 3, 1e-12).unwrap();
            let g = tape.backward(l).unwrap();
            (tape.value(l).item().to_bits(), g.wrt(&tape, a))
        };
        assert_eq!(run(), run());
    }
}
