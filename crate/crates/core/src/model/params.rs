use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Param, Tensor};

use super::ModelConfig;

/// One GRU direction: input, recurrent and bias weights for the update
/// gate `z`, reset gate `r` and candidate state `h`.
#[derive(Clone, Debug, PartialEq)]
pub struct GruParams {
    pub w_z: Param,
    pub w_r: Param,
    pub w_h: Param,
    pub u_z: Param,
    pub u_r: Param,
    pub u_h: Param,
    pub b_z: Param,
    pub b_r: Param,
    pub b_h: Param,
}

pub(crate) const GRU_TENSORS: usize = 9;

impl GruParams {
    fn init(prefix: &str, input: usize, hidden: usize, range: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut w = |gate: &str| Param::new(format!("{prefix}.w_{gate}"), uniform(input, hidden, range, rng));
        let (w_z, w_r, w_h) = (w("z"), w("r"), w("h"));
        let mut u = |gate: &str| Param::new(format!("{prefix}.u_{gate}"), orthogonal(hidden, rng));
        let (u_z, u_r, u_h) = (u("z"), u("r"), u("h"));
        let b = |gate: &str| Param::new(format!("{prefix}.b_{gate}"), Tensor::zeros(1, hidden));
        Self { w_z, w_r, w_h, u_z, u_r, u_h, b_z: b("z"), b_r: b("r"), b_h: b("h") }
    }

    pub fn tensors(&self) -> [&Param; GRU_TENSORS] {
        [&self.w_z, &self.w_r, &self.w_h, &self.u_z, &self.u_r, &self.u_h, &self.b_z, &self.b_r, &self.b_h]
    }

    pub fn tensors_mut(&mut self) -> [&mut Param; GRU_TENSORS] {
        [
            &mut self.w_z,
            &mut self.w_r,
            &mut self.w_h,
            &mut self.u_z,
            &mut self.u_r,
            &mut self.u_h,
            &mut self.b_z,
            &mut self.b_r,
            &mut self.b_h,
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiGru {
    pub forward: GruParams,
    pub backward: GruParams,
}

/// Every trainable tensor of the reader. The attention layers have no
/// weights of their own.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub embedding: Param,
    pub doc: BiGru,
    pub query: BiGru,
}

impl ModelParams {
    /// Fixed parameter order; position in this list is the tape slot.
    pub fn tensors(&self) -> Vec<&Param> {
        let mut out = vec![&self.embedding];
        for g in [&self.doc.forward, &self.doc.backward, &self.query.forward, &self.query.backward] {
            out.extend(g.tensors());
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Param> {
        let mut out = vec![&mut self.embedding];
        let ModelParams { doc, query, .. } = self;
        for g in [&mut doc.forward, &mut doc.backward, &mut query.forward, &mut query.backward] {
            out.extend(g.tensors_mut());
        }
        out
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.value.rows()
    }

    pub fn embed_dim(&self) -> usize {
        self.embedding.value.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.doc.forward.u_z.value.rows()
    }

    pub fn zero_grad(&mut self) {
        self.tensors_mut().into_iter().for_each(Param::zero_grad);
    }
}

/// Embeddings and GRU input weights from U(-r, r), recurrent weights
/// orthogonal, biases zero. Deterministic in `config.seed`.
pub fn init_params(config: &ModelConfig, vocab_size: usize) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (e, d, r) = (config.embed_dim, config.hidden_dim, config.init_range);
    let embedding = Param::new("embedding", uniform(vocab_size, e, r, &mut rng));
    let mut bigru = |name: &str| BiGru {
        forward: GruParams::init(&format!("{name}.fwd"), e, d, r, &mut rng),
        backward: GruParams::init(&format!("{name}.bwd"), e, d, r, &mut rng),
    };
    let doc = bigru("doc");
    let query = bigru("query");
    ModelParams { embedding, doc, query }
}

fn uniform(rows: usize, cols: usize, range: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-range..range)).collect();
    Tensor::new(rows, cols, data).expect("positive extents")
}

/// Q factor of a Gaussian matrix, column signs fixed so diag(R) > 0, which
/// makes Q Haar-distributed.
fn orthogonal(n: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let g = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let data = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| q[(i, j)]).collect();
    Tensor::new(n, n, data).expect("positive extents")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig { embed_dim: 6, hidden_dim: 5, seed: 7, ..ModelConfig::default() }
    }

    #[test]
    fn recurrent_weights_are_orthogonal() {
        let p = init_params(&small(), 11);
        for g in [&p.doc.forward, &p.doc.backward, &p.query.forward, &p.query.backward] {
            for u in [&g.u_z, &g.u_r, &g.u_h] {
                let rtr = u.value.transpose().matmul(&u.value).unwrap();
                let eye = Tensor::identity(5);
                for (a, b) in rtr.data().iter().zip(eye.data()) {
                    assert!((a - b).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn embeddings_inside_interval() {
        let p = init_params(&small(), 50);
        assert!(p.embedding.value.data().iter().all(|x| x.abs() < 0.05));
        assert_eq!(p.vocab_size(), 50);
        assert!(p.doc.forward.b_z.value.data().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn same_seed_same_params() {
        assert_eq!(init_params(&small(), 9), init_params(&small(), 9));
        let other = ModelConfig { seed: 8, ..small() };
        assert_ne!(init_params(&small(), 9), init_params(&other, 9));
    }

    #[test]
    fn parameter_count_and_order() {
        let p = init_params(&small(), 9);
        let names: Vec<_> = p.tensors().iter().map(|t| t.name.clone()).collect();
        assert_eq!(names.len(), 1 + 4 * GRU_TENSORS);
        assert_eq!(names[0], "embedding");
        assert_eq!(names[1], "doc.fwd.w_z");
        assert_eq!(names[37 - 1], "query.bwd.b_h");
    }
}
