use serde::{Deserialize, Serialize};

use super::tensor::{Param, Tensor};
use super::AutodiffError;

/// Rescales all gradients so their joint L2 norm is at most `threshold`.
///
/// Returns the factor that was applied (1 when no clipping happened).
pub fn clip_global_norm(grads: &mut [&mut Tensor], threshold: f64) -> f64 {
    assert!(threshold > 0.0, "clip threshold must be positive");
    let norm = global_norm(grads.iter().map(|g| &**g));
    if norm <= threshold {
        return 1.0;
    }
    let scale = threshold / norm;
    for g in grads.iter_mut() {
        g.scale_in_place(scale);
    }
    scale
}

pub fn global_norm<'a>(grads: impl IntoIterator<Item = &'a Tensor>) -> f64 {
    grads.into_iter().map(Tensor::squared_norm).sum::<f64>().sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 0.001, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Moment estimates for Adam, one pair per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &[&Param], config: AdamConfig) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.value.rows(), p.value.cols())).collect();
        Self { config, step: 0, first_moment: zeros(), second_moment: zeros() }
    }

    /// One bias-corrected Adam update using each parameter's `grad`.
    pub fn step(&mut self, params: &mut [&mut Param]) -> Result<(), AutodiffError> {
        if params.len() != self.first_moment.len() {
            return Err(AutodiffError::Contract(format!(
                "adam state tracks {} parameters, got {}",
                self.first_moment.len(),
                params.len()
            )));
        }
        for (p, m) in params.iter().zip(&self.first_moment) {
            if p.value.shape() != m.shape() || p.grad.shape() != m.shape() {
                return Err(AutodiffError::shape("adam_step", format!("{} is {:?}, moments are {:?}", p.name, p.value.shape(), m.shape())));
            }
        }
        self.step += 1;
        let AdamConfig { learning_rate, beta1, beta2, epsilon } = self.config;
        let t = self.step as i32;
        let correction1 = 1.0 - beta1.powi(t);
        let correction2 = 1.0 - beta2.powi(t);
        for ((p, m), v) in params.iter_mut().zip(&mut self.first_moment).zip(&mut self.second_moment) {
            let Param { value, grad, .. } = &mut **p;
            for (((x, g), m), v) in value.data_mut().iter_mut().zip(grad.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / correction1;
                let v_hat = *v / correction2;
                *x -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_examples() {
        let mut g = Tensor::row_vector(vec![3.0, 4.0]).unwrap();
        assert_eq!(clip_global_norm(&mut [&mut g], 5.0), 1.0);
        assert_eq!(g.data(), &[3.0, 4.0]);

        let mut g = Tensor::row_vector(vec![6.0, 8.0]).unwrap();
        assert_eq!(clip_global_norm(&mut [&mut g], 5.0), 0.5);
        assert_eq!(g.data(), &[3.0, 4.0]);

        let mut g = Tensor::zeros(2, 2);
        assert_eq!(clip_global_norm(&mut [&mut g], 5.0), 1.0);
        assert!(g.data().iter().all(|&x| x == 0.0));

        assert_eq!(clip_global_norm(&mut [], 5.0), 1.0);
    }

    #[test]
    fn clip_is_global_across_tensors() {
        let mut a = Tensor::scalar(6.0);
        let mut b = Tensor::scalar(8.0);
        let s = clip_global_norm(&mut [&mut a, &mut b], 5.0);
        assert_eq!(s, 0.5);
        assert_eq!((a.item(), b.item()), (3.0, 4.0));
    }

    #[test]
    fn zero_gradient_leaves_params_alone() {
        let mut p = Param::new("p", Tensor::row_vector(vec![0.3, -0.2]).unwrap());
        let mut state = AdamState::new(&[&p], AdamConfig::default());
        state.step(&mut [&mut p]).unwrap();
        assert_eq!(p.value.data(), &[0.3, -0.2]);
        assert!(state.first_moment[0].data().iter().all(|&x| x == 0.0));
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        for g in [2.5, -0.01] {
            let mut p = Param::new("p", Tensor::scalar(1.0));
            p.grad = Tensor::scalar(g);
            let mut state = AdamState::new(&[&p], AdamConfig::default());
            state.step(&mut [&mut p]).unwrap();
            let moved = 1.0 - p.value.item();
            assert!((moved - 0.001 * g.signum()).abs() < 1e-8, "moved {moved}");
        }
    }

    #[test]
    fn descends_a_parabola() {
        // Reference loop written out by hand against the textbook update.
        let (lr, b1, b2, eps) = (0.1, 0.9, 0.999, 1e-8);
        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        let mut reference = Vec::new();
        for t in 1..=10 {
            let g = 2.0 * x;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            x -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
            reference.push(x);
        }

        let mut p = Param::new("p", Tensor::scalar(1.0));
        let mut state = AdamState::new(&[&p], AdamConfig { learning_rate: 0.1, ..Default::default() });
        let mut prev = 1.0f64;
        for expected in reference {
            p.grad = Tensor::scalar(2.0 * p.value.item());
            state.step(&mut [&mut p]).unwrap();
            let now = p.value.item();
            assert!((now - expected).abs() < 1e-12);
            assert!(now.abs() < prev.abs());
            prev = now;
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let p = Param::new("p", Tensor::zeros(2, 2));
        let mut state = AdamState::new(&[&p], AdamConfig::default());
        let mut q = Param::new("q", Tensor::zeros(3, 1));
        assert!(state.step(&mut [&mut q]).is_err());
    }
}
