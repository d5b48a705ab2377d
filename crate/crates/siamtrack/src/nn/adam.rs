//! Adam optimizer with bias correction.

use std::collections::HashMap;

use super::params::ParamSet;
use super::tensor::{Real, Tensor2D};

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 0.002, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Per-parameter first/second moment state, keyed by parameter name.
pub struct Adam<T> {
    pub cfg: AdamConfig,
    step: u64,
    moments: HashMap<String, (Tensor2D<T>, Tensor2D<T>)>,
}

impl<T: Real> Adam<T> {
    pub fn new(cfg: AdamConfig) -> Self {
        Self { cfg, step: 0, moments: HashMap::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over every parameter of `model`, consuming the gradients
    /// currently stored next to them.
    pub fn step<M: ParamSet<T>>(&mut self, model: &mut M) {
        self.step += 1;
        let t = self.step;
        let cfg = self.cfg;
        let moments = &mut self.moments;
        model.for_each_param("", &mut |name, value, grad| {
            let (m, v) = moments
                .entry(name.to_string())
                .or_insert_with(|| (Tensor2D::zeros(value.rows(), value.cols()), Tensor2D::zeros(value.rows(), value.cols())));
            adam_step_slice(
                value.as_mut_slice(),
                grad.as_slice(),
                m.as_mut_slice(),
                v.as_mut_slice(),
                t,
                &cfg,
            );
        });
    }
}

/// The scalar Adam recurrence over flat buffers:
/// `m = b1 m + (1-b1) g`, `v = b2 v + (1-b2) g^2`,
/// `p -= lr * m/(1-b1^t) / (sqrt(v/(1-b2^t)) + eps)`.
pub fn adam_step_slice<T: Real>(
    param: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    t: u64,
    cfg: &AdamConfig,
) {
    debug_assert_eq!(param.len(), grad.len());
    let b1 = T::of(cfg.beta1);
    let b2 = T::of(cfg.beta2);
    let one = T::one();
    let lr = T::of(cfg.lr);
    let eps = T::of(cfg.eps);
    let bc1 = one - T::of(cfg.beta1.powi(t as i32));
    let bc2 = one - T::of(cfg.beta2.powi(t as i32));
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        param[i] = param[i] - lr * m_hat / (v_hat.sqrt() + eps);
    }
}
