use serde::{Deserialize, Serialize};

use crate::hierarchy::ModelParams;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: ModelParams<T>,
    pub v: ModelParams<T>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(d: usize, num_classes: usize) -> Self {
        Self {
            m: ModelParams::zeros(d, num_classes),
            v: ModelParams::zeros(d, num_classes),
            t: 0,
        }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, cfg: &AdamConfig, lr: f64, params: &mut ModelParams<T>, grads: &ModelParams<T>) {
        self.t += 1;
        let b1 = T::lit(cfg.beta1);
        let b2 = T::lit(cfg.beta2);
        let eps = T::lit(cfg.eps);
        let lr = T::lit(lr);
        let bc1 = T::one() - b1.powi(self.t as i32);
        let bc2 = T::one() - b2.powi(self.t as i32);
        let [pw, pb0, pb2] = params.blocks_mut();
        let [mw, mb0, mb2] = self.m.blocks_mut();
        let [vw, vb0, vb2] = self.v.blocks_mut();
        let [gw, gb0, gb2] = grads.blocks();
        for (p, m, v, g) in [(pw, mw, vw, gw), (pb0, mb0, vb0, gb0), (pb2, mb2, vb2, gb2)] {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
