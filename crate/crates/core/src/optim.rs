//! Adam with global-norm gradient clipping.

use serde::{Deserialize, Serialize};

use crate::nn::ParamStore;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global L2 norm above which gradients are rescaled; non-positive disables clipping.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: 10.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam<F> {
    pub config: AdamConfig,
    pub m: Vec<Tensor<F>>,
    pub v: Vec<Tensor<F>>,
    pub step: u64,
}

impl<F: Scalar> Adam<F> {
    pub fn new(config: AdamConfig, store: &ParamStore<F>) -> Self {
        Self { config, m: store.zeros_like(), v: store.zeros_like(), step: 0 }
    }

    /// Gradient-descent step on `grads` (one tensor per parameter; frozen entries are skipped).
    /// Returns the pre-clipping global norm.
    pub fn step(&mut self, store: &mut ParamStore<F>, grads: &mut [Tensor<F>]) -> f64 {
        let norm = grads
            .iter()
            .zip(store.entries())
            .filter(|(_, e)| !e.frozen)
            .map(|(g, _)| g.data().iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        if self.config.clip_norm > 0.0 && norm > self.config.clip_norm {
            let c = F::lit(self.config.clip_norm / norm);
            for g in grads.iter_mut() {
                g.data_mut().iter_mut().for_each(|x| *x *= c);
            }
        }
        self.step += 1;
        let c = &self.config;
        let t = self.step as f64;
        let bc1 = 1.0 - c.beta1.powf(t);
        let bc2 = 1.0 - c.beta2.powf(t);
        let step_size = F::lit(c.lr / bc1);
        let (b1, b2, eps) = (F::lit(c.beta1), F::lit(c.beta2), F::lit(c.eps));
        let inv_bc2 = F::lit(1.0 / bc2);
        let ids: Vec<_> = store.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            if store.entry(id).frozen {
                continue;
            }
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = store.get_mut(id).data_mut();
            for j in 0..p.len() {
                m[j] = b1 * m[j] + (F::one() - b1) * g[j];
                v[j] = b2 * v[j] + (F::one() - b2) * g[j] * g[j];
                p[j] -= step_size * m[j] / ((v[j] * inv_bc2).sqrt() + eps);
            }
        }
        norm
    }
}
