//! Gated transition prior `p(z_t | z_{t-1}, d)`.

use rand::Rng;

use crate::autograd::Var;
use crate::distributions::{sample_reparameterized, DiagGaussian};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::nn::{positive_scale, GaussianVar, Graph, Linear, ParamGroup, ParamStore};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub f1: Linear,
    pub f2: Linear,
    pub f3: Linear,
    pub f4: Linear,
    pub f5: Linear,
    pub f6: Linear,
    kappa_z: usize,
    kappa_d: usize,
}

impl Transition {
    pub fn new<F: Scalar>(cfg: &ModelConfig, store: &mut ParamStore<F>, rng: &mut impl Rng) -> Self {
        let (kz, kd, h) = (cfg.kappa_z, cfg.kappa_d, cfg.transition_hidden);
        let grp = ParamGroup::Transition;
        let f1 = Linear::new(store, "transition.f1", kz + kd, h, grp, rng);
        let f2 = Linear::new(store, "transition.f2", h, kz, grp, rng);
        let f3 = Linear::new(store, "transition.f3", kz + kd, h, grp, rng);
        let f4 = Linear::new(store, "transition.f4", h, kz, grp, rng);
        let f5 = Linear::new(store, "transition.f5", kz + kd, kz, grp, rng);
        let f6 = Linear::new(store, "transition.f6", kz, kz, grp, rng);
        *store.get_mut(f2.b) = Tensor::zeros(&[kz]);
        Self { f1, f2, f3, f4, f5, f6, kappa_z: kz, kappa_d: kd }
    }

    /// Row-wise transition; `z_prev: [n, kappa_z]`, `d: [n, kappa_d]`.
    pub fn step_vars<F: Scalar>(&self, g: &mut Graph<'_, F>, z_prev: Var, d: Var) -> GaussianVar {
        let x = g.tape.concat_cols(&[z_prev, d]);
        let a = self.f1.forward(g, x);
        let a = g.tape.relu(a);
        let gate = self.f2.forward(g, a);
        let gate = g.tape.sigmoid(gate);
        let b = self.f3.forward(g, x);
        let b = g.tape.relu(b);
        let h = self.f4.forward(g, b);
        let skip = self.f5.forward(g, x);
        // loc = skip + gate ⊙ (h − skip)
        let delta = g.tape.sub(h, skip);
        let gated = g.tape.mul(gate, delta);
        let loc = g.tape.add(skip, gated);
        let rh = g.tape.relu(h);
        let pre = self.f6.forward(g, rh);
        let scale = positive_scale(&mut g.tape, pre);
        GaussianVar { loc, scale }
    }

    pub fn transition_step<F: Scalar>(&self, store: &ParamStore<F>, z_prev: &[F], d: &[F]) -> Result<DiagGaussian<F>> {
        if z_prev.len() != self.kappa_z {
            return Err(Error::DimensionMismatch { context: "transition z_prev", expected: self.kappa_z, actual: z_prev.len() });
        }
        if d.len() != self.kappa_d {
            return Err(Error::DimensionMismatch { context: "transition d", expected: self.kappa_d, actual: d.len() });
        }
        let mut g = Graph::new(store, false);
        let z = g.constant(Tensor::row(z_prev));
        let dv = g.constant(Tensor::row(d));
        Ok(self.step_vars(&mut g, z, dv).to_dist(&g.tape))
    }

    /// Ancestral sampling of `z_1..z_t`; `noise` holds one vector per transition.
    pub fn rollout<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        z1: &[F],
        d: &[F],
        t: usize,
        noise: &[Vec<F>],
    ) -> Result<Vec<Vec<F>>> {
        if t < 1 {
            return Err(Error::SequenceTooShort { context: "rollout", min: 1, actual: t });
        }
        if noise.len() != t - 1 {
            return Err(Error::DimensionMismatch { context: "rollout noise", expected: t - 1, actual: noise.len() });
        }
        let mut path = vec![z1.to_vec()];
        for eps in noise {
            let p = self.transition_step(store, path.last().expect("non-empty"), d)?;
            path.push(sample_reparameterized(&p, eps)?);
        }
        Ok(path)
    }
}
