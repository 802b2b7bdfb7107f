//! Evidence lower bounds for both training stages.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::distributions::DiagGaussian;
use crate::encoder::TrunkFeatures;
use crate::error::{Error, Result};
use crate::model::{DecoderInput, ModelConfig, Vdsm};
use crate::nn::{GaussianVar, Graph, ParamStore};
use crate::schedules::AnnealState;
use crate::tensor::{Scalar, Tensor};

/// ELBO terms of one group or sequence. Every KL entry is a non-negative divergence.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub reconstruction: f64,
    pub kl_s: f64,
    pub kl_d: f64,
    /// Pose KL against the standard prior; during pretraining this sums over every frame.
    pub kl_z1: f64,
    pub kl_z_trans: f64,
    pub weighted_total: f64,
}

impl LossBreakdown {
    pub fn weighted(reconstruction: f64, kl_s: f64, kl_d: f64, kl_z1: f64, kl_z_trans: f64, a: &AnnealState) -> Self {
        let weighted_total = reconstruction - a.lambda_s * kl_s - a.lambda_d * kl_d - a.lambda_z * (kl_z1 + kl_z_trans);
        Self { reconstruction, kl_s, kl_d, kl_z1, kl_z_trans, weighted_total }
    }

    /// Un-annealed ELBO: every weight set to 1.
    pub fn elbo(&self) -> f64 {
        self.reconstruction - self.kl_s - self.kl_d - self.kl_z1 - self.kl_z_trans
    }

    /// Running sum used for epoch averages.
    pub fn accumulate(&mut self, other: &Self) {
        self.reconstruction += other.reconstruction;
        self.kl_s += other.kl_s;
        self.kl_d += other.kl_d;
        self.kl_z1 += other.kl_z1;
        self.kl_z_trans += other.kl_z_trans;
        self.weighted_total += other.weighted_total;
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            reconstruction: self.reconstruction * c,
            kl_s: self.kl_s * c,
            kl_d: self.kl_d * c,
            kl_z1: self.kl_z1 * c,
            kl_z_trans: self.kl_z_trans * c,
            weighted_total: self.weighted_total * c,
        }
    }
}

/// Tape handles of the ELBO terms; `objective` is the weighted total.
#[derive(Clone, Copy, Debug)]
pub struct ElboVars {
    pub reconstruction: Var,
    pub kl_s: Var,
    pub kl_d: Option<Var>,
    pub kl_z1: Var,
    pub kl_z_trans: Option<Var>,
    pub objective: Var,
}

impl ElboVars {
    pub fn breakdown<F: Scalar>(&self, tape: &Tape<F>, anneal: &AnnealState) -> LossBreakdown {
        let get = |v: Option<Var>| v.map_or(0.0, |v| tape.value(v).data()[0].as_f64());
        LossBreakdown::weighted(
            get(Some(self.reconstruction)),
            get(Some(self.kl_s)),
            get(self.kl_d),
            get(Some(self.kl_z1)),
            get(self.kl_z_trans),
            anneal,
        )
    }
}

/// Trunk outputs computed once and reused while the trunk is frozen.
#[derive(Clone, Debug, PartialEq)]
pub struct TrunkCache<F> {
    pub trunk: Tensor<F>,
    pub identity: Tensor<F>,
}

impl<F: Scalar> TrunkCache<F> {
    pub fn compute(model: &Vdsm, store: &ParamStore<F>, frames: &Tensor<F>) -> Self {
        let mut g = Graph::new(store, false);
        let x = g.constant(frames.clone());
        let f = model.encoder.features(&mut g, x);
        Self { trunk: g.value(f.trunk).clone(), identity: g.value(f.identity).clone() }
    }
}

/// Standard-normal draws for one pretraining group.
#[derive(Clone, Debug, PartialEq)]
pub struct PretrainNoise<F> {
    pub s: Vec<F>,
    /// `n × kappa_z`, frame-major.
    pub z: Vec<F>,
}

impl<F: Scalar> PretrainNoise<F> {
    pub fn draw(cfg: &ModelConfig, frames: usize, rng: &mut impl Rng) -> Self {
        Self { s: normals(cfg.kappa_s, rng), z: normals(frames * cfg.kappa_z, rng) }
    }

    pub fn zeros(cfg: &ModelConfig, frames: usize) -> Self {
        Self { s: vec![F::zero(); cfg.kappa_s], z: vec![F::zero(); frames * cfg.kappa_z] }
    }
}

/// Standard-normal draws for one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceNoise<F> {
    pub s: Vec<F>,
    pub d: Vec<F>,
    /// `t × kappa_z`, step-major.
    pub z: Vec<F>,
}

impl<F: Scalar> SequenceNoise<F> {
    pub fn draw(cfg: &ModelConfig, t: usize, rng: &mut impl Rng) -> Self {
        Self { s: normals(cfg.kappa_s, rng), d: normals(cfg.kappa_d, rng), z: normals(t * cfg.kappa_z, rng) }
    }

    pub fn zeros(cfg: &ModelConfig, t: usize) -> Self {
        Self { s: vec![F::zero(); cfg.kappa_s], d: vec![F::zero(); cfg.kappa_d], z: vec![F::zero(); t * cfg.kappa_z] }
    }
}

pub fn normals<F: Scalar>(n: usize, rng: &mut impl Rng) -> Vec<F> {
    (0..n).map(|_| F::lit(rng.sample::<f64, _>(StandardNormal))).collect()
}

/// Prior over the static factor: `N(0, (1/N_s)²)` per coordinate.
pub fn static_prior<F: Scalar>(cfg: &ModelConfig) -> DiagGaussian<F> {
    DiagGaussian { loc: vec![F::zero(); cfg.kappa_s], scale: vec![F::lit(1.0 / cfg.n_experts as f64); cfg.kappa_s] }
}

fn check_frames<F: Scalar>(cfg: &ModelConfig, frames: &Tensor<F>) -> Result<usize> {
    let shape = frames.shape();
    if shape.len() != 4 || shape[1..] != cfg.frame_shape() {
        return Err(Error::InvalidArgument(format!(
            "frames have shape {shape:?}, expected [n, {}, {}, {}]",
            cfg.channels, cfg.height, cfg.width
        )));
    }
    if shape[0] == 0 {
        return Err(Error::Empty("frame batch"));
    }
    Ok(shape[0])
}

fn features<F: Scalar>(g: &mut Graph<'_, F>, model: &Vdsm, frames: &Tensor<F>, cache: Option<&TrunkCache<F>>) -> TrunkFeatures {
    match cache {
        Some(c) => TrunkFeatures { trunk: g.constant(c.trunk.clone()), identity: g.constant(c.identity.clone()) },
        None => {
            let x = g.constant(frames.clone());
            model.encoder.features(g, x)
        }
    }
}

/// `softmax(tau · s)`, row-wise.
pub fn mixture_var<F: Scalar>(tape: &mut Tape<F>, s: Var, tau: f64) -> Var {
    let sharp = tape.scale(s, F::lit(tau));
    tape.softmax(sharp)
}

/// Samples `s`, blends the decoder, and decodes `z: [n, kappa_z]`.
fn decode_rows<F: Scalar>(g: &mut Graph<'_, F>, model: &Vdsm, s: Var, tau: f64, z: Var) -> Var {
    let mix = mixture_var(&mut g.tape, s, tau);
    let (weights, code) = match model.config.decoder_input {
        DecoderInput::Static => (mix, s),
        DecoderInput::Mixture => (g.constant(Tensor::row(&[F::one()])), mix),
    };
    let blended = model.decoder.blend_vars(g, weights);
    let n = g.value(z).rows();
    let code = g.tape.repeat_rows(code, n);
    let input = g.tape.concat_cols(&[code, z]);
    model.decoder.decode_vars(g, &blended, input)
}

fn kl_standard<F: Scalar>(tape: &mut Tape<F>, q: GaussianVar) -> Var {
    let shape = tape.value(q.loc).shape().to_vec();
    let zeros = tape.constant(Tensor::zeros(&shape));
    let ones = tape.constant(Tensor::full(&shape, F::one()));
    tape.kl_diag(q.loc, q.scale, zeros, ones)
}

fn weigh<F: Scalar>(tape: &mut Tape<F>, base: Var, terms: &[(f64, Option<Var>)]) -> Var {
    let mut acc = base;
    for &(w, v) in terms {
        if let Some(v) = v {
            let scaled = tape.scale(v, F::lit(w));
            acc = tape.sub(acc, scaled);
        }
    }
    acc
}

/// Pretraining bound for one identity group `frames: [n, c, h, w]`.
pub fn pretrain_vars<F: Scalar>(
    g: &mut Graph<'_, F>,
    model: &Vdsm,
    frames: &Tensor<F>,
    cache: Option<&TrunkCache<F>>,
    anneal: &AnnealState,
    noise: &PretrainNoise<F>,
) -> Result<ElboVars> {
    let cfg = &model.config;
    let n = check_frames(cfg, frames)?;
    if noise.s.len() != cfg.kappa_s || noise.z.len() != n * cfg.kappa_z {
        return Err(Error::DimensionMismatch { context: "pretrain noise", expected: n * cfg.kappa_z, actual: noise.z.len() });
    }
    let feats = features(g, model, frames, cache);
    let pose = model.encoder.pose(g, feats.trunk);
    let sq = model.encoder.static_posterior(g, feats.identity);
    let s = sq.sample(&mut g.tape, Tensor::row(&noise.s));
    let z = pose.sample(&mut g.tape, Tensor::new(vec![n, cfg.kappa_z], noise.z.clone()));
    let probs = decode_rows(g, model, s, anneal.tau_s, z);
    let target = g.constant(frames.clone());
    let reconstruction = g.tape.bernoulli_log_lik(target, probs);
    let kl_s = sq.kl_to(&mut g.tape, &static_prior(cfg));
    let kl_z1 = kl_standard(&mut g.tape, pose);
    let objective = weigh(&mut g.tape, reconstruction, &[(anneal.lambda_s, Some(kl_s)), (anneal.lambda_z, Some(kl_z1))]);
    Ok(ElboVars { reconstruction, kl_s, kl_d: None, kl_z1, kl_z_trans: None, objective })
}

/// Latent path recorded while building the sequence bound.
#[derive(Clone, Debug)]
pub struct SequenceLatents {
    pub s: GaussianVar,
    pub d: GaussianVar,
    /// Combiner posteriors, one per step.
    pub z: Vec<GaussianVar>,
    pub z_samples: Vec<Var>,
    pub probs: Var,
}

/// Full sequential bound for `frames: [t, c, h, w]`.
pub fn sequence_vars<F: Scalar>(
    g: &mut Graph<'_, F>,
    model: &Vdsm,
    frames: &Tensor<F>,
    cache: Option<&TrunkCache<F>>,
    anneal: &AnnealState,
    noise: &SequenceNoise<F>,
) -> Result<(ElboVars, SequenceLatents)> {
    let cfg = &model.config;
    let t = check_frames(cfg, frames)?;
    if t < 2 {
        return Err(Error::SequenceTooShort { context: "sequence_elbo", min: 2, actual: t });
    }
    if noise.s.len() != cfg.kappa_s || noise.d.len() != cfg.kappa_d || noise.z.len() != t * cfg.kappa_z {
        return Err(Error::DimensionMismatch { context: "sequence noise", expected: t * cfg.kappa_z, actual: noise.z.len() });
    }
    let feats = features(g, model, frames, cache);
    let pose = model.encoder.pose(g, feats.trunk);
    let sq = model.encoder.static_posterior(g, feats.identity);
    let s = sq.sample(&mut g.tape, Tensor::row(&noise.s));
    let dq = model.seq.summarize_vars(g, pose.loc);
    let d = dq.sample(&mut g.tape, Tensor::row(&noise.d));
    let hbar = model.seq.unroll_vars(g, d, t);
    let mut z_prev = g.constant(Tensor::zeros(&[1, cfg.kappa_z]));
    let mut posts = Vec::with_capacity(t);
    let mut samples = Vec::with_capacity(t);
    for (step, &h) in hbar.iter().enumerate() {
        let q = model.seq.combine_vars(g, z_prev, h, d);
        let eps = Tensor::row(&noise.z[step * cfg.kappa_z..(step + 1) * cfg.kappa_z]);
        z_prev = q.sample(&mut g.tape, eps);
        posts.push(q);
        samples.push(z_prev);
    }
    let kl_z1 = kl_standard(&mut g.tape, posts[0]);
    let prev = g.tape.concat_rows(&samples[..t - 1]);
    let d_rows = g.tape.repeat_rows(d, t - 1);
    let prior = model.transition.step_vars(g, prev, d_rows);
    let q_locs: Vec<Var> = posts[1..].iter().map(|q| q.loc).collect();
    let q_scales: Vec<Var> = posts[1..].iter().map(|q| q.scale).collect();
    let q_loc = g.tape.concat_rows(&q_locs);
    let q_scale = g.tape.concat_rows(&q_scales);
    let kl_z_trans = g.tape.kl_diag(q_loc, q_scale, prior.loc, prior.scale);
    let kl_s = sq.kl_to(&mut g.tape, &static_prior(cfg));
    let kl_d = kl_standard(&mut g.tape, dq);
    let z_all = g.tape.concat_rows(&samples);
    let probs = decode_rows(g, model, s, anneal.tau_s, z_all);
    let target = g.constant(frames.clone());
    let reconstruction = g.tape.bernoulli_log_lik(target, probs);
    let objective = weigh(
        &mut g.tape,
        reconstruction,
        &[
            (anneal.lambda_s, Some(kl_s)),
            (anneal.lambda_d, Some(kl_d)),
            (anneal.lambda_z, Some(kl_z1)),
            (anneal.lambda_z, Some(kl_z_trans)),
        ],
    );
    let vars = ElboVars { reconstruction, kl_s, kl_d: Some(kl_d), kl_z1, kl_z_trans: Some(kl_z_trans), objective };
    Ok((vars, SequenceLatents { s: sq, d: dq, z: posts, z_samples: samples, probs }))
}

pub fn pretrain_elbo<F: Scalar>(
    model: &Vdsm,
    store: &ParamStore<F>,
    frames: &Tensor<F>,
    anneal: &AnnealState,
    noise: &PretrainNoise<F>,
) -> Result<LossBreakdown> {
    let mut g = Graph::new(store, false);
    let v = pretrain_vars(&mut g, model, frames, None, anneal, noise)?;
    Ok(v.breakdown(&g.tape, anneal))
}

pub fn sequence_elbo<F: Scalar>(
    model: &Vdsm,
    store: &ParamStore<F>,
    frames: &Tensor<F>,
    anneal: &AnnealState,
    noise: &SequenceNoise<F>,
) -> Result<LossBreakdown> {
    let mut g = Graph::new(store, false);
    let (v, _) = sequence_vars(&mut g, model, frames, None, anneal, noise)?;
    Ok(v.breakdown(&g.tape, anneal))
}

/// Gradient of the weighted objective with respect to every parameter, flattened in store order.
pub fn objective_gradient<F: Scalar>(
    store: &ParamStore<F>,
    build: impl Fn(&mut Graph<'_, F>) -> Result<ElboVars>,
) -> Result<(f64, Vec<F>)> {
    let mut g = Graph::new(store, true);
    let v = build(&mut g)?;
    let value = g.value(v.objective).data()[0].as_f64();
    let grads = g.param_grads(v.objective);
    Ok((value, store.flatten_grads(&grads)))
}

/// Largest relative error between `grad` and central differences of `loss` over
/// `samples` randomly chosen coordinates of `params`.
pub fn finite_difference_check(
    loss: impl Fn(&[f64]) -> f64,
    params: &[f64],
    grad: &[f64],
    eps: f64,
    samples: usize,
    rng: &mut impl Rng,
) -> f64 {
    assert_eq!(params.len(), grad.len(), "gradient length");
    let picks: Vec<usize> = if samples >= params.len() {
        (0..params.len()).collect()
    } else {
        rand::seq::index::sample(rng, params.len(), samples).into_vec()
    };
    let mut worst = 0.0f64;
    let mut x = params.to_vec();
    for i in picks {
        x[i] = params[i] + eps;
        let up = loss(&x);
        x[i] = params[i] - eps;
        let down = loss(&x);
        x[i] = params[i];
        let numeric = (up - down) / (2.0 * eps);
        let denom = grad[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((grad[i] - numeric).abs() / denom);
    }
    worst
}
