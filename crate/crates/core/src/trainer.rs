//! Two-stage training, generation, reconstruction and factor swaps.

use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{identity_batches, Dataset, LabeledSequence};
use crate::distributions::{sample_reparameterized, DiagGaussian, SimplexVector};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Vdsm};
use crate::nn::{Graph, ParamGroup, ParamId, ParamStore};
use crate::objectives::{
    normals, pretrain_vars, sequence_vars, static_prior, LossBreakdown, PretrainNoise, SequenceNoise, TrunkCache,
};
use crate::optim::{Adam, AdamConfig};
use crate::schedules::{pretrain_schedule, sequence_schedule, AnnealState, ScheduleConfig, Stage};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub schedule: ScheduleConfig,
    pub optim: AdamConfig,
    pub pretrain_epochs: usize,
    pub sequence_epochs: usize,
    /// Frames per identity group in stage 1.
    pub batch_size: usize,
    /// Identity groups per optimizer step in stage 1.
    pub groups_per_step: usize,
    /// Stage-1 optimizer steps per epoch; 0 covers every group once.
    pub pretrain_batches_per_epoch: usize,
    /// Sequences per optimizer step in stage 2.
    pub sequence_batch_size: usize,
    /// Stage-2 optimizer steps per epoch; 0 covers every sequence once.
    pub sequence_batches_per_epoch: usize,
    /// Sequence length used in stage 2.
    pub seq_len: usize,
    pub seed: u64,
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            schedule: ScheduleConfig::default(),
            optim: AdamConfig::default(),
            pretrain_epochs: 60,
            sequence_epochs: 40,
            batch_size: 8,
            groups_per_step: 1,
            pretrain_batches_per_epoch: 0,
            sequence_batch_size: 4,
            sequence_batches_per_epoch: 100,
            seq_len: 16,
            seed: 0,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.schedule.validate()?;
        if self.batch_size == 0 || self.groups_per_step == 0 || self.sequence_batch_size == 0 || self.threads == 0 {
            return Err(Error::Config("batch sizes, groups_per_step and threads must be positive".into()));
        }
        if self.seq_len < 2 {
            return Err(Error::Config("seq_len must be at least 2".into()));
        }
        if !(self.optim.lr > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Everything needed to continue or evaluate a run.
#[derive(Clone, Debug)]
pub struct ModelState {
    pub config: TrainConfig,
    pub model: Vdsm,
    pub store: ParamStore<f32>,
    pub optimizer: Adam<f32>,
    pub anneal: AnnealState,
    pub stage: Stage,
    /// Completed epochs within `stage`.
    pub epoch: usize,
    pub pretrain_complete: bool,
    pub rng: ChaCha8Rng,
}

impl ModelState {
    pub fn init(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (model, store) = Vdsm::new::<f32>(config.model.clone(), &mut rng)?;
        let optimizer = Adam::new(config.optim, &store);
        let anneal = if config.pretrain_epochs > 0 {
            pretrain_schedule(0, config.pretrain_epochs, &config.schedule)?
        } else {
            AnnealState::unit(config.schedule.tau_min, Stage::Pretrain)
        };
        Ok(Self { config, model, store, optimizer, anneal, stage: Stage::Pretrain, epoch: 0, pretrain_complete: false, rng })
    }

    /// Names of parameters updated in the current stage.
    pub fn trainable(&self) -> Vec<&str> {
        self.store.entries().iter().filter(|e| !e.frozen).map(|e| e.name.as_str()).collect()
    }

    pub fn is_finished(&self) -> bool {
        self.stage == Stage::Sequence && self.epoch >= self.config.sequence_epochs
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochReport {
    pub stage: Stage,
    pub epoch: usize,
    pub anneal: AnnealState,
    /// Mean over the groups or sequences visited this epoch.
    pub breakdown: LossBreakdown,
}

/// Whether training continues after an epoch hook returns.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Stop,
}

/// Called after every epoch, e.g. to checkpoint or log.
pub type EpochHook<'a> = &'a mut dyn FnMut(&ModelState, &EpochReport) -> Result<Flow>;

fn no_hook(_: &ModelState, _: &EpochReport) -> Result<Flow> {
    Ok(Flow::Continue)
}

type ItemResult = Result<(Vec<(ParamId, Tensor<f32>)>, LossBreakdown)>;

/// Evaluates `items` (in parallel if configured), reduces their gradients in order and
/// takes one ascent step on the mean objective.
fn apply_step<T: Sync>(state: &mut ModelState, items: &[T], work: impl Fn(&Vdsm, &ParamStore<f32>, &T) -> ItemResult + Sync) -> Result<Vec<LossBreakdown>> {
    let (model, store) = (&state.model, &state.store);
    let results: Vec<ItemResult> = if state.config.threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(state.config.threads)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        pool.install(|| items.par_iter().map(|it| work(model, store, it)).collect())
    } else {
        items.iter().map(|it| work(model, store, it)).collect()
    };
    let mut total = store.zeros_like();
    let mut parts = Vec::with_capacity(items.len());
    for r in results {
        let (grads, b) = r?;
        for (id, g) in grads {
            total[id.index()].add_assign(&g);
        }
        parts.push(b);
    }
    let scale = -1.0 / items.len() as f32;
    for g in &mut total {
        g.data_mut().iter_mut().for_each(|x| *x *= scale);
    }
    state.optimizer.step(&mut state.store, &mut total);
    Ok(parts)
}

fn mean(parts: &[LossBreakdown]) -> LossBreakdown {
    let mut acc = LossBreakdown::default();
    for p in parts {
        acc.accumulate(p);
    }
    acc.scaled(1.0 / parts.len().max(1) as f64)
}

/// Chunks `n` shuffled item indices into the steps of one epoch.
fn epoch_plan(n: usize, batch: usize, steps: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let steps = if steps == 0 { n.div_ceil(batch) } else { steps };
    let mut out = Vec::with_capacity(steps);
    let mut pool: Vec<usize> = Vec::new();
    while out.len() < steps {
        if pool.is_empty() {
            let mut fresh: Vec<usize> = (0..n).collect();
            fresh.shuffle(rng);
            pool.extend(fresh);
        }
        let take = batch.min(pool.len());
        out.push(pool.drain(..take).collect());
    }
    out
}

fn check_dataset(ds: &Dataset, cfg: &ModelConfig) -> Result<[usize; 4]> {
    let shape = ds.sequence_shape()?;
    if shape[1..] != cfg.frame_shape() {
        return Err(Error::InvalidArgument(format!("dataset frames {:?} do not match model {:?}", &shape[1..], cfg.frame_shape())));
    }
    Ok(shape)
}

/// Stage 1: identity-grouped frame reconstruction.
pub fn pretrain(dataset: &Dataset, config: TrainConfig) -> Result<ModelState> {
    let mut state = ModelState::init(config)?;
    run_pretrain(&mut state, dataset, &mut no_hook)?;
    Ok(state)
}

/// Runs the remaining stage-1 epochs of `state` unless `hook` stops it early.
pub fn run_pretrain(state: &mut ModelState, dataset: &Dataset, hook: EpochHook<'_>) -> Result<Flow> {
    if state.stage != Stage::Pretrain {
        return Err(Error::Stage("pretraining is already over for this state".into()));
    }
    let shape = check_dataset(dataset, &state.config.model)?;
    if shape[0] < 1 {
        return Err(Error::InvalidArgument("sequences provide no frames to group".into()));
    }
    let total = state.config.pretrain_epochs;
    while state.epoch < total {
        let anneal = pretrain_schedule(state.epoch, total, &state.config.schedule)?;
        state.anneal = anneal;
        let groups = identity_batches(dataset, state.config.batch_size, state.rng.next_u64())?;
        let plan = epoch_plan(groups.len(), state.config.groups_per_step, state.config.pretrain_batches_per_epoch, &mut state.rng);
        let mut parts = Vec::new();
        for step in plan {
            let items: Vec<(Tensor<f32>, PretrainNoise<f32>)> = step
                .iter()
                .map(|&i| {
                    let g = &groups[i];
                    let frames = dataset.sequences[g.sequence].select(&g.frames);
                    let noise = PretrainNoise::draw(&state.config.model, g.frames.len(), &mut state.rng);
                    (frames, noise)
                })
                .collect();
            parts.extend(apply_step(state, &items, |model, store, (frames, noise)| {
                let mut g = Graph::new(store, true);
                let v = pretrain_vars(&mut g, model, frames, None, &anneal, noise)?;
                Ok((g.param_grads(v.objective), v.breakdown(&g.tape, &anneal)))
            })?);
        }
        state.epoch += 1;
        let report = EpochReport { stage: Stage::Pretrain, epoch: state.epoch - 1, anneal, breakdown: mean(&parts) };
        if state.epoch == total {
            state.pretrain_complete = true;
        }
        if hook(state, &report)? == Flow::Stop {
            return Ok(Flow::Stop);
        }
    }
    state.pretrain_complete = true;
    Ok(Flow::Continue)
}

/// Stage 2 on a pretrained state: encoder trunk and expert bank frozen.
pub fn train_sequences(dataset: &Dataset, pretrained: ModelState) -> Result<ModelState> {
    let mut state = pretrained;
    run_sequences(&mut state, dataset, true, &mut no_hook)?;
    Ok(state)
}

/// Sequential training from scratch with every parameter trainable (no stage 1).
pub fn train_sequences_unfrozen(dataset: &Dataset, config: TrainConfig) -> Result<ModelState> {
    let mut state = ModelState::init(config)?;
    run_sequences(&mut state, dataset, false, &mut no_hook)?;
    Ok(state)
}

/// Groups frozen during stage 2.
pub fn frozen_in_stage2(group: ParamGroup) -> bool {
    matches!(group, ParamGroup::EncoderTrunk | ParamGroup::Decoder)
}

/// Runs the remaining stage-2 epochs. With `freeze`, requires a completed stage 1.
pub fn run_sequences(state: &mut ModelState, dataset: &Dataset, freeze: bool, hook: EpochHook<'_>) -> Result<Flow> {
    if state.stage == Stage::Pretrain {
        if freeze && !state.pretrain_complete {
            return Err(Error::Stage("sequence training needs a completed pretraining stage".into()));
        }
        state.stage = Stage::Sequence;
        state.epoch = 0;
        if freeze {
            state.store.freeze_where(frozen_in_stage2);
        } else {
            state.store.freeze_where(|_| false);
        }
        state.optimizer = Adam::new(state.config.optim, &state.store);
    }
    let shape = check_dataset(dataset, &state.config.model)?;
    let t = state.config.seq_len;
    if shape[0] < t {
        return Err(Error::SequenceTooShort { context: "dataset sequences", min: t, actual: shape[0] });
    }
    let trunk_frozen = state.store.entries().iter().filter(|e| e.group == ParamGroup::EncoderTrunk).all(|e| e.frozen);
    let caches: Option<Vec<TrunkCache<f32>>> = trunk_frozen
        .then(|| dataset.sequences.iter().map(|s| TrunkCache::compute(&state.model, &state.store, &s.frames)).collect());
    let total = state.config.sequence_epochs;
    while state.epoch < total {
        let anneal = sequence_schedule(state.epoch, total, &state.config.schedule)?;
        state.anneal = anneal;
        let plan = epoch_plan(dataset.len(), state.config.sequence_batch_size, state.config.sequence_batches_per_epoch, &mut state.rng);
        let mut parts = Vec::new();
        for step in plan {
            let items: Vec<(usize, usize, SequenceNoise<f32>)> = step
                .iter()
                .map(|&i| {
                    let start = if shape[0] > t { state.rng.random_range(0..=shape[0] - t) } else { 0 };
                    (i, start, SequenceNoise::draw(&state.config.model, t, &mut state.rng))
                })
                .collect();
            parts.extend(apply_step(state, &items, |model, store, (i, start, noise)| {
                let seq = &dataset.sequences[*i];
                let frames = window(&seq.frames, *start, t);
                let cache = caches.as_ref().map(|c| TrunkCache {
                    trunk: window(&c[*i].trunk, *start, t),
                    identity: window(&c[*i].identity, *start, t),
                });
                let mut g = Graph::new(store, true);
                let (v, _) = sequence_vars(&mut g, model, &frames, cache.as_ref(), &anneal, noise)?;
                Ok((g.param_grads(v.objective), v.breakdown(&g.tape, &anneal)))
            })?);
        }
        state.epoch += 1;
        let report = EpochReport { stage: Stage::Sequence, epoch: state.epoch - 1, anneal, breakdown: mean(&parts) };
        if hook(state, &report)? == Flow::Stop {
            return Ok(Flow::Stop);
        }
    }
    Ok(Flow::Continue)
}

/// Rows `start..start + len` of a tensor whose first axis is time.
fn window(x: &Tensor<f32>, start: usize, len: usize) -> Tensor<f32> {
    if start == 0 && x.shape()[0] == len {
        return x.clone();
    }
    let row: usize = x.shape()[1..].iter().product();
    let mut shape = x.shape().to_vec();
    shape[0] = len;
    Tensor::new(shape, x.data()[start * row..(start + len) * row].to_vec())
}

/// Posterior summary of one sequence along its mean path.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentBundle {
    pub s: DiagGaussian<f32>,
    pub mix: SimplexVector<f32>,
    pub d: DiagGaussian<f32>,
    pub z: Vec<DiagGaussian<f32>>,
}

/// Infers `s`, `ŝ`, `d` and the pose posteriors with all noise set to zero.
pub fn infer(state: &ModelState, frames: &Tensor<f32>) -> Result<LatentBundle> {
    let t = frames.shape().first().copied().unwrap_or(0);
    let cfg = &state.config.model;
    let mut g = Graph::new(&state.store, false);
    let (_, lat) = sequence_vars(&mut g, &state.model, frames, None, &state.anneal, &SequenceNoise::zeros(cfg, t))?;
    let s = lat.s.to_dist(&g.tape);
    let mix = state.model.mixture(&s.loc, state.anneal.tau_s)?;
    Ok(LatentBundle { mix, s, d: lat.d.to_dist(&g.tape), z: lat.z.iter().map(|q| q.to_dist(&g.tape)).collect() })
}

/// Factors supplied to [`generate`]; missing ones are drawn from their priors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GenerateInit {
    pub s: Option<Vec<f32>>,
    pub d: Option<Vec<f32>>,
    pub z1: Option<Vec<f32>>,
}

/// Samples a `[t, c, h, w]` sequence by transition rollout and blended decoding.
pub fn generate(state: &ModelState, t: usize, init: &GenerateInit, seed: u64) -> Result<Tensor<f32>> {
    if t < 1 {
        return Err(Error::SequenceTooShort { context: "generate", min: 1, actual: t });
    }
    let cfg = &state.config.model;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps_s: Vec<f32> = normals(cfg.kappa_s, &mut rng);
    let eps_d: Vec<f32> = normals(cfg.kappa_d, &mut rng);
    let eps_z: Vec<f32> = normals(cfg.kappa_z, &mut rng);
    let noise: Vec<Vec<f32>> = (1..t).map(|_| normals(cfg.kappa_z, &mut rng)).collect();
    let s = match &init.s {
        Some(s) => s.clone(),
        None => sample_reparameterized(&static_prior(cfg), &eps_s)?,
    };
    let d = init.d.clone().unwrap_or(eps_d);
    let z1 = init.z1.clone().unwrap_or(eps_z);
    let path = state.model.transition.rollout(&state.store, &z1, &d, t, &noise)?;
    state.model.decode_sequence(&state.store, &s, state.anneal.tau_s, &path)
}

/// Regenerates a sequence from its inferred `s`, `d` and `z_1`.
pub fn reconstruct(state: &ModelState, frames: &Tensor<f32>, seed: u64) -> Result<Tensor<f32>> {
    let lat = infer(state, frames)?;
    let init = GenerateInit { s: Some(lat.s.loc), d: Some(lat.d.loc), z1: Some(lat.z[0].loc.clone()) };
    generate(state, frames.shape()[0], &init, seed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Factor {
    Identity,
    Dynamics,
}

impl FromStr for Factor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Factor::Identity),
            "dynamics" => Ok(Factor::Dynamics),
            other => Err(Error::InvalidArgument(format!("unknown factor `{other}`; valid factors: identity, dynamics"))),
        }
    }
}

/// Sequence `a` with its `factor` replaced by the one inferred from `b`.
pub fn swap(state: &ModelState, a: &Tensor<f32>, b: &Tensor<f32>, factor: Factor, seed: u64) -> Result<Tensor<f32>> {
    let la = infer(state, a)?;
    let lb = infer(state, b)?;
    let (s, d) = match factor {
        Factor::Identity => (lb.s.loc, la.d.loc),
        Factor::Dynamics => (la.s.loc, lb.d.loc),
    };
    let init = GenerateInit { s: Some(s), d: Some(d), z1: Some(la.z[0].loc.clone()) };
    generate(state, a.shape()[0], &init, seed)
}

/// Ablation variants compared against the full method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Full,
    /// Stage 1 skipped; everything trained jointly on sequences.
    SkipPretrain,
    /// One decoder that receives the mixture weights as an input feature.
    SingleDecoder,
}

impl Variant {
    pub fn configure(self, mut config: TrainConfig) -> TrainConfig {
        if self == Variant::SingleDecoder {
            config.model.n_experts = 1;
            config.model.decoder_input = crate::model::DecoderInput::Mixture;
        }
        config
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::SkipPretrain => "skip-pretrain",
            Variant::SingleDecoder => "single-decoder",
        }
    }
}

/// Trains a variant end to end, forwarding every epoch report to `hook`.
pub fn train_variant(dataset: &Dataset, config: TrainConfig, variant: Variant, hook: EpochHook<'_>) -> Result<ModelState> {
    let mut state = ModelState::init(variant.configure(config))?;
    match variant {
        Variant::SkipPretrain => {
            run_sequences(&mut state, dataset, false, hook)?;
        }
        Variant::Full | Variant::SingleDecoder => {
            if run_pretrain(&mut state, dataset, hook)? == Flow::Continue {
                run_sequences(&mut state, dataset, true, hook)?;
            }
        }
    }
    Ok(state)
}

/// Posterior-mean `s` and `d` for every sequence.
pub fn embed(state: &ModelState, sequences: &[LabeledSequence]) -> Result<(Vec<Vec<f32>>, Vec<Vec<f32>>)> {
    let mut s = Vec::with_capacity(sequences.len());
    let mut d = Vec::with_capacity(sequences.len());
    for seq in sequences {
        let frames = window(&seq.frames, 0, state.config.seq_len.min(seq.len()));
        let lat = infer(state, &frames)?;
        s.push(lat.s.loc);
        d.push(lat.d.loc);
    }
    Ok((s, d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{gen_pendulum, PendulumConfig};

    pub(crate) fn tiny_config() -> TrainConfig {
        TrainConfig {
            model: ModelConfig {
                channels: 3,
                height: 8,
                width: 8,
                kappa_z: 2,
                kappa_s: 3,
                kappa_d: 2,
                n_experts: 3,
                encoder_channels: vec![4, 4],
                identity_features: 8,
                decoder_channels: vec![4],
                rnn_hidden: 6,
                decoder_token: 2,
                transition_hidden: 4,
                ..ModelConfig::default()
            },
            pretrain_epochs: 3,
            sequence_epochs: 2,
            batch_size: 2,
            groups_per_step: 2,
            pretrain_batches_per_epoch: 2,
            sequence_batch_size: 2,
            sequence_batches_per_epoch: 2,
            seq_len: 4,
            seed: 7,
            ..TrainConfig::default()
        }
    }

    fn tiny_data() -> Dataset {
        gen_pendulum(&PendulumConfig { count: 6, t: 5, size: 8, ..PendulumConfig::default() }).unwrap()
    }

    #[test]
    fn pretraining_is_seeded() {
        let ds = tiny_data();
        let a = pretrain(&ds, tiny_config()).unwrap();
        let b = pretrain(&ds, tiny_config()).unwrap();
        assert_eq!(a.store, b.store);
        assert!(a.pretrain_complete);
        let c = pretrain(&ds, TrainConfig { seed: 8, ..tiny_config() }).unwrap();
        assert_ne!(a.store, c.store);
    }

    #[test]
    fn zero_epochs_leave_parameters_untouched() {
        let ds = tiny_data();
        let cfg = TrainConfig { pretrain_epochs: 0, ..tiny_config() };
        let fresh = ModelState::init(cfg.clone()).unwrap();
        let done = pretrain(&ds, cfg).unwrap();
        assert_eq!(fresh.store, done.store);
        assert!(done.pretrain_complete);
    }

    #[test]
    fn stage_two_freezes_trunk_and_experts() {
        let ds = tiny_data();
        let pre = pretrain(&ds, tiny_config()).unwrap();
        let before = pre.store.clone();
        let after = train_sequences(&ds, pre).unwrap();
        for (a, b) in before.entries().iter().zip(after.store.entries()) {
            if frozen_in_stage2(a.group) {
                assert_eq!(a.tensor, b.tensor, "{} changed", a.name);
                assert!(b.frozen);
            } else {
                assert!(!b.frozen);
            }
        }
        let mut open: Vec<&str> = after.trainable();
        open.retain(|n| n.starts_with("encoder."));
        assert_eq!(
            open,
            vec![
                "encoder.pose_loc.weight",
                "encoder.pose_loc.bias",
                "encoder.pose_scale.weight",
                "encoder.pose_scale.bias",
                "encoder.static_loc.weight",
                "encoder.static_loc.bias",
                "encoder.static_scale.weight",
                "encoder.static_scale.bias",
            ]
        );
        assert!(after.is_finished());
    }

    #[test]
    fn stage_two_requires_pretraining() {
        let ds = tiny_data();
        let fresh = ModelState::init(tiny_config()).unwrap();
        assert!(matches!(train_sequences(&ds, fresh), Err(Error::Stage(_))));
    }

    #[test]
    fn threads_do_not_change_results() {
        let ds = tiny_data();
        let a = pretrain(&ds, tiny_config()).unwrap();
        let b = pretrain(&ds, TrainConfig { threads: 3, ..tiny_config() }).unwrap();
        assert_eq!(a.store, b.store);
    }

    #[test]
    fn generation_contract() {
        let ds = tiny_data();
        let state = pretrain(&ds, tiny_config()).unwrap();
        let x = generate(&state, 5, &GenerateInit::default(), 3).unwrap();
        assert_eq!(x.shape(), &[5, 3, 8, 8]);
        assert!(x.data().iter().all(|&p| p > 0.0 && p < 1.0));
        assert_eq!(x, generate(&state, 5, &GenerateInit::default(), 3).unwrap());
        assert_ne!(x, generate(&state, 5, &GenerateInit::default(), 4).unwrap());
        assert!(generate(&state, 0, &GenerateInit::default(), 3).is_err());
    }

    #[test]
    fn mean_rollout_generation_matches_manual_composition() {
        let ds = tiny_data();
        let state = pretrain(&ds, tiny_config()).unwrap();
        let init = GenerateInit { s: Some(vec![0.2, -0.1, 0.4]), d: Some(vec![0.5, -0.3]), z1: Some(vec![0.1, 0.7]) };
        // With the same init, only the rollout noise differs between seeds; rebuild the
        // seeded noise by hand and compare against chained transition means + decode.
        let seed = 11;
        let got = generate(&state, 3, &init, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let _: Vec<f32> = normals(3 + 2 + 2, &mut rng);
        let noise: Vec<Vec<f32>> = (0..2).map(|_| normals(2, &mut rng)).collect();
        let mut path = vec![vec![0.1f32, 0.7]];
        for eps in &noise {
            let p = state.model.transition.transition_step(&state.store, path.last().unwrap(), &[0.5, -0.3]).unwrap();
            path.push(p.loc.iter().zip(&p.scale).zip(eps).map(|((l, s), e)| l + s * e).collect());
        }
        let (dec, code) = state.model.decoder_for(&state.store, &[0.2, -0.1, 0.4], state.anneal.tau_s).unwrap();
        for (t, z) in path.iter().enumerate() {
            let mut input = code.clone();
            input.extend(z);
            let frame = dec.forward(&input).unwrap();
            assert_eq!(&got.data()[t * 192..(t + 1) * 192], frame.data());
        }
    }

    #[test]
    fn swap_factor_parsing() {
        assert_eq!("identity".parse::<Factor>().unwrap(), Factor::Identity);
        let err = "pose".parse::<Factor>().unwrap_err().to_string();
        assert!(err.contains("identity") && err.contains("dynamics"));
    }

    #[test]
    fn self_swap_equals_reconstruction() {
        let ds = tiny_data();
        let state = train_sequences(&ds, pretrain(&ds, tiny_config()).unwrap()).unwrap();
        let a = window(&ds.sequences[0].frames, 0, 4);
        let r = reconstruct(&state, &a, 5).unwrap();
        assert_eq!(swap(&state, &a, &a, Factor::Identity, 5).unwrap(), r);
        assert_eq!(swap(&state, &a, &a, Factor::Dynamics, 5).unwrap(), r);
    }
}
