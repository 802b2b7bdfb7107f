//! Finite-difference check of both ELBO gradients on a tiny double-precision model.
//!
//! `cargo run --example gradient_check`

use anyhow::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vdsm::model::{ModelConfig, Vdsm};
use vdsm::nn::Graph;
use vdsm::objectives::{finite_difference_check, objective_gradient, pretrain_vars, sequence_vars, ElboVars, PretrainNoise, SequenceNoise};
use vdsm::schedules::{AnnealState, Stage};
use vdsm::tensor::Tensor;

fn main() -> Result<()> {
    let cfg = ModelConfig {
        channels: 1,
        height: 2,
        width: 2,
        kappa_z: 2,
        kappa_s: 2,
        kappa_d: 2,
        n_experts: 2,
        encoder_channels: vec![1],
        identity_features: 2,
        decoder_channels: vec![],
        rnn_hidden: 2,
        decoder_token: 2,
        transition_hidden: 2,
        ..ModelConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (model, store) = Vdsm::new::<f64>(cfg.clone(), &mut rng)?;
    let frames = Tensor::from_f64(&[2, 1, 2, 2], &[0.1, 0.9, 0.4, 0.6, 0.8, 0.2, 0.3, 0.7]);
    let anneal = AnnealState { lambda_z: 0.7, lambda_s: 0.4, lambda_d: 1.0, tau_s: 3.0, epoch: 0, stage: Stage::Sequence };

    let pre_noise = PretrainNoise::draw(&cfg, 2, &mut rng);
    let seq_noise = SequenceNoise::draw(&cfg, 2, &mut rng);
    let build = |stage: Stage, g: &mut Graph<'_, f64>| -> vdsm::Result<ElboVars> {
        match stage {
            Stage::Pretrain => pretrain_vars(g, &model, &frames, None, &anneal, &pre_noise),
            Stage::Sequence => sequence_vars(g, &model, &frames, None, &anneal, &seq_noise).map(|(v, _)| v),
        }
    };
    for stage in [Stage::Pretrain, Stage::Sequence] {
        let (_, grad) = objective_gradient(&store, |g| build(stage, g))?;
        let loss = |flat: &[f64]| {
            let mut s = store.clone();
            s.assign_flat(flat);
            objective_gradient(&s, |g| build(stage, g)).expect("objective").0
        };
        let err = finite_difference_check(loss, &store.flatten(), &grad, 1e-4, usize::MAX, &mut rng);
        println!("{} ELBO: {} parameters, max relative error {err:.2e}", stage.as_str(), grad.len());
    }
    Ok(())
}
