//! Runs stage 1 on a small pendulum set and prints the per-epoch loss breakdown.
//!
//! `cargo run --release --example pretrain -- [epochs]`

use anyhow::Result;
use vdsm::datasets::{gen_pendulum, PendulumConfig};
use vdsm::trainer::{frozen_in_stage2, run_pretrain, Flow, ModelState, TrainConfig};

fn main() -> Result<()> {
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(5);
    let ds = gen_pendulum(&PendulumConfig { count: 56, ..PendulumConfig::default() })?;
    let mut state = ModelState::init(TrainConfig { pretrain_epochs: epochs, ..TrainConfig::default() })?;
    run_pretrain(&mut state, &ds, &mut |_, r| {
        let b = &r.breakdown;
        println!(
            "epoch {:>2}  λz {:>6.2}  λs {:.2}  τ {:>5.2}  recon {:>9.2}  kl_s {:>7.2}  kl_z {:>7.2}",
            r.epoch, r.anneal.lambda_z, r.anneal.lambda_s, r.anneal.tau_s, b.reconstruction, b.kl_s, b.kl_z1
        );
        Ok(Flow::Continue)
    })?;
    let entries = state.store.entries();
    let kept = entries.iter().filter(|e| !frozen_in_stage2(e.group)).count();
    println!("stage 2 keeps {kept} of {} parameter tensors trainable", entries.len());
    Ok(())
}
