//! Trains both stages on the pendulum set and evaluates on a fresh held-out set.
//!
//! `cargo run --release --example train_full -- [pretrain_epochs] [sequence_epochs] [seed] [variant] [checkpoint]`

use std::time::Instant;

use anyhow::Result;
use vdsm::datasets::{gen_pendulum, PendulumConfig};
use vdsm::evaluation::{evaluate, EvalConfig};
use vdsm::persistence::save_checkpoint;
use vdsm::trainer::{train_variant, Flow, TrainConfig, Variant};

fn main() -> Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let arg = |i: usize, d: usize| args.get(i).and_then(|a| a.parse().ok()).unwrap_or(d);
    let variant = match args.get(4).map(String::as_str) {
        Some("skip-pretrain") => Variant::SkipPretrain,
        Some("single-decoder") => Variant::SingleDecoder,
        _ => Variant::Full,
    };
    let config = TrainConfig {
        pretrain_epochs: arg(1, 60),
        sequence_epochs: arg(2, 40),
        seed: arg(3, 0) as u64,
        ..TrainConfig::default()
    };
    let train = gen_pendulum(&PendulumConfig::default())?;
    let heldout = gen_pendulum(&PendulumConfig { count: 280, seed: 1000, ..PendulumConfig::default() })?;
    let start = Instant::now();
    let state = train_variant(&train, config, variant, &mut |_, r| {
        println!(
            "{:>8} epoch {:>3}  elbo {:>10.2}  recon {:>10.2}  kl_s {:>7.2}  kl_d {:>7.2}  kl_z {:>8.2}  [{:.0}s]",
            r.stage.as_str(),
            r.epoch,
            r.breakdown.elbo(),
            r.breakdown.reconstruction,
            r.breakdown.kl_s,
            r.breakdown.kl_d,
            r.breakdown.kl_z1 + r.breakdown.kl_z_trans,
            start.elapsed().as_secs_f64()
        );
        Ok(Flow::Continue)
    })?;
    if let Some(path) = args.get(5) {
        save_checkpoint(&state, path)?;
    }
    let report = evaluate(&state, &heldout, &EvalConfig::default())?;
    for (m, e, f, v, n) in report.rows() {
        println!("{m:<18} {e:<2} {f:<9} {v:.4} (n={n})");
    }
    Ok(())
}
