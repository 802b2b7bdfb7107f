//! Probe matrix, swap accuracy and entropies for a checkpoint on a fresh pendulum set.
//!
//! `cargo run --release --example evaluate -- <checkpoint> [eval.csv]`

use anyhow::{Context, Result};
use vdsm::datasets::{gen_pendulum, PendulumConfig};
use vdsm::evaluation::{evaluate, EvalConfig};
use vdsm::persistence::load_checkpoint;

fn main() -> Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let state = load_checkpoint(args.get(1).context("usage: evaluate <checkpoint> [csv]")?)?;
    let heldout = gen_pendulum(&PendulumConfig { count: 280, seed: 1000, ..PendulumConfig::default() })?;
    let report = evaluate(&state, &heldout, &EvalConfig::default())?;
    for p in &report.probes {
        println!("{}→{}: {:.3} (chance {:.3}, n {})", p.embedding.name(), p.factor.name(), p.score.accuracy, p.score.chance(), p.score.n_test);
    }
    for s in &report.swaps {
        println!("swap {:?}: {:.3} over {}", s.factor, s.accuracy, s.n);
    }
    println!("H(y) {:.3}  H(y|x) {:.3}", report.inter_entropy, report.intra_entropy);
    if let Some(out) = args.get(2) {
        report.write_csv(out)?;
    }
    Ok(())
}
