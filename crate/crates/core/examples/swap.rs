//! Identity and dynamics transfer between two pendulum sequences.
//!
//! `cargo run --release --example swap -- <checkpoint> [a] [b]`

use anyhow::{Context, Result};
use vdsm::datasets::{gen_pendulum, PendulumConfig};
use vdsm::imaging::write_grid;
use vdsm::persistence::load_checkpoint;
use vdsm::trainer::{reconstruct, swap, Factor};

fn main() -> Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let state = load_checkpoint(args.get(1).context("usage: swap <checkpoint> [a] [b]")?)?;
    let idx = |i: usize, d: usize| args.get(i).and_then(|v| v.parse().ok()).unwrap_or(d);
    let ds = gen_pendulum(&PendulumConfig { count: 28, seed: 1000, ..PendulumConfig::default() })?;
    let (a, b) = (&ds.sequences[idx(2, 0)], &ds.sequences[idx(3, 8)]);
    println!("a: {} {}, b: {} {}", ds.identity_names[a.identity_label], ds.action_names[a.action_label], ds.identity_names[b.identity_label], ds.action_names[b.action_label]);
    let rows = vec![
        a.frames.clone(),
        b.frames.clone(),
        reconstruct(&state, &a.frames, 0)?,
        swap(&state, &a.frames, &b.frames, Factor::Identity, 0)?,
        swap(&state, &a.frames, &b.frames, Factor::Dynamics, 0)?,
    ];
    write_grid("swap_demo.png", &rows)?;
    println!("rows: a, b, reconstruction of a, a with b's identity, a with b's dynamics -> swap_demo.png");
    Ok(())
}
