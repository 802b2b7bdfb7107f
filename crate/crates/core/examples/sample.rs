//! Unconditional and conditioned generation from a checkpoint into PNG grids.
//!
//! `cargo run --release --example sample -- <checkpoint> [out_dir]`

use anyhow::{Context, Result};
use vdsm::imaging::write_grid;
use vdsm::persistence::load_checkpoint;
use vdsm::trainer::{generate, GenerateInit};

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let ckpt = args.next().context("usage: sample <checkpoint> [out_dir]")?;
    let dir = args.next().unwrap_or_else(|| ".".into());
    let state = load_checkpoint(&ckpt)?;
    let free: Vec<_> = (0..6).map(|i| generate(&state, 16, &GenerateInit::default(), i)).collect::<Result<_, _>>()?;
    write_grid(format!("{dir}/unconditional.png"), &free)?;
    // One static vector, several dynamics draws: identity should stay fixed across rows.
    let s = vec![0.3f32; state.config.model.kappa_s];
    let fixed: Vec<_> = (0..6)
        .map(|i| generate(&state, 16, &GenerateInit { s: Some(s.clone()), ..GenerateInit::default() }, 100 + i))
        .collect::<Result<_, _>>()?;
    write_grid(format!("{dir}/fixed_identity.png"), &fixed)?;
    println!("wrote {dir}/unconditional.png and {dir}/fixed_identity.png");
    Ok(())
}
