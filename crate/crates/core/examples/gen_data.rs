//! Writes the pendulum and moving-shapes sets with their manifests.
//!
//! `cargo run --example gen_data -- [out_dir]`

use anyhow::Result;
use vdsm::datasets::{gen_moving_shapes, gen_pendulum, save_dataset, PendulumConfig, ShapesConfig};

fn main() -> Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "data".into());
    std::fs::create_dir_all(&dir)?;
    let pendulum = gen_pendulum(&PendulumConfig { seed: 7, ..PendulumConfig::default() })?;
    let shapes = gen_moving_shapes(&ShapesConfig::default())?;
    for (name, ds) in [("pendulum", &pendulum), ("shapes", &shapes)] {
        let path = format!("{dir}/{name}.vdsd");
        let m = save_dataset(ds, &path)?;
        println!("{path}: {} sequences {:?}, identities {:?}, actions {:?}", m.count, m.shape, m.identities, m.actions);
    }
    Ok(())
}
