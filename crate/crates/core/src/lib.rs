//! Sequential VAE that separates identity, dynamics and pose, with a blended mixture-of-experts decoder.

pub mod autograd;
pub mod cli;
pub mod config;
pub mod datasets;
pub mod distributions;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod imaging;
pub mod model;
pub mod moe;
pub mod nn;
pub mod objectives;
pub mod optim;
pub mod persistence;
pub mod schedules;
pub mod sequence;
pub mod tensor;
pub mod trainer;
pub mod transition;

pub use error::{Error, Result};
