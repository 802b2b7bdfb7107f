//! Per-epoch annealing of the KL weights and the mixture temperature.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Pretrain,
    Sequence,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Sequence => "sequence",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnealState {
    pub lambda_z: f64,
    pub lambda_s: f64,
    pub lambda_d: f64,
    pub tau_s: f64,
    pub epoch: usize,
    pub stage: Stage,
}

impl AnnealState {
    /// All weights at 1 with the given temperature.
    pub fn unit(tau_s: f64, stage: Stage) -> Self {
        Self { lambda_z: 1.0, lambda_s: 1.0, lambda_d: 1.0, tau_s, epoch: 0, stage }
    }
}

/// Endpoints of every schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub pretrain_lambda_z: (f64, f64),
    pub pretrain_lambda_s: (f64, f64),
    pub sequence_lambda_z: (f64, f64),
    pub lambda_d: f64,
    pub tau_min: f64,
    pub tau_max: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            pretrain_lambda_z: (30.0, 1.0),
            pretrain_lambda_s: (0.1, 1.0),
            sequence_lambda_z: (0.1, 1.0),
            lambda_d: 1.0,
            tau_min: 1.0,
            tau_max: 10.0,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            self.pretrain_lambda_z.0,
            self.pretrain_lambda_z.1,
            self.pretrain_lambda_s.0,
            self.pretrain_lambda_s.1,
            self.sequence_lambda_z.0,
            self.sequence_lambda_z.1,
            self.lambda_d,
        ];
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config("schedule weights must be finite and non-negative".into()));
        }
        if !(self.tau_min > 0.0 && self.tau_max >= self.tau_min && self.tau_max.is_finite()) {
            return Err(Error::Config("need 0 < tau_min <= tau_max".into()));
        }
        Ok(())
    }
}

fn progress(epoch: usize, total: usize) -> Result<f64> {
    if epoch >= total {
        return Err(Error::InvalidArgument(format!("epoch {epoch} outside 0..{total}")));
    }
    Ok(if total == 1 { 0.0 } else { epoch as f64 / (total - 1) as f64 })
}

/// Hits both endpoints exactly at `w = 0` and `w = 1`.
fn lerp((a, b): (f64, f64), w: f64) -> f64 {
    a * (1.0 - w) + b * w
}

/// Half-cosine descent of `lambda_z` and ascent of `lambda_s`; linear temperature ramp.
pub fn pretrain_schedule(epoch: usize, total_epochs: usize, cfg: &ScheduleConfig) -> Result<AnnealState> {
    let p = progress(epoch, total_epochs)?;
    let rise = if p == 1.0 { 1.0 } else { 0.5 * (1.0 - (PI * p).cos()) };
    Ok(AnnealState {
        lambda_z: lerp(cfg.pretrain_lambda_z, rise),
        lambda_s: lerp(cfg.pretrain_lambda_s, rise),
        lambda_d: cfg.lambda_d,
        tau_s: lerp((cfg.tau_min, cfg.tau_max), p),
        epoch,
        stage: Stage::Pretrain,
    })
}

/// Quadratic rise of `lambda_z`; everything else held.
pub fn sequence_schedule(epoch: usize, total_epochs: usize, cfg: &ScheduleConfig) -> Result<AnnealState> {
    let p = progress(epoch, total_epochs)?;
    Ok(AnnealState {
        lambda_z: lerp(cfg.sequence_lambda_z, p * p),
        lambda_s: 1.0,
        lambda_d: cfg.lambda_d,
        tau_s: cfg.tau_max,
        epoch,
        stage: Stage::Sequence,
    })
}
