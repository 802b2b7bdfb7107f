//! Run configuration read from a TOML file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::EvalConfig;
use crate::trainer::{TrainConfig, Variant};

/// One run: data, outputs, training and evaluation settings. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Checkpoint to start stage 2 from; defaults to `<out_dir>/pretrain.ckpt`.
    pub pretrained: Option<PathBuf>,
    pub variant: Variant,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            out_dir: PathBuf::from("runs/default"),
            pretrained: None,
            variant: Variant::Full,
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.out_dir.join("checkpoint.ckpt")
    }

    pub fn pretrained_path(&self) -> PathBuf {
        self.pretrained.clone().unwrap_or_else(|| self.out_dir.join("pretrain.ckpt"))
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.out_dir.join("metrics.csv")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_files_fill_defaults() {
        let cfg = RunConfig::from_toml(
            r#"
            dataset = "data/pendulum.vdsd"
            out_dir = "runs/a"

            [train]
            pretrain_epochs = 5
            seed = 9

            [train.model]
            kappa_z = 4

            [train.schedule]
            tau_max = 5.0
            "#,
        )
        .unwrap();
        assert_eq!(cfg.train.pretrain_epochs, 5);
        assert_eq!(cfg.train.model.kappa_z, 4);
        assert_eq!(cfg.train.model.kappa_s, 8);
        assert_eq!(cfg.train.schedule.tau_max, 5.0);
        assert_eq!(cfg.pretrained_path(), PathBuf::from("runs/a/pretrain.ckpt"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("learning_rate = 1.0").is_err());
        assert!(RunConfig::from_toml("[train]\nepochs = 3").is_err());
        assert!(RunConfig::from_toml("[train.model]\nkappa = 3").is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(RunConfig::from_toml("[train]\nbatch_size = 0").is_err());
        assert!(RunConfig::from_toml("[train.model]\nkappa_s = 4").is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }
}
