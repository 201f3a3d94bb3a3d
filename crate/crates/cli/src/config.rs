//! Optional JSON config. Precedence: built-in defaults, then the config
//! file, then command-line flags.

use std::path::Path;

use platesmith_core::ddpm::{ScheduleConfig, TrainConfig};
use platesmith_core::net::NetConfig;
use serde::Deserialize;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,
    /// Profile name or a full network description.
    pub net: Option<NetSpec>,
    pub schedule: Option<ScheduleConfig>,
    #[serde(default)]
    pub train: TrainOverrides,
    /// Per-glyph confidence floor used by `classify`.
    pub threshold: Option<f64>,
    /// Pseudolabel acceptance threshold.
    pub tau: Option<f64>,
    pub lease_secs: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum NetSpec {
    Profile(String),
    Explicit(NetConfig),
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    pub batch_size: Option<usize>,
    pub base_lr: Option<f64>,
    pub warmup_steps: Option<usize>,
    pub total_steps: Option<usize>,
    pub ema_decay: Option<f64>,
    pub dropout: Option<f64>,
    pub weight_decay: Option<f64>,
}

pub const DEFAULT_PROFILE: &str = "desk-32x16";
pub const DEFAULT_STEPS: usize = 1500;
pub const DEFAULT_SCHEDULE_STEPS: usize = 100;
pub const DEFAULT_THRESHOLD: f64 = 0.8;
pub const DEFAULT_TAU: f64 = 0.8;

impl Config {
    pub fn load(path: Option<&Path>) -> CliResult<Config> {
        let Some(path) = path else {
            return Ok(Config::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("bad config {}: {e}", path.display())))
    }

    pub fn net(&self, flag: Option<&str>) -> CliResult<NetConfig> {
        let spec = match (flag, &self.net) {
            (Some(p), _) => NetSpec::Profile(p.to_string()),
            (None, Some(s)) => s.clone(),
            (None, None) => NetSpec::Profile(DEFAULT_PROFILE.to_string()),
        };
        match spec {
            NetSpec::Profile(p) => NetConfig::profile(&p).map_err(|e| CliError::Usage(e.to_string())),
            NetSpec::Explicit(c) => Ok(c),
        }
    }

    pub fn schedule(&self) -> CliResult<ScheduleConfig> {
        match &self.schedule {
            Some(s) => Ok(s.clone()),
            None => ScheduleConfig::shortened(DEFAULT_SCHEDULE_STEPS).map_err(|e| CliError::Usage(e.to_string())),
        }
    }

    /// Desk-scale defaults with config values and `steps` layered on top.
    pub fn train(&self, steps: Option<usize>) -> CliResult<TrainConfig> {
        let o = &self.train;
        let total_steps = steps.or(o.total_steps).unwrap_or(DEFAULT_STEPS);
        let cfg = TrainConfig {
            batch_size: o.batch_size.unwrap_or(32),
            base_lr: o.base_lr.unwrap_or(2e-3),
            warmup_steps: o.warmup_steps.unwrap_or(total_steps / 20),
            total_steps,
            ema_decay: o.ema_decay.unwrap_or(0.99),
            dropout: o.dropout.unwrap_or(0.0),
            epochs: 1,
            weight_decay: o.weight_decay.unwrap_or(0.0),
        };
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}
