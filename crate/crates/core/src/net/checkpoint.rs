use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::{AdamW, Net, NetConfig, TrainState};
use crate::ddpm::{ScheduleConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Position of a ChaCha8 generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// u128 word position, as a decimal string.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Format(format!("bad rng word position {:?}", self.word_pos)))?;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

/// JSON training snapshot. Parameters are stored as f64 regardless of the
/// scalar type used for training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub net: NetConfig,
    pub schedule: ScheduleConfig,
    pub train: TrainConfig,
    pub step: usize,
    pub params: Vec<f64>,
    pub ema: Vec<f64>,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
    pub rng: RngState,
    #[serde(default)]
    pub losses: Vec<f64>,
}

fn to_f64<S: Scalar>(v: &[S]) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

fn from_f64<S: Scalar>(v: &[f64]) -> Vec<S> {
    v.iter().map(|&x| S::lit(x)).collect()
}

impl Checkpoint {
    pub fn capture<S: Scalar>(net: &Net, schedule: ScheduleConfig, train: TrainConfig, state: &TrainState<S>) -> Self {
        let (m, v) = state.optimizer.moments();
        Checkpoint {
            version: CHECKPOINT_VERSION,
            net: net.config().clone(),
            schedule,
            train,
            step: state.step,
            params: to_f64(&state.params),
            ema: to_f64(&state.ema),
            adam_m: to_f64(m),
            adam_v: to_f64(v),
            rng: RngState::capture(&state.rng),
            losses: state.losses.clone(),
        }
    }

    /// Rebuilds the network and training state, checking vector lengths
    /// against the stored configuration.
    pub fn restore<S: Scalar>(&self) -> Result<(Net, TrainState<S>)> {
        let net = Net::new(self.net.clone())?;
        let n = net.param_count();
        for (name, v) in [("params", &self.params), ("ema", &self.ema), ("adam_m", &self.adam_m), ("adam_v", &self.adam_v)] {
            if v.len() != n {
                return Err(Error::Format(format!(
                    "checkpoint {name} has {} values, network needs {n}",
                    v.len()
                )));
            }
        }
        let state = TrainState {
            params: from_f64(&self.params),
            ema: from_f64(&self.ema),
            optimizer: AdamW::from_parts(self.step as u64, from_f64(&self.adam_m), from_f64(&self.adam_v))?,
            step: self.step,
            rng: self.rng.restore()?,
            losses: self.losses.clone(),
        };
        Ok((net, state))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = serde_json::to_vec(self)?;
        crate::io::write_atomic(path, &bytes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_slice(&bytes)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        Ok(ck)
    }
}
