use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;

use super::{AdamW, Net};
use crate::ddpm::{ema_update, gaussian, lr_at_step, sample_rng, DiffusionSample, NoiseSchedule, TrainConfig};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Everything that changes during training.
#[derive(Debug, Clone)]
pub struct TrainState<S> {
    pub params: Vec<S>,
    pub ema: Vec<S>,
    pub optimizer: AdamW<S>,
    pub step: usize,
    pub rng: ChaCha8Rng,
    pub losses: Vec<f64>,
}

/// Drives epsilon-prediction training of a [`Net`] on a fixed data set.
/// Each step draws `batch_size` examples uniformly with replacement, a step
/// index uniform on 1..=T and fresh Gaussian noise.
pub struct Trainer<'a, S> {
    net: &'a Net,
    sched: &'a NoiseSchedule<S>,
    cfg: TrainConfig,
    data: &'a [Vec<S>],
}

impl<'a, S: Scalar> Trainer<'a, S> {
    pub fn new(net: &'a Net, sched: &'a NoiseSchedule<S>, cfg: TrainConfig, data: &'a [Vec<S>]) -> Result<Self> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(Error::arg("training set is empty"));
        }
        if let Some(bad) = data.iter().position(|x| x.len() != net.sample_len()) {
            return Err(Error::ShapeMismatch {
                expected: format!("{} elements", net.sample_len()),
                actual: format!("{} elements in example {bad}", data[bad].len()),
            });
        }
        Ok(Trainer { net, sched, cfg, data })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Fresh state: default init from `seed`, EMA equal to the raw weights.
    pub fn init_state(&self, seed: u64) -> TrainState<S> {
        let params: Vec<S> = self.net.init_params(seed);
        TrainState {
            ema: params.clone(),
            optimizer: AdamW::new(params.len()),
            params,
            step: 0,
            rng: sample_rng(seed, 1),
            losses: Vec::new(),
        }
    }

    /// One optimizer step; returns the batch loss.
    pub fn step(&self, state: &mut TrainState<S>) -> Result<f64> {
        if state.step >= self.cfg.total_steps {
            return Err(Error::arg(format!("training already finished at step {}", state.step)));
        }
        let n = self.data.len();
        let batch = (0..self.cfg.batch_size)
            .map(|_| {
                let i = state.rng.random_range(0..n);
                let t = state.rng.random_range(1..=self.sched.steps());
                let eps = gaussian::<S, _>(&mut state.rng, self.net.sample_len());
                DiffusionSample::new(self.data[i].clone(), t, eps, self.sched)
            })
            .collect::<Result<Vec<_>>>()?;
        let dropout_seed = state.rng.next_u64();
        let (loss, grad) = self.net.loss_and_grad(&state.params, &batch, dropout_seed)?;
        let lr = lr_at_step(state.step + 1, &self.cfg)?;
        state.optimizer.step(&mut state.params, &grad, lr, self.cfg.weight_decay)?;
        ema_update(&mut state.ema, &state.params, self.cfg.ema_decay)?;
        state.step += 1;
        let loss = loss.as_f64();
        state.losses.push(loss);
        Ok(loss)
    }

    /// Runs until `total_steps`, calling `progress(step, loss)` after each step.
    pub fn run(&self, state: &mut TrainState<S>, mut progress: impl FnMut(usize, f64)) -> Result<()> {
        while state.step < self.cfg.total_steps {
            let loss = self.step(state)?;
            progress(state.step, loss);
        }
        Ok(())
    }
}
