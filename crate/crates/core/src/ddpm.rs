//! Diffusion process math: linear noise schedule, closed-form forward
//! corruption, the epsilon-prediction objective, ancestral sampling, and the
//! learning-rate / EMA schedules used during training.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Raster;
use crate::scalar::Scalar;

/// Variance of the noise injected by each reverse step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingVariance {
    /// sigma_t^2 = beta_t
    #[default]
    Beta,
    /// sigma_t^2 = beta_t (1 - abar_{t-1}) / (1 - abar_t)
    Posterior,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule<S> {
    beta: Vec<S>,
    alpha: Vec<S>,
    alpha_bar: Vec<S>,
    sigma: Vec<S>,
    variance: SamplingVariance,
}

/// Linear beta schedule over `steps` steps.
pub fn make_schedule<S: Scalar>(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule<S>> {
    NoiseSchedule::linear(steps, beta_start, beta_end, SamplingVariance::Beta)
}

impl<S: Scalar> NoiseSchedule<S> {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64, variance: SamplingVariance) -> Result<Self> {
        if steps == 0 {
            return Err(Error::arg("schedule needs at least one step"));
        }
        if !beta_start.is_finite() || !beta_end.is_finite() {
            return Err(Error::arg("beta range must be finite"));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::arg(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}..{beta_end}"
            )));
        }
        let beta: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(&beta, variance)
    }

    pub fn from_betas(betas: &[f64], variance: SamplingVariance) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::arg("schedule needs at least one step"));
        }
        if betas.iter().any(|b| !(b.is_finite() && *b > 0.0 && *b < 1.0)) {
            return Err(Error::arg("every beta must lie in (0, 1)"));
        }
        let mut alpha_bar = Vec::with_capacity(betas.len());
        let mut prod = 1.0f64;
        for b in betas {
            prod *= 1.0 - b;
            alpha_bar.push(prod);
        }
        let sigma = betas
            .iter()
            .enumerate()
            .map(|(i, &b)| match variance {
                SamplingVariance::Beta => b.sqrt(),
                SamplingVariance::Posterior => {
                    let prev = if i == 0 { 1.0 } else { alpha_bar[i - 1] };
                    (b * (1.0 - prev) / (1.0 - alpha_bar[i])).sqrt()
                }
            })
            .collect::<Vec<_>>();
        let conv = |v: &[f64]| v.iter().map(|&x| S::lit(x)).collect::<Vec<S>>();
        Ok(NoiseSchedule {
            beta: conv(betas),
            alpha: betas.iter().map(|b| S::lit(1.0 - b)).collect(),
            alpha_bar: conv(&alpha_bar),
            sigma: conv(&sigma),
            variance,
        })
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn variance(&self) -> SamplingVariance {
        self.variance
    }

    pub(crate) fn index(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.steps() {
            return Err(Error::StepOutOfRange {
                step: t,
                max: self.steps(),
            });
        }
        Ok(t - 1)
    }

    /// beta_t for t in 1..=T.
    pub fn beta(&self, t: usize) -> S {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> S {
        self.alpha[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> S {
        self.alpha_bar[t - 1]
    }

    pub fn sigma(&self, t: usize) -> S {
        self.sigma[t - 1]
    }

    pub fn betas(&self) -> &[S] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[S] {
        &self.alpha_bar
    }

    pub fn sigmas(&self) -> &[S] {
        &self.sigma
    }
}

/// Serializable description of a linear schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    #[serde(default)]
    pub variance: SamplingVariance,
}

impl Default for ScheduleConfig {
    /// T = 1000, beta 1e-4 to 0.02.
    fn default() -> Self {
        ScheduleConfig {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            variance: SamplingVariance::Beta,
        }
    }
}

impl ScheduleConfig {
    /// Shortened chain with the default beta range scaled by 1000 / steps so
    /// the final abar stays close to that of the 1000-step chain.
    pub fn shortened(steps: usize) -> Result<Self> {
        if steps == 0 || steps > 1000 {
            return Err(Error::arg(format!("shortened schedule needs 1..=1000 steps, got {steps}")));
        }
        let k = 1000.0 / steps as f64;
        Ok(ScheduleConfig {
            steps,
            beta_start: 1e-4 * k,
            beta_end: (0.02 * k).min(0.999),
            variance: SamplingVariance::Beta,
        })
    }

    pub fn build<S: Scalar>(&self) -> Result<NoiseSchedule<S>> {
        NoiseSchedule::linear(self.steps, self.beta_start, self.beta_end, self.variance)
    }
}

/// One training example: clean data, step, noise and the corrupted data.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSample<S> {
    pub x0: Vec<S>,
    pub t: usize,
    pub eps: Vec<S>,
    pub xt: Vec<S>,
}

impl<S: Scalar> DiffusionSample<S> {
    pub fn new(x0: Vec<S>, t: usize, eps: Vec<S>, sched: &NoiseSchedule<S>) -> Result<Self> {
        let xt = forward_sample(&x0, t, &eps, sched)?;
        Ok(DiffusionSample { x0, t, eps, xt })
    }
}

fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        });
    }
    Ok(())
}

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
pub fn forward_sample<S: Scalar>(x0: &[S], t: usize, eps: &[S], sched: &NoiseSchedule<S>) -> Result<Vec<S>> {
    let i = sched.index(t)?;
    check_len(x0.len(), eps.len())?;
    let a = sched.alpha_bar[i].sqrt();
    let b = (S::one() - sched.alpha_bar[i]).sqrt();
    Ok(x0.iter().zip(eps).map(|(&x, &e)| a * x + b * e).collect())
}

/// Anything that predicts the noise component of a corrupted sample.
pub trait EpsPredictor<S>: Sync {
    fn predict(&self, xt: &[S], t: usize) -> Result<Vec<S>>;
}

impl<S, F> EpsPredictor<S> for F
where
    F: Fn(&[S], usize) -> Vec<S> + Sync,
{
    fn predict(&self, xt: &[S], t: usize) -> Result<Vec<S>> {
        Ok(self(xt, t))
    }
}

/// Mean squared error between the true and predicted noise, averaged over
/// batch and elements.
pub fn training_loss<S: Scalar, D: EpsPredictor<S> + ?Sized>(
    denoiser: &D,
    batch: &[DiffusionSample<S>],
    sched: &NoiseSchedule<S>,
) -> Result<S> {
    if batch.is_empty() {
        return Err(Error::arg("empty training batch"));
    }
    let mut total = S::zero();
    let mut count = 0usize;
    for s in batch {
        sched.index(s.t)?;
        let eps_hat = denoiser.predict(&s.xt, s.t)?;
        check_len(s.eps.len(), eps_hat.len())?;
        for (e, h) in s.eps.iter().zip(&eps_hat) {
            let d = *e - *h;
            total += d * d;
        }
        count += s.eps.len();
    }
    let loss = total / S::of_usize(count.max(1));
    if !loss.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }
    Ok(loss)
}

/// x_{t-1} = (x_t - beta_t / sqrt(1 - abar_t) eps_hat) / sqrt(alpha_t) + sigma_t z,
/// with z ignored at t = 1.
pub fn ancestral_step<S: Scalar>(
    xt: &[S],
    t: usize,
    eps_hat: &[S],
    z: &[S],
    sched: &NoiseSchedule<S>,
) -> Result<Vec<S>> {
    let i = sched.index(t)?;
    check_len(xt.len(), eps_hat.len())?;
    if t > 1 {
        check_len(xt.len(), z.len())?;
    }
    let inv_sqrt_alpha = S::one() / sched.alpha[i].sqrt();
    let coef = sched.beta[i] / (S::one() - sched.alpha_bar[i]).sqrt();
    let sigma = sched.sigma[i];
    Ok(xt
        .iter()
        .zip(eps_hat)
        .enumerate()
        .map(|(k, (&x, &e))| {
            let mean = inv_sqrt_alpha * (x - coef * e);
            if t > 1 {
                mean + sigma * z[k]
            } else {
                mean
            }
        })
        .collect())
}

/// Standard normal vector drawn from `rng`.
pub fn gaussian<S: Scalar, R: rand::Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<S> {
    (0..len)
        .map(|_| {
            let v: f64 = StandardNormal.sample(rng);
            S::lit(v)
        })
        .collect()
}

/// Per-sample generator: sample `i` of a batch always sees the same stream.
pub fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Runs the reverse chain t = T..1 for `count` samples of `len` elements and
/// returns the raw final values.
pub fn sample_loop<S: Scalar, D: EpsPredictor<S> + ?Sized>(
    denoiser: &D,
    sched: &NoiseSchedule<S>,
    count: usize,
    len: usize,
    seed: u64,
) -> Result<Vec<Vec<S>>> {
    if count == 0 || len == 0 {
        return Err(Error::arg(format!("cannot sample shape ({count}, {len})")));
    }
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(seed, i);
            let mut x = gaussian::<S, _>(&mut rng, len);
            for t in (1..=sched.steps()).rev() {
                let eps_hat = denoiser.predict(&x, t)?;
                let z = if t > 1 {
                    gaussian::<S, _>(&mut rng, len)
                } else {
                    Vec::new()
                };
                x = ancestral_step(&x, t, &eps_hat, &z, sched)?;
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("sample {i} at step {t}")));
                }
            }
            Ok(x)
        })
        .collect()
}

/// Samples images of shape (channels, height, width), clamped to [-1,1] and
/// mapped to 8-bit.
pub fn sample_images<S: Scalar, D: EpsPredictor<S> + ?Sized>(
    denoiser: &D,
    sched: &NoiseSchedule<S>,
    count: usize,
    shape: (usize, usize, usize),
    seed: u64,
) -> Result<Vec<Raster>> {
    let (c, h, w) = shape;
    let raw = sample_loop(denoiser, sched, count, c * h * w, seed)?;
    raw.iter()
        .map(|x| Raster::from_signed_tensor(x, w, h, c))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub ema_decay: f64,
    pub dropout: f64,
    pub epochs: usize,
    pub weight_decay: f64,
}

impl TrainConfig {
    /// Full-scale recipe: batch 64, lr 1e-4 with 5000 warmup steps and cosine
    /// decay, EMA 0.9999, dropout 0.1, 100 epochs. `total_steps` depends on the
    /// dataset size and must be filled in by the caller.
    pub fn faithful(total_steps: usize) -> Self {
        TrainConfig {
            batch_size: 64,
            base_lr: 1e-4,
            warmup_steps: 5000,
            total_steps,
            ema_decay: 0.9999,
            dropout: 0.1,
            epochs: 100,
            weight_decay: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::arg("batch size must be positive"));
        }
        if self.warmup_steps >= self.total_steps {
            return Err(Error::arg("warmup must be shorter than the total step count"));
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return Err(Error::arg("EMA decay must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::arg("dropout must lie in [0, 1)"));
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(Error::arg("learning rate must be positive"));
        }
        Ok(())
    }
}

/// Linear warmup from 0 to the base rate, then half-cosine decay to 0 at `total_steps`.
pub fn lr_at_step(step: usize, cfg: &TrainConfig) -> Result<f64> {
    if step > cfg.total_steps {
        return Err(Error::arg(format!(
            "step {step} beyond total {}",
            cfg.total_steps
        )));
    }
    if step < cfg.warmup_steps {
        return Ok(cfg.base_lr * step as f64 / cfg.warmup_steps as f64);
    }
    let span = (cfg.total_steps - cfg.warmup_steps).max(1) as f64;
    let progress = (step - cfg.warmup_steps) as f64 / span;
    Ok(cfg.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// ema <- decay * ema + (1 - decay) * current.
pub fn ema_update<S: Scalar>(ema: &mut [S], current: &[S], decay: f64) -> Result<()> {
    check_len(ema.len(), current.len())?;
    if !(0.0..=1.0).contains(&decay) {
        return Err(Error::arg("EMA decay must lie in [0, 1]"));
    }
    let d = S::lit(decay);
    let rest = S::one() - d;
    for (e, &c) in ema.iter_mut().zip(current) {
        *e = d * *e + rest * c;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched2() -> NoiseSchedule<f64> {
        NoiseSchedule::from_betas(&[0.1, 0.2], SamplingVariance::Beta).unwrap()
    }

    #[test]
    fn single_step_schedule() {
        let s: NoiseSchedule<f64> = make_schedule(1, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bar(1), 0.5);
    }

    #[test]
    fn hand_product() {
        let s = sched2();
        assert!((s.alpha_bar(1) - 0.9).abs() < 1e-15);
        assert!((s.alpha_bar(2) - 0.72).abs() < 1e-15);
        // Linear constructor with endpoints 0.1 and 0.2 over two steps agrees.
        let l: NoiseSchedule<f64> = make_schedule(2, 0.1, 0.2).unwrap();
        assert!((l.alpha_bar(2) - 0.72).abs() < 1e-15);
    }

    #[test]
    fn default_schedule_terminal_value() {
        let s: NoiseSchedule<f64> = make_schedule(1000, 1e-4, 0.02).unwrap();
        // Direct product, independent of the running product in the schedule.
        let direct: f64 = (0..1000)
            .map(|i| 1.0 - (1e-4 + (0.02 - 1e-4) * i as f64 / 999.0))
            .product();
        assert!((s.alpha_bar(1000) - direct).abs() < 1e-15);
        assert!(direct < 1e-4);
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn rejects_bad_ranges() {
        assert!(make_schedule::<f64>(0, 1e-4, 0.02).is_err());
        assert!(make_schedule::<f64>(10, 0.0, 0.02).is_err());
        assert!(make_schedule::<f64>(10, 0.03, 0.02).is_err());
        assert!(make_schedule::<f64>(10, 1e-4, 1.0).is_err());
        assert!(make_schedule::<f64>(10, f64::NAN, 0.02).is_err());
    }

    #[test]
    fn forward_examples() {
        let s = sched2();
        let xt = forward_sample(&[2.0, -1.0], 1, &[0.0, 0.0], &s).unwrap();
        assert!((xt[0] - 2.0 * 0.9f64.sqrt()).abs() < 1e-15);
        let xt = forward_sample(&[1.0], 2, &[1.0], &s).unwrap();
        assert!((xt[0] - (0.72f64.sqrt() + 0.28f64.sqrt())).abs() < 1e-15);
        assert!(forward_sample(&[1.0], 3, &[1.0], &s).is_err());
        assert!(forward_sample(&[1.0], 0, &[1.0], &s).is_err());
        assert!(forward_sample(&[1.0, 2.0], 1, &[1.0], &s).is_err());
    }

    #[test]
    fn loss_examples() {
        let s = sched2();
        let batch = vec![
            DiffusionSample::new(vec![0.5, -0.5], 1, vec![0.3, 0.7], &s).unwrap(),
            DiffusionSample::new(vec![0.1, 0.2], 2, vec![-1.0, 0.4], &s).unwrap(),
        ];
        // Oracle that inverts the forward process knowing x0.
        let lookup = batch.clone();
        let exact = move |xt: &[f64], t: usize| -> Vec<f64> {
            let b = lookup.iter().find(|b| b.t == t && b.xt == xt).unwrap();
            b.eps.clone()
        };
        assert_eq!(training_loss(&exact, &batch, &s).unwrap(), 0.0);
        let lookup = batch.clone();
        let shifted = move |xt: &[f64], t: usize| -> Vec<f64> {
            let b = lookup.iter().find(|b| b.t == t && b.xt == xt).unwrap();
            b.eps.iter().map(|e| e + 0.25).collect()
        };
        assert!((training_loss(&shifted, &batch, &s).unwrap() - 0.0625).abs() < 1e-15);
        assert!(training_loss(&exact, &[], &s).is_err());
    }

    #[test]
    fn step_at_one_inverts_forward() {
        let s = sched2();
        let x0 = [0.3, -0.8];
        let eps = [1.1, 0.4];
        let x1 = forward_sample(&x0, 1, &eps, &s).unwrap();
        let back = ancestral_step(&x1, 1, &eps, &[], &s).unwrap();
        for (a, b) in back.iter().zip(&x0) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_noise_step_rescales() {
        let s = sched2();
        let zeros = [0.0, 0.0];
        let out = ancestral_step(&[1.0, -2.0], 2, &zeros, &zeros, &s).unwrap();
        let k = 1.0 / 0.8f64.sqrt();
        assert!((out[0] - k).abs() < 1e-15 && (out[1] + 2.0 * k).abs() < 1e-15);
        assert!(ancestral_step(&[1.0], 3, &[0.0], &[0.0], &s).is_err());
    }

    #[test]
    fn sample_loop_rejects_empty_shape() {
        let s = sched2();
        let zero = |x: &[f64], _t: usize| vec![0.0; x.len()];
        assert!(sample_loop(&zero, &s, 0, 4, 1).is_err());
        assert!(sample_loop(&zero, &s, 2, 0, 1).is_err());
        let a = sample_loop(&zero, &s, 3, 4, 9).unwrap();
        assert_eq!(a, sample_loop(&zero, &s, 3, 4, 9).unwrap());
    }

    #[test]
    fn lr_schedule_points() {
        let cfg = TrainConfig {
            batch_size: 1,
            base_lr: 1e-4,
            warmup_steps: 5000,
            total_steps: 25000,
            ema_decay: 0.9999,
            dropout: 0.1,
            epochs: 1,
            weight_decay: 0.0,
        };
        assert_eq!(lr_at_step(0, &cfg).unwrap(), 0.0);
        assert!((lr_at_step(5000, &cfg).unwrap() - 1e-4).abs() < 1e-18);
        assert!((lr_at_step(15000, &cfg).unwrap() - 5e-5).abs() < 1e-15);
        assert!(lr_at_step(25000, &cfg).unwrap().abs() < 1e-18);
        assert!(lr_at_step(25001, &cfg).is_err());
        let before = lr_at_step(4999, &cfg).unwrap();
        let after = lr_at_step(5001, &cfg).unwrap();
        assert!((before - 1e-4).abs() < 1e-7 && (after - 1e-4).abs() < 1e-7);
    }

    #[test]
    fn ema_cases() {
        let cur: [f64; 3] = [1.0, 2.0, 3.0];
        let mut e = [5.0, 5.0, 5.0];
        ema_update(&mut e, &cur, 0.0).unwrap();
        assert_eq!(e, cur);
        let mut e = [5.0, 5.0, 5.0];
        ema_update(&mut e, &cur, 1.0).unwrap();
        assert_eq!(e, [5.0; 3]);
        let mut e = cur;
        ema_update(&mut e, &cur, 0.37).unwrap();
        for (a, b) in e.iter().zip(&cur) {
            assert!((a - b).abs() < 1e-15f64);
        }
        assert!(ema_update(&mut [0.0], &cur, 0.5).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::faithful(10_000);
        c.validate().unwrap();
        c.warmup_steps = 10_000;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::faithful(10_000);
        c.dropout = 1.0;
        assert!(c.validate().is_err());
    }
}
