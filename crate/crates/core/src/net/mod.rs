//! Trainable noise-prediction networks: a small U-Net family for images and
//! an MLP for low-dimensional toy data, both evaluated on the autodiff tape.

mod checkpoint;
mod mlp;
mod optim;
mod train;
mod unet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ConvParams, LinearParams, Tape, Var};
use crate::ddpm::{sample_rng, DiffusionSample, EpsPredictor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use checkpoint::{Checkpoint, RngState, CHECKPOINT_VERSION};
pub use mlp::MlpConfig;
pub use optim::AdamW;
pub use train::{TrainState, Trainer};
pub use unet::UnetConfig;

/// Named slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    /// Fan-in used by the default initializer; 0 means "start at zero".
    pub fan_in: usize,
}

/// Layout of the flat parameter vector. Segments are contiguous and in
/// allocation order, so their offsets partition `0..len()`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParamLayout {
    segments: Vec<Segment>,
    total: usize,
}

impl ParamLayout {
    fn alloc(&mut self, name: String, len: usize, fan_in: usize) -> usize {
        let offset = self.total;
        self.segments.push(Segment {
            name,
            offset,
            len,
            fan_in,
        });
        self.total += len;
        offset
    }

    pub(crate) fn conv(&mut self, name: &str, cin: usize, cout: usize, kernel: usize, stride: usize) -> ConvParams {
        let fan_in = cin * kernel * kernel;
        let weight = self.alloc(format!("{name}.weight"), cout * fan_in, fan_in);
        let bias = self.alloc(format!("{name}.bias"), cout, 0);
        ConvParams {
            weight,
            bias,
            cin,
            cout,
            kernel,
            stride,
        }
    }

    pub(crate) fn linear(&mut self, name: &str, din: usize, dout: usize) -> LinearParams {
        let weight = self.alloc(format!("{name}.weight"), din * dout, din);
        let bias = self.alloc(format!("{name}.bias"), dout, 0);
        LinearParams {
            weight,
            bias,
            din,
            dout,
        }
    }

    /// Marks a segment as zero-initialized.
    pub(crate) fn zero_init(&mut self, offset: usize) {
        if let Some(s) = self.segments.iter_mut().find(|s| s.offset == offset) {
            s.fan_in = 0;
        }
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NetConfig {
    Unet(UnetConfig),
    Mlp(MlpConfig),
}

/// Names accepted by [`NetConfig::profile`].
pub const PROFILES: [&str; 4] = ["ci-tiny", "desk-32x16", "paper-64x64", "toy-2d"];

impl NetConfig {
    pub fn profile(name: &str) -> Result<NetConfig> {
        let unet = |channels, height, width, widths: &[usize], res_blocks, attention: &[usize], time_dim, dropout| {
            NetConfig::Unet(UnetConfig {
                channels,
                height,
                width,
                widths: widths.to_vec(),
                res_blocks,
                attention: attention.to_vec(),
                heads: 1,
                time_dim,
                dropout,
            })
        };
        Ok(match name {
            "ci-tiny" => unet(3, 16, 16, &[8, 16], 1, &[8], 16, 0.0),
            "desk-32x16" => unet(3, 16, 32, &[8, 16], 1, &[8], 16, 0.0),
            "paper-64x64" => unet(3, 64, 64, &[128, 128, 256, 256, 512], 2, &[16, 8], 128, 0.1),
            "toy-2d" => NetConfig::Mlp(MlpConfig {
                dim: 2,
                hidden: 64,
                layers: 2,
                time_dim: 16,
            }),
            other => {
                return Err(Error::arg(format!(
                    "unknown profile {other:?}; expected one of {}",
                    PROFILES.join(", ")
                )))
            }
        })
    }

    pub fn dropout(&self) -> f64 {
        match self {
            NetConfig::Unet(c) => c.dropout,
            NetConfig::Mlp(_) => 0.0,
        }
    }
}

enum Arch {
    Unet(unet::Unet),
    Mlp(mlp::Mlp),
}

/// A denoiser architecture with its parameter layout. Parameters live
/// outside the network so the same `Net` serves raw and EMA weights.
pub struct Net {
    config: NetConfig,
    layout: ParamLayout,
    arch: Arch,
}

impl std::fmt::Debug for Net {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Net")
            .field("config", &self.config)
            .field("params", &self.layout.len())
            .finish()
    }
}

impl Net {
    pub fn new(config: NetConfig) -> Result<Net> {
        let mut layout = ParamLayout::default();
        let arch = match &config {
            NetConfig::Unet(c) => Arch::Unet(unet::Unet::build(c, &mut layout)?),
            NetConfig::Mlp(c) => Arch::Mlp(mlp::Mlp::build(c, &mut layout)?),
        };
        Ok(Net { config, layout, arch })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.layout.len()
    }

    /// (channels, height, width) of one sample; the MLP reports (dim, 1, 1).
    pub fn sample_shape(&self) -> (usize, usize, usize) {
        match &self.config {
            NetConfig::Unet(c) => (c.channels, c.height, c.width),
            NetConfig::Mlp(c) => (c.dim, 1, 1),
        }
    }

    pub fn sample_len(&self) -> usize {
        let (c, h, w) = self.sample_shape();
        c * h * w
    }

    /// Weights uniform in ±1/sqrt(fan_in), biases and the output layer zero.
    pub fn init_params<S: Scalar>(&self, seed: u64) -> Vec<S> {
        let mut rng = sample_rng(seed, 0);
        let mut out = vec![S::zero(); self.layout.len()];
        for seg in &self.layout.segments {
            if seg.fan_in == 0 {
                continue;
            }
            let bound = 1.0 / (seg.fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            for v in &mut out[seg.offset..seg.offset + seg.len] {
                *v = S::lit(dist.sample(&mut rng));
            }
        }
        out
    }

    fn check(&self, params_len: usize, x_len: usize, t: usize) -> Result<()> {
        if params_len != self.layout.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} parameters", self.layout.len()),
                actual: format!("{params_len} parameters"),
            });
        }
        if x_len != self.sample_len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?}", self.sample_shape()),
                actual: format!("{x_len} elements"),
            });
        }
        if t == 0 {
            return Err(Error::StepOutOfRange { step: 0, max: usize::MAX });
        }
        Ok(())
    }

    fn record<S: Scalar>(
        &self,
        tape: &mut Tape<'_, S>,
        xt: &[S],
        t: usize,
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let mut ctx = Ctx {
            dropout: self.config.dropout(),
            rng: dropout,
        };
        match &self.arch {
            Arch::Unet(u) => u.forward(tape, xt, t, &mut ctx),
            Arch::Mlp(m) => m.forward(tape, xt, t),
        }
    }

    /// Predicted noise for `xt` at step `t`. Dropout is applied only when a
    /// generator is supplied (train mode) and the configured rate is positive.
    pub fn forward<S: Scalar>(
        &self,
        params: &[S],
        xt: &[S],
        t: usize,
        train_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Vec<S>> {
        self.check(params.len(), xt.len(), t)?;
        let mut tape = Tape::new(params);
        let out = self.record(&mut tape, xt, t, train_rng)?;
        let v = tape.value(out).to_vec();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("network output at t={t}")));
        }
        Ok(v)
    }

    /// Mean epsilon-MSE over `batch` and its gradient. Dropout masks for
    /// sample `i` come from stream `i` of `dropout_seed`. Per-sample gradients
    /// are summed in batch order, so the result does not depend on thread count.
    pub fn loss_and_grad<S: Scalar>(
        &self,
        params: &[S],
        batch: &[DiffusionSample<S>],
        dropout_seed: u64,
    ) -> Result<(S, Vec<S>)> {
        if batch.is_empty() {
            return Err(Error::arg("empty training batch"));
        }
        const CHUNK: usize = 8;
        let partials: Vec<(S, Vec<S>)> = batch
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(c, chunk)| {
                let mut loss = S::zero();
                let mut grad = vec![S::zero(); params.len()];
                for (j, s) in chunk.iter().enumerate() {
                    self.check(params.len(), s.xt.len(), s.t)?;
                    let mut rng = sample_rng(dropout_seed, c * CHUNK + j);
                    let mut tape = Tape::new(params);
                    let out = self.record(&mut tape, &s.xt, s.t, Some(&mut rng))?;
                    let l = tape.mse(out, s.eps.clone())?;
                    loss += tape.value(l)[0];
                    for (g, d) in grad.iter_mut().zip(tape.backward(l)) {
                        *g += d;
                    }
                }
                Ok((loss, grad))
            })
            .collect::<Result<_>>()?;
        let n = S::of_usize(batch.len());
        let mut loss = S::zero();
        let mut grad = vec![S::zero(); params.len()];
        for (l, g) in partials {
            loss += l;
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        loss /= n;
        grad.iter_mut().for_each(|g| *g /= n);
        if !loss.is_finite() {
            return Err(Error::NonFinite("training loss".into()));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("parameter gradient".into()));
        }
        Ok((loss, grad))
    }

    /// Eval-mode predictor over fixed parameters.
    pub fn bind<'a, S: Scalar>(&'a self, params: &'a [S]) -> Result<Bound<'a, S>> {
        if params.len() != self.layout.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} parameters", self.layout.len()),
                actual: format!("{} parameters", params.len()),
            });
        }
        Ok(Bound { net: self, params })
    }
}

pub struct Bound<'a, S> {
    net: &'a Net,
    params: &'a [S],
}

impl<S: Scalar> EpsPredictor<S> for Bound<'_, S> {
    fn predict(&self, xt: &[S], t: usize) -> Result<Vec<S>> {
        self.net.forward(self.params, xt, t, None)
    }
}

/// Dropout state threaded through the forward pass.
pub(crate) struct Ctx<'r> {
    dropout: f64,
    rng: Option<&'r mut ChaCha8Rng>,
}

impl Ctx<'_> {
    pub(crate) fn dropout<S: Scalar>(&mut self, tape: &mut Tape<'_, S>, x: Var) -> Result<Var> {
        let Some(rng) = self.rng.as_deref_mut() else {
            return Ok(x);
        };
        if self.dropout <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - self.dropout;
        let scale = S::lit(1.0 / keep);
        let n = tape.value(x).len();
        let mask = (0..n)
            .map(|_| if rng.random::<f64>() < keep { scale } else { S::zero() })
            .collect();
        tape.dropout(x, mask)
    }
}

/// Sinusoidal embedding of the step index: sines then cosines at
/// geometrically spaced frequencies 10000^(-i/half).
pub fn timestep_embedding<S: Scalar>(t: usize, dim: usize) -> Vec<S> {
    let half = dim / 2;
    let mut out = vec![S::zero(); dim];
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        let a = t as f64 * freq;
        out[i] = S::lit(a.sin());
        out[half + i] = S::lit(a.cos());
    }
    out
}
