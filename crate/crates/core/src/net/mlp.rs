use serde::{Deserialize, Serialize};

use super::{timestep_embedding, ParamLayout};
use crate::autodiff::{LinearParams, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Fully connected denoiser on concat(x, embedding(t)).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub time_dim: usize,
}

pub(super) struct Mlp {
    dim: usize,
    time_dim: usize,
    hidden: Vec<LinearParams>,
    out: LinearParams,
}

impl Mlp {
    pub(super) fn build(cfg: &MlpConfig, layout: &mut ParamLayout) -> Result<Mlp> {
        if cfg.dim == 0 || cfg.hidden == 0 || cfg.layers == 0 {
            return Err(Error::arg("MLP sizes must be positive"));
        }
        if cfg.time_dim < 2 || cfg.time_dim % 2 != 0 {
            return Err(Error::arg("time embedding width must be even and at least 2"));
        }
        let mut hidden = Vec::with_capacity(cfg.layers);
        let mut din = cfg.dim + cfg.time_dim;
        for i in 0..cfg.layers {
            hidden.push(layout.linear(&format!("hidden.{i}"), din, cfg.hidden));
            din = cfg.hidden;
        }
        let out = layout.linear("out", din, cfg.dim);
        layout.zero_init(out.weight);
        Ok(Mlp {
            dim: cfg.dim,
            time_dim: cfg.time_dim,
            hidden,
            out,
        })
    }

    pub(super) fn forward<S: Scalar>(&self, tape: &mut Tape<'_, S>, xt: &[S], t: usize) -> Result<Var> {
        let x = tape.input([self.dim, 1, 1], xt.to_vec())?;
        let e = tape.input([self.time_dim, 1, 1], timestep_embedding(t, self.time_dim))?;
        let mut h = tape.concat(x, e)?;
        for l in &self.hidden {
            h = tape.linear(h, *l)?;
            h = tape.silu(h);
        }
        tape.linear(h, self.out)
    }
}
