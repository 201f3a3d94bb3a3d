use serde::{Deserialize, Serialize};

use super::{timestep_embedding, Ctx, ParamLayout};
use crate::autodiff::{ConvParams, LinearParams, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// U-Net shape. Level `l` runs at `(height, width) / 2^l` with `widths[l]`
/// channels; `attention` lists the feature-map heights that get a
/// self-attention block after each residual block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnetConfig {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub widths: Vec<usize>,
    pub res_blocks: usize,
    #[serde(default)]
    pub attention: Vec<usize>,
    #[serde(default = "one")]
    pub heads: usize,
    pub time_dim: usize,
    #[serde(default)]
    pub dropout: f64,
}

fn one() -> usize {
    1
}

impl UnetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() {
            return Err(Error::arg("U-Net needs at least one level"));
        }
        if self.channels == 0 || self.widths.contains(&0) {
            return Err(Error::arg("channel widths must be positive"));
        }
        if self.res_blocks == 0 {
            return Err(Error::arg("need at least one residual block per level"));
        }
        if self.time_dim < 2 || self.time_dim % 2 != 0 {
            return Err(Error::arg("time embedding width must be even and at least 2"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::arg("dropout must lie in [0, 1)"));
        }
        let div = 1usize << (self.widths.len() - 1);
        if self.height == 0 || self.width == 0 || self.height % div != 0 || self.width % div != 0 {
            return Err(Error::arg(format!(
                "{}x{} is not divisible by 2^{} for {} levels",
                self.width,
                self.height,
                self.widths.len() - 1,
                self.widths.len()
            )));
        }
        if self.heads == 0 {
            return Err(Error::arg("attention needs at least one head"));
        }
        for (l, &w) in self.widths.iter().enumerate() {
            if self.attends(l) && w % self.heads != 0 {
                return Err(Error::arg(format!("width {w} not divisible by {} heads", self.heads)));
            }
        }
        Ok(())
    }

    fn attends(&self, level: usize) -> bool {
        self.attention.contains(&(self.height >> level))
    }
}

struct ResBlock {
    conv1: ConvParams,
    temb: LinearParams,
    conv2: ConvParams,
    skip: Option<ConvParams>,
}

struct Attention {
    q: ConvParams,
    k: ConvParams,
    v: ConvParams,
    proj: ConvParams,
    heads: usize,
}

struct Block {
    res: ResBlock,
    attn: Option<Attention>,
}

struct Level {
    blocks: Vec<Block>,
    /// Stride-2 conv on the way down; `Some` on every level but the deepest.
    down: Option<ConvParams>,
}

pub(super) struct Unet {
    time_dim: usize,
    time1: LinearParams,
    time2: LinearParams,
    conv_in: ConvParams,
    down: Vec<Level>,
    mid: Block,
    /// Deepest level first.
    up: Vec<Vec<Block>>,
    conv_out: ConvParams,
    shape: [usize; 3],
}

fn res_block(layout: &mut ParamLayout, name: &str, cin: usize, cout: usize, time_dim: usize) -> ResBlock {
    ResBlock {
        conv1: layout.conv(&format!("{name}.conv1"), cin, cout, 3, 1),
        temb: layout.linear(&format!("{name}.temb"), time_dim, cout),
        conv2: layout.conv(&format!("{name}.conv2"), cout, cout, 3, 1),
        skip: (cin != cout).then(|| layout.conv(&format!("{name}.skip"), cin, cout, 1, 1)),
    }
}

fn attention(layout: &mut ParamLayout, name: &str, c: usize, heads: usize) -> Attention {
    Attention {
        q: layout.conv(&format!("{name}.q"), c, c, 1, 1),
        k: layout.conv(&format!("{name}.k"), c, c, 1, 1),
        v: layout.conv(&format!("{name}.v"), c, c, 1, 1),
        proj: layout.conv(&format!("{name}.proj"), c, c, 1, 1),
        heads,
    }
}

impl Unet {
    pub(super) fn build(cfg: &UnetConfig, layout: &mut ParamLayout) -> Result<Unet> {
        cfg.validate()?;
        let td = cfg.time_dim;
        let time1 = layout.linear("time.0", td, td);
        let time2 = layout.linear("time.1", td, td);
        let conv_in = layout.conv("conv_in", cfg.channels, cfg.widths[0], 3, 1);
        let n = cfg.widths.len();
        let mut ch = cfg.widths[0];
        let mut down = Vec::with_capacity(n);
        for (l, &w) in cfg.widths.iter().enumerate() {
            let mut blocks = Vec::with_capacity(cfg.res_blocks);
            for b in 0..cfg.res_blocks {
                let name = format!("down.{l}.{b}");
                let res = res_block(layout, &format!("{name}.res"), ch, w, td);
                ch = w;
                let attn = cfg.attends(l).then(|| attention(layout, &format!("{name}.attn"), w, cfg.heads));
                blocks.push(Block { res, attn });
            }
            let ds = (l + 1 < n).then(|| layout.conv(&format!("down.{l}.downsample"), w, w, 3, 2));
            down.push(Level { blocks, down: ds });
        }
        let mid = Block {
            res: res_block(layout, "mid.res", ch, ch, td),
            attn: cfg.attends(n - 1).then(|| attention(layout, "mid.attn", ch, cfg.heads)),
        };
        let mut up = Vec::with_capacity(n);
        for l in (0..n).rev() {
            let w = cfg.widths[l];
            let mut blocks = Vec::with_capacity(cfg.res_blocks);
            for b in 0..cfg.res_blocks {
                let name = format!("up.{l}.{b}");
                let cin = if b == 0 { ch + w } else { w };
                let res = res_block(layout, &format!("{name}.res"), cin, w, td);
                let attn = cfg.attends(l).then(|| attention(layout, &format!("{name}.attn"), w, cfg.heads));
                blocks.push(Block { res, attn });
            }
            ch = w;
            up.push(blocks);
        }
        let conv_out = layout.conv("conv_out", ch, cfg.channels, 3, 1);
        layout.zero_init(conv_out.weight);
        Ok(Unet {
            time_dim: td,
            time1,
            time2,
            conv_in,
            down,
            mid,
            up,
            conv_out,
            shape: [cfg.channels, cfg.height, cfg.width],
        })
    }

    pub(super) fn forward<S: Scalar>(&self, tape: &mut Tape<'_, S>, xt: &[S], t: usize, ctx: &mut Ctx<'_>) -> Result<Var> {
        let x = tape.input(self.shape, xt.to_vec())?;
        let emb = tape.input([self.time_dim, 1, 1], timestep_embedding(t, self.time_dim))?;
        let e = tape.linear(emb, self.time1)?;
        let e = tape.silu(e);
        let e = tape.linear(e, self.time2)?;
        let temb = tape.silu(e);

        let mut h = tape.conv(x, self.conv_in)?;
        let mut skips = Vec::with_capacity(self.down.len());
        for level in &self.down {
            for b in &level.blocks {
                h = block(tape, b, h, temb, ctx)?;
            }
            skips.push(h);
            if let Some(ds) = level.down {
                h = tape.conv(h, ds)?;
            }
        }
        h = block(tape, &self.mid, h, temb, ctx)?;
        let levels = self.up.len();
        for (i, blocks) in self.up.iter().enumerate() {
            let skip = skips.pop().expect("one skip per level");
            h = tape.concat(h, skip)?;
            for b in blocks {
                h = block(tape, b, h, temb, ctx)?;
            }
            if i + 1 < levels {
                h = tape.upsample2(h);
            }
        }
        let h = tape.silu(h);
        tape.conv(h, self.conv_out)
    }
}

fn block<S: Scalar>(tape: &mut Tape<'_, S>, b: &Block, x: Var, temb: Var, ctx: &mut Ctx<'_>) -> Result<Var> {
    let h = res(tape, &b.res, x, temb, ctx)?;
    match &b.attn {
        Some(a) => attend(tape, a, h),
        None => Ok(h),
    }
}

fn res<S: Scalar>(tape: &mut Tape<'_, S>, r: &ResBlock, x: Var, temb: Var, ctx: &mut Ctx<'_>) -> Result<Var> {
    let h = tape.silu(x);
    let h = tape.conv(h, r.conv1)?;
    let tb = tape.linear(temb, r.temb)?;
    let h = tape.add_channel(h, tb)?;
    let h = tape.silu(h);
    let h = ctx.dropout(tape, h)?;
    let h = tape.conv(h, r.conv2)?;
    let skip = match r.skip {
        Some(p) => tape.conv(x, p)?,
        None => x,
    };
    tape.add(h, skip)
}

/// Softmax self-attention over spatial positions with a residual connection.
fn attend<S: Scalar>(tape: &mut Tape<'_, S>, a: &Attention, x: Var) -> Result<Var> {
    let shape = tape.shape(x);
    let c = shape[0];
    let d = c / a.heads;
    let q = tape.conv(x, a.q)?;
    let k = tape.conv(x, a.k)?;
    let v = tape.conv(x, a.v)?;
    let scale = S::one() / S::of_usize(d).sqrt();
    let mut out: Option<Var> = None;
    for h in 0..a.heads {
        let (qh, kh, vh) = if a.heads == 1 {
            (q, k, v)
        } else {
            (
                tape.slice_channels(q, h * d, d)?,
                tape.slice_channels(k, h * d, d)?,
                tape.slice_channels(v, h * d, d)?,
            )
        };
        let scores = tape.matmul_tn(qh, kh)?;
        let scores = tape.scale(scores, scale);
        let weights = tape.softmax_rows(scores);
        let oh = tape.matmul_nt(vh, weights)?;
        out = Some(match out {
            None => oh,
            Some(prev) => tape.concat(prev, oh)?,
        });
    }
    let o = tape.reshape(out.expect("at least one head"), shape)?;
    let o = tape.conv(o, a.proj)?;
    tape.add(o, x)
}
