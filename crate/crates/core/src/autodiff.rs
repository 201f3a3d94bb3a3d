//! Tape-based reverse-mode differentiation over small dense tensors.
//!
//! A tape records one forward evaluation of a network for a single sample.
//! Weights are read in place from a borrowed flat parameter slice and their
//! gradients accumulate into a flat vector with the same layout.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Tensor shape (channels, height, width). Vectors use (n, 1, 1); the 2-D
/// view used by matrix products is (shape[0], shape[1] * shape[2]).
pub type Shape = [usize; 3];

fn numel(s: Shape) -> usize {
    s[0] * s[1] * s[2]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Location of a convolution's weights inside the parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvParams {
    pub weight: usize,
    pub bias: usize,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvParams {
    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.kernel * self.kernel
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearParams {
    pub weight: usize,
    pub bias: usize,
    pub din: usize,
    pub dout: usize,
}

enum Op<S> {
    Input,
    Add(usize, usize),
    AddChannel(usize, usize),
    Conv(usize, ConvParams),
    Linear(usize, LinearParams),
    Silu(usize),
    Upsample2(usize),
    Concat(usize, usize),
    SliceChannels(usize, usize),
    Dropout(usize, Vec<S>),
    MatMulTN(usize, usize),
    MatMulNT(usize, usize),
    SoftmaxRows(usize),
    Scale(usize, S),
    Reshape(usize),
    Mse(usize, Vec<S>),
}

struct Node<S> {
    shape: Shape,
    value: Vec<S>,
    op: Op<S>,
}

pub struct Tape<'p, S> {
    params: &'p [S],
    nodes: Vec<Node<S>>,
}

impl<'p, S: Scalar> Tape<'p, S> {
    pub fn new(params: &'p [S]) -> Self {
        Tape {
            params,
            nodes: Vec::with_capacity(64),
        }
    }

    fn push(&mut self, shape: Shape, value: Vec<S>, op: Op<S>) -> Var {
        debug_assert_eq!(numel(shape), value.len());
        self.nodes.push(Node { shape, value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[S] {
        &self.nodes[v.0].value
    }

    pub fn input(&mut self, shape: Shape, value: Vec<S>) -> Result<Var> {
        if numel(shape) != value.len() {
            return Err(mismatch(numel(shape), value.len()));
        }
        Ok(self.push(shape, value, Op::Input))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if numel(sa) != numel(sb) {
            return Err(mismatch(numel(sa), numel(sb)));
        }
        let v = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        Ok(self.push(sa, v, Op::Add(a.0, b.0)))
    }

    /// Adds `v[c]` to every element of channel `c` of `x`.
    pub fn add_channel(&mut self, x: Var, v: Var) -> Result<Var> {
        let s = self.shape(x);
        if numel(self.shape(v)) != s[0] {
            return Err(mismatch(s[0], numel(self.shape(v))));
        }
        let plane = s[1] * s[2];
        let bias = self.value(v);
        let out = self
            .value(x)
            .iter()
            .enumerate()
            .map(|(i, &e)| e + bias[i / plane])
            .collect();
        Ok(self.push(s, out, Op::AddChannel(x.0, v.0)))
    }

    /// Zero-padded convolution with a square kernel (padding kernel/2).
    pub fn conv(&mut self, x: Var, p: ConvParams) -> Result<Var> {
        let s = self.shape(x);
        if s[0] != p.cin {
            return Err(mismatch(p.cin, s[0]));
        }
        let (out, shape) = conv_forward(self.value(x), s, self.params, &p);
        Ok(self.push(shape, out, Op::Conv(x.0, p)))
    }

    pub fn linear(&mut self, x: Var, p: LinearParams) -> Result<Var> {
        let s = self.shape(x);
        if numel(s) != p.din {
            return Err(mismatch(p.din, numel(s)));
        }
        let xv = self.value(x);
        let w = &self.params[p.weight..p.weight + p.din * p.dout];
        let b = &self.params[p.bias..p.bias + p.dout];
        let out = (0..p.dout)
            .map(|o| {
                let row = &w[o * p.din..(o + 1) * p.din];
                b[o] + row.iter().zip(xv).map(|(&a, &c)| a * c).sum::<S>()
            })
            .collect();
        Ok(self.push([p.dout, 1, 1], out, Op::Linear(x.0, p)))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| v * sigmoid(v)).collect();
        self.push(self.shape(x), out, Op::Silu(x.0))
    }

    /// Nearest-neighbor 2x spatial upsampling.
    pub fn upsample2(&mut self, x: Var) -> Var {
        let [c, h, w] = self.shape(x);
        let xv = self.value(x);
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = vec![S::zero(); c * oh * ow];
        for ch in 0..c {
            for y in 0..oh {
                for xx in 0..ow {
                    out[(ch * oh + y) * ow + xx] = xv[(ch * h + y / 2) * w + xx / 2];
                }
            }
        }
        self.push([c, oh, ow], out, Op::Upsample2(x.0))
    }

    /// Channel concatenation.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa[1..] != sb[1..] {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?}", &sa[1..]),
                actual: format!("{:?}", &sb[1..]),
            });
        }
        let mut out = self.value(a).to_vec();
        out.extend_from_slice(self.value(b));
        Ok(self.push([sa[0] + sb[0], sa[1], sa[2]], out, Op::Concat(a.0, b.0)))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x);
        if start + len > s[0] || len == 0 {
            return Err(Error::arg(format!("channel slice {start}+{len} of {}", s[0])));
        }
        let plane = s[1] * s[2];
        let out = self.value(x)[start * plane..(start + len) * plane].to_vec();
        Ok(self.push([len, s[1], s[2]], out, Op::SliceChannels(x.0, start)))
    }

    /// Multiplies by a fixed mask (already scaled by 1/keep).
    pub fn dropout(&mut self, x: Var, mask: Vec<S>) -> Result<Var> {
        if mask.len() != self.value(x).len() {
            return Err(mismatch(self.value(x).len(), mask.len()));
        }
        let out = self.value(x).iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        Ok(self.push(self.shape(x), out, Op::Dropout(x.0, mask)))
    }

    /// aᵀ b for a: [k, m], b: [k, n] giving [m, n].
    pub fn matmul_tn(&mut self, a: Var, b: Var) -> Result<Var> {
        let (k, m) = view2(self.shape(a));
        let (kb, n) = view2(self.shape(b));
        if k != kb {
            return Err(mismatch(k, kb));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![S::zero(); m * n];
        for kk in 0..k {
            let arow = &av[kk * m..(kk + 1) * m];
            let brow = &bv[kk * n..(kk + 1) * n];
            for (i, &x) in arow.iter().enumerate() {
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, &y) in orow.iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
        }
        Ok(self.push([m, n, 1], out, Op::MatMulTN(a.0, b.0)))
    }

    /// a bᵀ for a: [m, k], b: [n, k] giving [m, n].
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = view2(self.shape(a));
        let (n, kb) = view2(self.shape(b));
        if k != kb {
            return Err(mismatch(k, kb));
        }
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![S::zero(); m * n];
        for i in 0..m {
            let arow = &av[i * k..(i + 1) * k];
            for j in 0..n {
                let brow = &bv[j * k..(j + 1) * k];
                out[i * n + j] = arow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
            }
        }
        Ok(self.push([m, n, 1], out, Op::MatMulNT(a.0, b.0)))
    }

    /// Softmax along each row of the 2-D view.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let (r, c) = view2(s);
        let mut out = self.value(x).to_vec();
        for row in out.chunks_mut(c).take(r) {
            let max = row.iter().fold(S::neg_infinity(), |m, &v| m.max(v));
            let mut sum = S::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        self.push(s, out, Op::SoftmaxRows(x.0))
    }

    pub fn scale(&mut self, x: Var, k: S) -> Var {
        let out = self.value(x).iter().map(|&v| v * k).collect();
        self.push(self.shape(x), out, Op::Scale(x.0, k))
    }

    pub fn reshape(&mut self, x: Var, shape: Shape) -> Result<Var> {
        if numel(shape) != numel(self.shape(x)) {
            return Err(mismatch(numel(self.shape(x)), numel(shape)));
        }
        let out = self.value(x).to_vec();
        Ok(self.push(shape, out, Op::Reshape(x.0)))
    }

    /// Mean squared error against a constant target; a scalar node.
    pub fn mse(&mut self, x: Var, target: Vec<S>) -> Result<Var> {
        if target.len() != self.value(x).len() {
            return Err(mismatch(self.value(x).len(), target.len()));
        }
        let n = S::of_usize(target.len());
        let loss = self
            .value(x)
            .iter()
            .zip(&target)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<S>()
            / n;
        Ok(self.push([1, 1, 1], vec![loss], Op::Mse(x.0, target)))
    }

    /// Back-propagates from the scalar node `root` and returns the gradient
    /// with respect to the parameter slice.
    pub fn backward(&self, root: Var) -> Vec<S> {
        let mut pgrad = vec![S::zero(); self.params.len()];
        let mut grads: Vec<Option<Vec<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![S::one(); self.nodes[root.0].value.len()]);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, &g);
                    accumulate(&mut grads, *b, &g);
                }
                Op::AddChannel(x, v) => {
                    let plane = node.shape[1] * node.shape[2];
                    let gv: Vec<S> = g.chunks(plane).map(|c| c.iter().copied().sum()).collect();
                    accumulate(&mut grads, *v, &gv);
                    accumulate(&mut grads, *x, &g);
                }
                Op::Conv(x, p) => {
                    let xn = &self.nodes[*x];
                    let gx = conv_backward(&xn.value, xn.shape, self.params, p, &g, node.shape, &mut pgrad);
                    accumulate(&mut grads, *x, &gx);
                }
                Op::Linear(x, p) => {
                    let xv = &self.nodes[*x].value;
                    let w = &self.params[p.weight..p.weight + p.din * p.dout];
                    let mut gx = vec![S::zero(); p.din];
                    for o in 0..p.dout {
                        let go = g[o];
                        pgrad[p.bias + o] += go;
                        let row = &w[o * p.din..(o + 1) * p.din];
                        let grow = &mut pgrad[p.weight + o * p.din..p.weight + (o + 1) * p.din];
                        for j in 0..p.din {
                            grow[j] += go * xv[j];
                            gx[j] += go * row[j];
                        }
                    }
                    accumulate(&mut grads, *x, &gx);
                }
                Op::Silu(x) => {
                    let xv = &self.nodes[*x].value;
                    let gx: Vec<S> = xv
                        .iter()
                        .zip(&g)
                        .map(|(&v, &gg)| {
                            let s = sigmoid(v);
                            gg * s * (S::one() + v * (S::one() - s))
                        })
                        .collect();
                    accumulate(&mut grads, *x, &gx);
                }
                Op::Upsample2(x) => {
                    let [c, h, w] = self.nodes[*x].shape;
                    let (oh, ow) = (2 * h, 2 * w);
                    let mut gx = vec![S::zero(); c * h * w];
                    for ch in 0..c {
                        for y in 0..oh {
                            for xx in 0..ow {
                                gx[(ch * h + y / 2) * w + xx / 2] += g[(ch * oh + y) * ow + xx];
                            }
                        }
                    }
                    accumulate(&mut grads, *x, &gx);
                }
                Op::Concat(a, b) => {
                    let na = self.nodes[*a].value.len();
                    accumulate(&mut grads, *a, &g[..na]);
                    accumulate(&mut grads, *b, &g[na..]);
                }
                Op::SliceChannels(x, start) => {
                    let xs = self.nodes[*x].shape;
                    let plane = xs[1] * xs[2];
                    let mut gx = vec![S::zero(); numel(xs)];
                    gx[start * plane..start * plane + g.len()].copy_from_slice(&g);
                    accumulate(&mut grads, *x, &gx);
                }
                Op::Dropout(x, mask) => {
                    let gx: Vec<S> = g.iter().zip(mask).map(|(&a, &m)| a * m).collect();
                    accumulate(&mut grads, *x, &gx);
                }
                Op::MatMulTN(a, b) => {
                    let (k, m) = view2(self.nodes[*a].shape);
                    let (_, n) = view2(self.nodes[*b].shape);
                    let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let mut ga = vec![S::zero(); k * m];
                    let mut gb = vec![S::zero(); k * n];
                    for kk in 0..k {
                        for i in 0..m {
                            let grow = &g[i * n..(i + 1) * n];
                            let brow = &bv[kk * n..(kk + 1) * n];
                            ga[kk * m + i] = grow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
                            let aki = av[kk * m + i];
                            for (o, &gg) in gb[kk * n..(kk + 1) * n].iter_mut().zip(grow) {
                                *o += aki * gg;
                            }
                        }
                    }
                    accumulate(&mut grads, *a, &ga);
                    accumulate(&mut grads, *b, &gb);
                }
                Op::MatMulNT(a, b) => {
                    let (m, k) = view2(self.nodes[*a].shape);
                    let (n, _) = view2(self.nodes[*b].shape);
                    let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    let mut ga = vec![S::zero(); m * k];
                    let mut gb = vec![S::zero(); n * k];
                    for i in 0..m {
                        for j in 0..n {
                            let gij = g[i * n + j];
                            let arow = &av[i * k..(i + 1) * k];
                            let brow = &bv[j * k..(j + 1) * k];
                            for kk in 0..k {
                                ga[i * k + kk] += gij * brow[kk];
                                gb[j * k + kk] += gij * arow[kk];
                            }
                        }
                    }
                    accumulate(&mut grads, *a, &ga);
                    accumulate(&mut grads, *b, &gb);
                }
                Op::SoftmaxRows(x) => {
                    let (_, c) = view2(node.shape);
                    let y = &node.value;
                    let mut gx = vec![S::zero(); y.len()];
                    for ((yr, gr), out) in y.chunks(c).zip(g.chunks(c)).zip(gx.chunks_mut(c)) {
                        let dot: S = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for ((o, &yy), &gg) in out.iter_mut().zip(yr).zip(gr) {
                            *o = yy * (gg - dot);
                        }
                    }
                    accumulate(&mut grads, *x, &gx);
                }
                Op::Scale(x, k) => {
                    let gx: Vec<S> = g.iter().map(|&v| v * *k).collect();
                    accumulate(&mut grads, *x, &gx);
                }
                Op::Reshape(x) => accumulate(&mut grads, *x, &g),
                Op::Mse(x, target) => {
                    let xv = &self.nodes[*x].value;
                    let k = S::lit(2.0) * g[0] / S::of_usize(target.len());
                    let gx: Vec<S> = xv.iter().zip(target).map(|(&a, &b)| k * (a - b)).collect();
                    accumulate(&mut grads, *x, &gx);
                }
            }
        }
        pgrad
    }
}

fn accumulate<S: Scalar>(grads: &mut [Option<Vec<S>>], idx: usize, g: &[S]) {
    match &mut grads[idx] {
        Some(acc) => {
            for (a, &b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g.to_vec()),
    }
}

fn mismatch(expected: usize, actual: usize) -> Error {
    Error::ShapeMismatch {
        expected: format!("{expected} elements"),
        actual: format!("{actual} elements"),
    }
}

fn view2(s: Shape) -> (usize, usize) {
    (s[0], s[1] * s[2])
}

#[inline]
fn sigmoid<S: Scalar>(v: S) -> S {
    S::one() / (S::one() + (-v).exp())
}

/// Output index range `[lo, hi)` along one axis whose input tap `o*stride + k - pad`
/// lands inside `0..len`.
#[inline]
fn valid_range(len: usize, out_len: usize, k: usize, pad: usize, stride: usize) -> (usize, usize) {
    // o*stride + k >= pad  and  o*stride + k - pad < len
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    let hi_excl = if len + pad > k {
        ((len + pad - k - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo.min(hi_excl), hi_excl)
}

fn conv_out_dim(len: usize, k: usize, stride: usize) -> usize {
    let pad = k / 2;
    (len + 2 * pad - k) / stride + 1
}

fn conv_forward<S: Scalar>(x: &[S], s: Shape, params: &[S], p: &ConvParams) -> (Vec<S>, Shape) {
    let [cin, h, w] = s;
    let (k, st) = (p.kernel, p.stride);
    let pad = k / 2;
    let (oh, ow) = (conv_out_dim(h, k, st), conv_out_dim(w, k, st));
    let weight = &params[p.weight..p.weight + p.weight_len()];
    let bias = &params[p.bias..p.bias + p.cout];
    let mut out = vec![S::zero(); p.cout * oh * ow];
    for co in 0..p.cout {
        let oplane = &mut out[co * oh * ow..(co + 1) * oh * ow];
        oplane.iter_mut().for_each(|v| *v = bias[co]);
        for ci in 0..cin {
            let iplane = &x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                let (y0, y1) = valid_range(h, oh, ky, pad, st);
                for kx in 0..k {
                    let wv = weight[((co * cin + ci) * k + ky) * k + kx];
                    let (x0, x1) = valid_range(w, ow, kx, pad, st);
                    if x0 >= x1 {
                        continue;
                    }
                    for oy in y0..y1 {
                        let iy = oy * st + ky - pad;
                        let orow = &mut oplane[oy * ow + x0..oy * ow + x1];
                        if st == 1 {
                            let start = iy * w + x0 + kx - pad;
                            let irow = &iplane[start..start + (x1 - x0)];
                            for (o, &i) in orow.iter_mut().zip(irow) {
                                *o += wv * i;
                            }
                        } else {
                            for (j, o) in orow.iter_mut().enumerate() {
                                let ix = (x0 + j) * st + kx - pad;
                                *o += wv * iplane[iy * w + ix];
                            }
                        }
                    }
                }
            }
        }
    }
    (out, [p.cout, oh, ow])
}

fn conv_backward<S: Scalar>(
    x: &[S],
    s: Shape,
    params: &[S],
    p: &ConvParams,
    g: &[S],
    os: Shape,
    pgrad: &mut [S],
) -> Vec<S> {
    let [cin, h, w] = s;
    let [_, oh, ow] = os;
    let (k, st) = (p.kernel, p.stride);
    let pad = k / 2;
    let weight = &params[p.weight..p.weight + p.weight_len()];
    let mut gx = vec![S::zero(); x.len()];
    for co in 0..p.cout {
        let gplane = &g[co * oh * ow..(co + 1) * oh * ow];
        pgrad[p.bias + co] += gplane.iter().copied().sum::<S>();
        for ci in 0..cin {
            let iplane = &x[ci * h * w..(ci + 1) * h * w];
            let gxplane = &mut gx[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                let (y0, y1) = valid_range(h, oh, ky, pad, st);
                for kx in 0..k {
                    let widx = ((co * cin + ci) * k + ky) * k + kx;
                    let wv = weight[widx];
                    let (x0, x1) = valid_range(w, ow, kx, pad, st);
                    if x0 >= x1 {
                        continue;
                    }
                    let mut gw = S::zero();
                    for oy in y0..y1 {
                        let iy = oy * st + ky - pad;
                        let grow = &gplane[oy * ow + x0..oy * ow + x1];
                        if st == 1 {
                            let start = iy * w + x0 + kx - pad;
                            let irow = &iplane[start..start + (x1 - x0)];
                            gw += grow.iter().zip(irow).map(|(&a, &b)| a * b).sum::<S>();
                            for (o, &gg) in gxplane[start..start + (x1 - x0)].iter_mut().zip(grow) {
                                *o += wv * gg;
                            }
                        } else {
                            for (j, &gg) in grow.iter().enumerate() {
                                let ix = (x0 + j) * st + kx - pad;
                                gw += gg * iplane[iy * w + ix];
                                gxplane[iy * w + ix] += wv * gg;
                            }
                        }
                    }
                    pgrad[p.weight + widx] += gw;
                }
            }
        }
    }
    gx
}
