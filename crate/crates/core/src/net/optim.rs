use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Adam with decoupled weight decay:
/// p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p).
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<S> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<S>,
    v: Vec<S>,
}

impl<S: Scalar> AdamW<S> {
    pub fn new(len: usize) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![S::zero(); len],
            v: vec![S::zero(); len],
        }
    }

    /// Restores saved moments.
    pub fn from_parts(step: u64, m: Vec<S>, v: Vec<S>) -> Result<Self> {
        if m.len() != v.len() {
            return Err(Error::ShapeMismatch {
                expected: m.len().to_string(),
                actual: v.len().to_string(),
            });
        }
        Ok(AdamW {
            step,
            m,
            v,
            ..AdamW::new(0)
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[S], &[S]) {
        (&self.m, &self.v)
    }

    /// Applies one update. If any new moment or parameter would be
    /// non-finite, nothing is changed and an error is returned.
    pub fn step(&mut self, params: &mut [S], grads: &[S], lr: f64, weight_decay: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} parameters", self.m.len()),
                actual: format!("{} params / {} grads", params.len(), grads.len()),
            });
        }
        let t = self.step + 1;
        let (b1, b2) = (S::lit(self.beta1), S::lit(self.beta2));
        let c1 = S::lit(1.0 - self.beta1.powi(t as i32));
        let c2 = S::lit(1.0 - self.beta2.powi(t as i32));
        let (lr, wd, eps) = (S::lit(lr), S::lit(weight_decay), S::lit(self.eps));
        let mut m = Vec::with_capacity(params.len());
        let mut v = Vec::with_capacity(params.len());
        let mut p = Vec::with_capacity(params.len());
        for i in 0..params.len() {
            let g = grads[i];
            let mi = b1 * self.m[i] + (S::one() - b1) * g;
            let vi = b2 * self.v[i] + (S::one() - b2) * g * g;
            let upd = (mi / c1) / ((vi / c2).sqrt() + eps) + wd * params[i];
            let pi = params[i] - lr * upd;
            if !pi.is_finite() || !mi.is_finite() || !vi.is_finite() {
                return Err(Error::NonFinite(format!("optimizer update at parameter {i}")));
            }
            m.push(mi);
            v.push(vi);
            p.push(pi);
        }
        params.copy_from_slice(&p);
        self.m = m;
        self.v = v;
        self.step = t;
        Ok(())
    }
}
