use rand::Rng;

use crate::error::Result;
use crate::numerics::{ParamId, ParamStore, Real, Tape, Tensor, Var};

/// `y = x W + b` with `W: [in, out]`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Uniform init scaled by `1/sqrt(fan_in)`, zero bias.
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, bias: bool, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = store.add(format!("{name}.w"), Tensor::rand_uniform(&[fan_in, fan_out], -bound, bound, rng));
        let b = bias.then(|| store.add(format!("{name}.b"), Tensor::zeros(&[fan_out])));
        Self { w, b, fan_in, fan_out }
    }

    pub fn zeroed(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize) -> Self {
        let w = store.add(format!("{name}.w"), Tensor::zeros(&[fan_in, fan_out]));
        let b = Some(store.add(format!("{name}.b"), Tensor::zeros(&[fan_out])));
        Self { w, b, fan_in, fan_out }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = self.b.map(|b| tape.param(store, b));
        tape.linear(x, w, b)
    }

    pub fn param_count(&self) -> usize {
        self.fan_in * self.fan_out + if self.b.is_some() { self.fan_out } else { 0 }
    }
}

/// Affine layer-norm parameters.
#[derive(Clone, Copy, Debug)]
pub struct Norm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl Norm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Tensor::full(&[dim], 1.0)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[dim])),
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gain);
        let b = tape.param(store, self.bias);
        tape.layer_norm(x, Some(g), Some(b), LN_EPS)
    }
}

pub const LN_EPS: f64 = 1e-6;
