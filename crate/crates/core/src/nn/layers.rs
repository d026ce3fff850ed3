use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::params::{join, ParamTree};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Fan-balanced uniform init: U(±√(6/(fan_in+fan_out))).
pub fn xavier_uniform(
    rng: &mut impl Rng,
    fan_in: usize,
    fan_out: usize,
    shape: &[usize],
) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let n = shape.iter().product();
    Tensor::from_parts(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect())
}

pub fn normal_init(rng: &mut impl Rng, std: f64, shape: &[usize]) -> Tensor {
    let dist = Normal::new(0.0, std).expect("non-negative std");
    let n = shape.iter().product();
    Tensor::from_parts(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect())
}

/// Affine map `x·W + b` with `W: [in × out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T = Tensor> {
    pub weight: T,
    pub bias: T,
}

impl Linear {
    pub fn init(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: xavier_uniform(rng, fan_in, fan_out, &[fan_in, fan_out]),
            bias: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[fan_in, fan_out]),
            bias: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }
}

impl<T> ParamTree for Linear<T> {
    type Elem = T;
    type Mapped<U> = Linear<U>;

    fn map<U>(&self, f: &mut dyn FnMut(&T) -> U) -> Linear<U> {
        Linear {
            weight: f(&self.weight),
            bias: f(&self.bias),
        }
    }

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut T)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

pub fn linear_forward(tape: &mut Tape, p: &Linear<Var>, x: Var) -> Result<Var> {
    let xw = tape.matmul(x, p.weight)?;
    tape.add(xw, p.bias)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm<T = Tensor> {
    pub gain: T,
    pub offset: T,
    pub eps: f64,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn init(dim: usize) -> Self {
        Self {
            gain: Tensor::full(&[dim], 1.0),
            offset: Tensor::zeros(&[dim]),
            eps: LAYER_NORM_EPS,
        }
    }
}

impl<T> ParamTree for LayerNorm<T> {
    type Elem = T;
    type Mapped<U> = LayerNorm<U>;

    fn map<U>(&self, f: &mut dyn FnMut(&T) -> U) -> LayerNorm<U> {
        LayerNorm {
            gain: f(&self.gain),
            offset: f(&self.offset),
            eps: self.eps,
        }
    }

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T)) {
        f(join(prefix, "gain"), &self.gain);
        f(join(prefix, "offset"), &self.offset);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut T)) {
        f(join(prefix, "gain"), &mut self.gain);
        f(join(prefix, "offset"), &mut self.offset);
    }
}

pub fn layer_norm_forward(tape: &mut Tape, p: &LayerNorm<Var>, x: Var) -> Result<Var> {
    let d = tape.shape(p.gain)[0];
    match tape.shape(x) {
        [_, cols] if *cols == d => {}
        other => {
            return Err(Error::Shape {
                op: "layer_norm",
                lhs: other.to_vec(),
                rhs: vec![d],
            })
        }
    }
    let z = tape.normalize_rows(x, p.eps)?;
    let scaled = tape.mul(z, p.gain)?;
    tape.add(scaled, p.offset)
}

/// Stack of linear layers with ReLU between them and none after the last.
pub type Mlp<T = Tensor> = Vec<Linear<T>>;

pub fn mlp_init(rng: &mut impl Rng, widths: &[usize]) -> Mlp {
    widths
        .windows(2)
        .map(|w| Linear::init(rng, w[0], w[1]))
        .collect()
}

pub fn mlp_forward(tape: &mut Tape, layers: &[Linear<Var>], x: Var) -> Result<Var> {
    let mut h = x;
    for (i, layer) in layers.iter().enumerate() {
        if i > 0 {
            h = tape.relu(h);
        }
        h = linear_forward(tape, layer, h)?;
    }
    Ok(h)
}
