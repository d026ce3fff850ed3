use rand::Rng;

use super::layers::{layer_norm_forward, linear_forward, xavier_uniform, LayerNorm, Linear};
use super::params::{join, ParamTree};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Multi-head self-attention: per-head query/key/value projections
/// (`[D × D/h]` each, no bias) and a shared output projection.
#[derive(Clone, Debug, PartialEq)]
pub struct Msa<T = Tensor> {
    pub query: Vec<T>,
    pub key: Vec<T>,
    pub value: Vec<T>,
    pub output: Linear<T>,
}

impl Msa {
    pub fn init(rng: &mut impl Rng, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!(
                "attention heads ({heads}) must divide the embedding dimension ({dim})"
            )));
        }
        let head_dim = dim / heads;
        let proj = |rng: &mut _| -> Vec<Tensor> {
            (0..heads)
                .map(|_| xavier_uniform(rng, dim, head_dim, &[dim, head_dim]))
                .collect()
        };
        let query = proj(rng);
        let key = proj(rng);
        let value = proj(rng);
        Ok(Self {
            query,
            key,
            value,
            output: Linear::init(rng, dim, dim),
        })
    }
}

impl<T> Msa<T> {
    pub fn heads(&self) -> usize {
        self.query.len()
    }
}

impl<T> ParamTree for Msa<T> {
    type Elem = T;
    type Mapped<U> = Msa<U>;

    fn map<U>(&self, f: &mut dyn FnMut(&T) -> U) -> Msa<U> {
        Msa {
            query: self.query.iter().map(&mut *f).collect(),
            key: self.key.iter().map(&mut *f).collect(),
            value: self.value.iter().map(&mut *f).collect(),
            output: self.output.map(f),
        }
    }

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T)) {
        for (name, list) in [
            ("query", &self.query),
            ("key", &self.key),
            ("value", &self.value),
        ] {
            for (h, t) in list.iter().enumerate() {
                f(join(prefix, &format!("{name}.{h}")), t);
            }
        }
        self.output.visit(&join(prefix, "output"), f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut T)) {
        for (name, list) in [
            ("query", &mut self.query),
            ("key", &mut self.key),
            ("value", &mut self.value),
        ] {
            for (h, t) in list.iter_mut().enumerate() {
                f(join(prefix, &format!("{name}.{h}")), t);
            }
        }
        self.output.visit_mut(&join(prefix, "output"), f);
    }
}

/// `softmax(QKᵀ/√(D/h))·V` per head, heads concatenated, then projected.
pub fn msa_forward(tape: &mut Tape, p: &Msa<Var>, x: Var) -> Result<Var> {
    let dim = tape.shape(p.output.weight)[0];
    match tape.shape(x) {
        [m, d] if *m >= 1 && *d == dim => {}
        other => {
            return Err(Error::Shape {
                op: "msa",
                lhs: other.to_vec(),
                rhs: vec![dim, dim],
            })
        }
    }
    let head_dim = tape.shape(p.query[0])[1];
    let scale = 1.0 / (head_dim as f64).sqrt();
    let mut heads = Vec::with_capacity(p.heads());
    for h in 0..p.heads() {
        let q = tape.matmul(x, p.query[h])?;
        let k = tape.matmul(x, p.key[h])?;
        let v = tape.matmul(x, p.value[h])?;
        let kt = tape.transpose(k)?;
        let scores = tape.matmul(q, kt)?;
        let scores = tape.mul_scalar(scores, scale);
        let attn = tape.softmax(scores, 1)?;
        heads.push(tape.matmul(attn, v)?);
    }
    let joined = if heads.len() == 1 {
        heads[0]
    } else {
        tape.concat_cols(&heads)?
    };
    linear_forward(tape, &p.output, joined)
}

/// Residual attention block `LN(MSA(x)) + x`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionBlock<T = Tensor> {
    pub msa: Msa<T>,
    pub norm: LayerNorm<T>,
}

impl AttentionBlock {
    pub fn init(rng: &mut impl Rng, dim: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            msa: Msa::init(rng, dim, heads)?,
            norm: LayerNorm::init(dim),
        })
    }
}

impl<T> ParamTree for AttentionBlock<T> {
    type Elem = T;
    type Mapped<U> = AttentionBlock<U>;

    fn map<U>(&self, f: &mut dyn FnMut(&T) -> U) -> AttentionBlock<U> {
        AttentionBlock {
            msa: self.msa.map(f),
            norm: self.norm.map(f),
        }
    }

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T)) {
        self.msa.visit(&join(prefix, "msa"), f);
        self.norm.visit(&join(prefix, "norm"), f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut T)) {
        self.msa.visit_mut(&join(prefix, "msa"), f);
        self.norm.visit_mut(&join(prefix, "norm"), f);
    }
}

pub fn attention_block_forward(tape: &mut Tape, p: &AttentionBlock<Var>, x: Var) -> Result<Var> {
    let attended = msa_forward(tape, &p.msa, x)?;
    let normed = layer_norm_forward(tape, &p.norm, attended)?;
    tape.add(normed, x)
}
