//! Positional patch embedding generation.
//!
//! Patch tokens are laid out on the smallest square grid that holds them
//! (padding by cycling tokens from the start of the sequence), mixed by
//! three depthwise convolutions plus an identity path, and read back in
//! row-major order. The class token bypasses the convolutions.

use rand::Rng;

use super::layers::normal_init;
use super::params::{join, ParamTree};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

pub const PPEG_KERNEL_SIZES: [usize; 3] = [7, 5, 3];

#[derive(Clone, Debug, PartialEq)]
pub struct Ppeg<T = Tensor> {
    /// One `[D × k × k]` depthwise kernel per entry of [`PPEG_KERNEL_SIZES`].
    pub kernels: Vec<T>,
}

impl Ppeg {
    pub fn init(rng: &mut impl Rng, dim: usize) -> Self {
        Self {
            kernels: PPEG_KERNEL_SIZES
                .iter()
                .map(|&k| normal_init(rng, 0.02, &[dim, k, k]))
                .collect(),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            kernels: PPEG_KERNEL_SIZES
                .iter()
                .map(|&k| Tensor::zeros(&[dim, k, k]))
                .collect(),
        }
    }
}

impl<T> ParamTree for Ppeg<T> {
    type Elem = T;
    type Mapped<U> = Ppeg<U>;

    fn map<U>(&self, f: &mut dyn FnMut(&T) -> U) -> Ppeg<U> {
        Ppeg {
            kernels: self.kernels.iter().map(f).collect(),
        }
    }

    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T)) {
        for (t, k) in self.kernels.iter().zip(PPEG_KERNEL_SIZES) {
            f(join(prefix, &format!("conv{k}")), t);
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut T)) {
        for (t, k) in self.kernels.iter_mut().zip(PPEG_KERNEL_SIZES) {
            f(join(prefix, &format!("conv{k}")), t);
        }
    }
}

/// Side of the square grid for `n` patch tokens: ⌈√n⌉.
pub fn grid_side(n: usize) -> usize {
    let mut s = (n as f64).sqrt() as usize;
    while s * s < n {
        s += 1;
    }
    while s > 0 && (s - 1) * (s - 1) >= n {
        s -= 1;
    }
    s
}

/// `tokens` is `[(N+1) × D]` with the class token in row 0.
pub fn ppeg_forward(tape: &mut Tape, p: &Ppeg<Var>, tokens: Var) -> Result<Var> {
    let rows = tape.shape(tokens)[0];
    if rows < 2 {
        return Err(Error::EmptyBag);
    }
    let n = rows - 1;
    let cls = tape.slice_rows(tokens, 0, 1)?;
    let patches = tape.slice_rows(tokens, 1, rows)?;
    let side = grid_side(n);
    let grid = tape.pad_rows_cyclic(patches, side * side)?;
    let mut mixed = grid;
    for &kernel in &p.kernels {
        let conv = tape.depthwise_conv2d(grid, kernel, side)?;
        mixed = tape.add(mixed, conv)?;
    }
    let kept = tape.slice_rows(mixed, 0, n)?;
    tape.concat_rows(&[cls, kept])
}
