//! Cross-modal genomic feature translation and alignment for survival
//! prediction from whole-slide image bags.
//!
//! A transformer encoder turns a bag of patch features into a class-token
//! embedding; during training that embedding is aligned with a learned
//! projection of the patient's gene-expression vector, and a decoder learns
//! to translate it into the genomic latent space. At test time only the
//! image bag is needed: the risk head reads the translated embedding.
//!
//! Everything computes through the [`tensor`] module's reverse-mode tape.

pub mod config;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod losses;
pub mod model;
pub mod nn;
pub mod survival;
pub mod tensor;
pub mod train;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};
