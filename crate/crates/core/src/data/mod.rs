//! Patient records, feature files, manifests, fold splitting and the
//! synthetic cohort generator.

mod files;
mod manifest;
mod synth;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use files::{
    decode_features, encode_features, load_bag, load_genomic, save_bag, save_genomic, BAG_MAGIC,
    FORMAT_VERSION, GENOMIC_MAGIC,
};
pub use manifest::{
    load_manifest, load_manifest_images, read_manifest, save_dataset, ManifestEntry,
    MANIFEST_HEADER,
};
pub use synth::{generate_synthetic, generate_with_truth, SynthConfig, Truth};

use crate::error::{Error, Result};
use crate::survival::Outcome;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct PatientRecord {
    pub id: String,
    pub outcome: Outcome,
    /// `[N × D_in]` patch features.
    pub bag: Tensor,
    /// `[D_g]` expression vector; required for training only.
    pub genomic: Option<Tensor>,
}

pub fn outcomes(records: &[PatientRecord]) -> Vec<Outcome> {
    records.iter().map(|r| r.outcome).collect()
}

/// Copies of `records` with every genomic vector removed.
pub fn without_genomic(records: &[PatientRecord]) -> Vec<PatientRecord> {
    records
        .iter()
        .map(|r| PatientRecord {
            genomic: None,
            ..r.clone()
        })
        .collect()
}

/// Seeded k-fold assignment of record indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldSplit {
    pub k: usize,
    pub seed: u64,
    /// Fold of each record, by index.
    pub assignment: Vec<usize>,
}

impl FoldSplit {
    /// Indices held out in `fold`, ascending.
    pub fn validation(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] == fold)
            .collect()
    }

    /// Indices trained on when `fold` is held out, ascending.
    pub fn training(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&i| self.assignment[i] != fold)
            .collect()
    }
}

/// Shuffles `n` indices with `seed`, then deals them round-robin into `k`
/// folds.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<FoldSplit> {
    if k < 2 {
        return Err(Error::Config(format!("k must be at least 2, got {k}")));
    }
    if n < k {
        return Err(Error::TooFewPatients { have: n, need: k });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        assignment[i] = pos % k;
    }
    Ok(FoldSplit {
        k,
        seed,
        assignment,
    })
}
