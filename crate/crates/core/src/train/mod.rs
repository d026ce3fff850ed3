//! Optimization loop, baselines, cross-validation and checkpoints.

mod adam;
mod checkpoint;
mod cv;
mod models;
#[cfg(test)]
mod tests;
mod trainer;

use std::fmt;
use std::str::FromStr;

pub use adam::{adam_step, AdamState, DecayMode};
pub use checkpoint::{
    assign_named, load_checkpoint, predict_checkpoint, save_checkpoint, Checkpoint, RngState,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use cv::{
    ablation_alignment, cross_validate, cross_validate_with, write_ablation_csv, write_cv_csv,
    AblationRow, CvReport,
};
pub use models::{GenomicCox, MeanMil, Objective, SurvivalModel};
pub use trainer::{evaluate, write_log_csv, Evaluation, LogRow, Trainer, LOG_HEADER};

use crate::config::{parse_value, unknown_key, KeyValues};
use crate::error::{Error, Result};
use crate::losses::{AlignmentTerms, CoxReduction, LossWeights};
use crate::model::ModelConfig;

/// Which survival model a run trains.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Method {
    #[default]
    PathoGenX,
    /// Mean-pooled image bag into an MLP.
    MeanMil,
    /// MLP on the genomic vector; needs genomics at test time too.
    GenomicCox,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::PathoGenX => "pathogenx",
            Method::MeanMil => "meanmil",
            Method::GenomicCox => "genomic-cox",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pathogenx" => Ok(Method::PathoGenX),
            "meanmil" => Ok(Method::MeanMil),
            "genomic-cox" => Ok(Method::GenomicCox),
            other => Err(Error::Config(format!(
                "method must be pathogenx, meanmil or genomic-cox, got {other:?}"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub method: Method,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub decay_mode: DecayMode,
    pub epochs: usize,
    /// Clipped to the dataset size.
    pub batch_size: usize,
    pub weights: LossWeights,
    pub alignment: AlignmentTerms,
    pub cox_reduction: CoxReduction,
    /// `d_in` and `d_genomic` are overwritten from the data when training
    /// starts.
    pub model: ModelConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::PathoGenX,
            learning_rate: 0.001,
            weight_decay: 0.1,
            decay_mode: DecayMode::Decoupled,
            epochs: 12,
            batch_size: 128,
            weights: LossWeights::default(),
            alignment: AlignmentTerms::Both,
            cox_reduction: CoxReduction::Sum,
            model: ModelConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight_decay must be nonnegative, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        self.weights.validate()?;
        self.model.validate()
    }
}

impl KeyValues for TrainConfig {
    fn pairs(&self) -> Vec<(&'static str, String)> {
        let m = &self.model;
        vec![
            ("method", self.method.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("decay_mode", self.decay_mode.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lambda1", self.weights.lambda1.to_string()),
            ("lambda2", self.weights.lambda2.to_string()),
            ("alpha", self.weights.alpha.to_string()),
            ("alignment", self.alignment.to_string()),
            ("cox_reduction", self.cox_reduction.to_string()),
            ("d_in", m.d_in.to_string()),
            ("d_genomic", m.d_genomic.to_string()),
            ("d_model", m.d_model.to_string()),
            ("heads", m.heads.to_string()),
            ("head_hidden", m.head_hidden.to_string()),
            ("decoder_depth", m.decoder_depth.to_string()),
            ("risk_input", m.risk_input.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        match key {
            "method" => self.method = value.parse()?,
            "learning_rate" => self.learning_rate = parse_value(key, value)?,
            "weight_decay" => self.weight_decay = parse_value(key, value)?,
            "decay_mode" => self.decay_mode = value.parse()?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "lambda1" => self.weights.lambda1 = parse_value(key, value)?,
            "lambda2" => self.weights.lambda2 = parse_value(key, value)?,
            "alpha" => self.weights.alpha = parse_value(key, value)?,
            "alignment" => self.alignment = value.parse()?,
            "cox_reduction" => self.cox_reduction = value.parse()?,
            "d_in" => m.d_in = parse_value(key, value)?,
            "d_genomic" => m.d_genomic = parse_value(key, value)?,
            "d_model" => m.d_model = parse_value(key, value)?,
            "heads" => m.heads = parse_value(key, value)?,
            "head_hidden" => m.head_hidden = parse_value(key, value)?,
            "decoder_depth" => m.decoder_depth = parse_value(key, value)?,
            "risk_input" => m.risk_input = value.parse()?,
            "seed" => self.seed = parse_value(key, value)?,
            _ => return Err(unknown_key(key)),
        }
        Ok(())
    }
}
