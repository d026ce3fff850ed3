//! Synthetic paired cohorts with a strong genomic and a weak imaging view of
//! one latent state.
//!
//! Per patient a latent `z ~ N(0, I_k)` drives the hazard
//! `λ₀·exp(β·w·z)`. The genomic vector is `softplus(A·z + ε_g)`; a minority
//! of patches in the bag are `B·z + ε_p` and the rest are pure noise, with
//! `σ_p > σ_g`. All feature values are rounded to `f32` so a dataset
//! survives a trip through the feature files unchanged.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, StandardNormal};

use super::PatientRecord;
use crate::config::{parse_value, unknown_key, KeyValues};
use crate::error::{Error, Result};
use crate::survival::Outcome;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_patients: usize,
    /// Latent dimension k.
    pub latent_dim: usize,
    pub genomic_dim: usize,
    pub feature_dim: usize,
    pub min_patches: usize,
    pub max_patches: usize,
    /// Fraction ρ of patches carrying signal.
    pub informative_fraction: f64,
    pub genomic_noise: f64,
    pub image_noise: f64,
    /// Standard deviation of each entry of `B·z` in an informative patch.
    pub image_signal: f64,
    /// β
    pub hazard_coef: f64,
    pub censoring: f64,
    /// Median survival in days of the uncensored population.
    pub median_survival: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_patients: 400,
            latent_dim: 8,
            genomic_dim: 746,
            feature_dim: 64,
            min_patches: 8,
            max_patches: 32,
            informative_fraction: 0.25,
            genomic_noise: 0.3,
            image_noise: 2.0,
            image_signal: 1.0,
            hazard_coef: 1.5,
            censoring: 0.3,
            median_survival: 1000.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, v) in [
            ("n_patients", self.n_patients),
            ("latent_dim", self.latent_dim),
            ("genomic_dim", self.genomic_dim),
            ("feature_dim", self.feature_dim),
            ("min_patches", self.min_patches),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.max_patches < self.min_patches {
            return bad(format!(
                "max_patches ({}) must be >= min_patches ({})",
                self.max_patches, self.min_patches
            ));
        }
        if !(self.informative_fraction > 0.0 && self.informative_fraction <= 1.0) {
            return bad(format!(
                "informative_fraction must be in (0, 1], got {}",
                self.informative_fraction
            ));
        }
        if !(self.genomic_noise >= 0.0 && self.image_noise > self.genomic_noise) {
            return bad(format!(
                "image_noise ({}) must exceed genomic_noise ({}) >= 0",
                self.image_noise, self.genomic_noise
            ));
        }
        if !(self.censoring >= 0.0 && self.censoring < 1.0) {
            return bad(format!(
                "censoring must be in [0, 1), got {}",
                self.censoring
            ));
        }
        for (name, v) in [
            ("image_signal", self.image_signal),
            ("hazard_coef", self.hazard_coef),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and nonnegative, got {v}"));
            }
        }
        if !(self.median_survival.is_finite() && self.median_survival > 0.0) {
            return bad(format!(
                "median_survival must be positive, got {}",
                self.median_survival
            ));
        }
        Ok(())
    }
}

/// Independent ChaCha streams of the one seeded generator.
#[derive(Clone, Copy)]
enum Stream {
    Loadings = 1,
    Latent = 2,
    Genomic = 3,
    Bags = 4,
    Survival = 5,
    Censoring = 6,
}

fn stream(seed: u64, s: Stream) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(s as u64);
    r
}

fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| {
            (0..cols)
                .map(|_| {
                    let v: f64 = StandardNormal.sample(rng);
                    std * v
                })
                .collect::<Vec<f64>>()
        })
        .collect()
}

fn apply<'a>(m: &'a [Vec<f64>], z: &'a [f64]) -> impl Iterator<Item = f64> + 'a {
    m.iter()
        .map(move |row| row.iter().zip(z).map(|(a, b)| a * b).sum())
}

/// The planted parameters: loadings `A`, `B` and the hazard direction `w`.
#[derive(Clone, Debug)]
pub struct Truth {
    pub genomic_loadings: Vec<Vec<f64>>,
    pub image_loadings: Vec<Vec<f64>>,
    pub hazard_direction: Vec<f64>,
    pub latents: Vec<Vec<f64>>,
    /// `β·w·z` per patient.
    pub log_hazards: Vec<f64>,
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Vec<PatientRecord>> {
    Ok(generate_with_truth(cfg)?.0)
}

pub fn generate_with_truth(cfg: &SynthConfig) -> Result<(Vec<PatientRecord>, Truth)> {
    cfg.validate()?;
    let k = cfg.latent_dim;
    let n = cfg.n_patients;

    let mut loadings = stream(cfg.seed, Stream::Loadings);
    let scale = 1.0 / (k as f64).sqrt();
    let a = gaussian_matrix(&mut loadings, cfg.genomic_dim, k, scale);
    let b = gaussian_matrix(&mut loadings, cfg.feature_dim, k, cfg.image_signal * scale);
    let mut w: Vec<f64> = (0..k)
        .map(|_| StandardNormal.sample(&mut loadings))
        .collect();
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    w.iter_mut().for_each(|v| *v /= norm);

    let mut latent_rng = stream(cfg.seed, Stream::Latent);
    let latents: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..k)
                .map(|_| StandardNormal.sample(&mut latent_rng))
                .collect()
        })
        .collect();
    let log_hazards: Vec<f64> = latents
        .iter()
        .map(|z| cfg.hazard_coef * w.iter().zip(z).map(|(a, b)| a * b).sum::<f64>())
        .collect();

    let genomic_noise = Normal::new(0.0, cfg.genomic_noise).map_err(config_err)?;
    let mut genomic_rng = stream(cfg.seed, Stream::Genomic);
    let genomics: Vec<Tensor> = latents
        .iter()
        .map(|z| {
            let values = apply(&a, z)
                .map(|v| round_f32(softplus(v + genomic_noise.sample(&mut genomic_rng))))
                .collect();
            Tensor::vector(values)
        })
        .collect();

    let image_noise = Normal::new(0.0, cfg.image_noise).map_err(config_err)?;
    let mut bag_rng = stream(cfg.seed, Stream::Bags);
    let bags: Vec<Tensor> = latents
        .iter()
        .map(|z| {
            let patches = bag_rng.random_range(cfg.min_patches..=cfg.max_patches);
            let informative = (cfg.informative_fraction * patches as f64).ceil() as usize;
            let signal: Vec<f64> = apply(&b, z).collect();
            let mut rows: Vec<Vec<f64>> = (0..patches)
                .map(|p| {
                    (0..cfg.feature_dim)
                        .map(|c| {
                            let base = if p < informative { signal[c] } else { 0.0 };
                            round_f32(base + image_noise.sample(&mut bag_rng))
                        })
                        .collect()
                })
                .collect();
            rows.shuffle(&mut bag_rng);
            Tensor::from_rows(&rows).expect("nonempty bag")
        })
        .collect();

    let hazards: Vec<f64> = log_hazards.iter().map(|h| h.exp()).collect();
    let base_rate = calibrate_base_rate(&hazards, cfg.median_survival);
    let mut survival_rng = stream(cfg.seed, Stream::Survival);
    let event_times: Vec<f64> = hazards
        .iter()
        .map(|h| {
            Exp::new(base_rate * h)
                .map_err(config_err)
                .map(|d| d.sample(&mut survival_rng))
        })
        .collect::<Result<_>>()?;

    let mut censor_rng = stream(cfg.seed, Stream::Censoring);
    let fractions: Vec<f64> = (0..n).map(|_| 1.0 - censor_rng.random::<f64>()).collect();
    let c_max = calibrate_censoring(&event_times, &fractions, cfg.censoring);

    let width = n.to_string().len();
    let records = (0..n)
        .map(|i| {
            let censor = fractions[i] * c_max;
            let t = event_times[i];
            PatientRecord {
                id: format!("P{:0width$}", i, width = width),
                outcome: Outcome::new(t.min(censor), t <= censor),
                bag: bags[i].clone(),
                genomic: Some(genomics[i].clone()),
            }
        })
        .collect();
    let truth = Truth {
        genomic_loadings: a,
        image_loadings: b,
        hazard_direction: w,
        latents,
        log_hazards,
    };
    Ok((records, truth))
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

/// λ₀ such that the population survival `mean_i exp(−λ₀·hᵢ·m)` at the
/// target median `m` is one half.
fn calibrate_base_rate(hazards: &[f64], median: f64) -> f64 {
    let survival = |rate: f64| {
        hazards
            .iter()
            .map(|h| (-rate * h * median).exp())
            .sum::<f64>()
            / hazards.len() as f64
    };
    let (mut lo, mut hi) = (0.0, std::f64::consts::LN_2 / median);
    while survival(hi) > 0.5 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if survival(mid) > 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Largest uniform-censoring window whose realized censored fraction is as
/// close as possible to `target`. Infinite when `target` is zero.
fn calibrate_censoring(times: &[f64], fractions: &[f64], target: f64) -> f64 {
    if target == 0.0 {
        return f64::INFINITY;
    }
    let censored = |c_max: f64| {
        times
            .iter()
            .zip(fractions)
            .filter(|(t, u)| **u * c_max < **t)
            .count() as f64
            / times.len() as f64
    };
    let longest = times.iter().cloned().fold(0.0, f64::max);
    let (mut lo, mut hi) = (0.0, longest / fractions.iter().cloned().fold(1.0, f64::min));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if censored(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

impl KeyValues for SynthConfig {
    fn pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("n_patients", self.n_patients.to_string()),
            ("latent_dim", self.latent_dim.to_string()),
            ("genomic_dim", self.genomic_dim.to_string()),
            ("feature_dim", self.feature_dim.to_string()),
            ("min_patches", self.min_patches.to_string()),
            ("max_patches", self.max_patches.to_string()),
            (
                "informative_fraction",
                self.informative_fraction.to_string(),
            ),
            ("genomic_noise", self.genomic_noise.to_string()),
            ("image_noise", self.image_noise.to_string()),
            ("image_signal", self.image_signal.to_string()),
            ("hazard_coef", self.hazard_coef.to_string()),
            ("censoring", self.censoring.to_string()),
            ("median_survival", self.median_survival.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        match key {
            "n_patients" => self.n_patients = parse_value(key, v)?,
            "latent_dim" => self.latent_dim = parse_value(key, v)?,
            "genomic_dim" => self.genomic_dim = parse_value(key, v)?,
            "feature_dim" => self.feature_dim = parse_value(key, v)?,
            "min_patches" => self.min_patches = parse_value(key, v)?,
            "max_patches" => self.max_patches = parse_value(key, v)?,
            "informative_fraction" => self.informative_fraction = parse_value(key, v)?,
            "genomic_noise" => self.genomic_noise = parse_value(key, v)?,
            "image_noise" => self.image_noise = parse_value(key, v)?,
            "image_signal" => self.image_signal = parse_value(key, v)?,
            "hazard_coef" => self.hazard_coef = parse_value(key, v)?,
            "censoring" => self.censoring = parse_value(key, v)?,
            "median_survival" => self.median_survival = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            _ => return Err(unknown_key(key)),
        }
        Ok(())
    }
}
