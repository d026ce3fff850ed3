//! The five-seed comparison protocol: every method cross-validated on the
//! default synthetic cohort of each seed.

use std::time::{Duration, Instant};

use pathogenx::data::{generate_synthetic, outcomes, PatientRecord, SynthConfig};
use pathogenx::losses::AlignmentTerms;
use pathogenx::model::PathoGenX;
use pathogenx::survival::{correlation_report, KmReport};
use pathogenx::train::{cross_validate, cross_validate_with, CvReport, Method, TrainConfig};
use pathogenx::{Result, Tensor};

pub const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
pub const FOLDS: usize = 4;
pub const D_MODEL: usize = 64;
pub const HEADS: usize = 4;

/// Defaults everywhere except the embedding width.
pub fn protocol_config(seed: u64, method: Method) -> TrainConfig {
    let mut cfg = TrainConfig {
        method,
        seed,
        ..TrainConfig::default()
    };
    cfg.model.d_model = D_MODEL;
    cfg.model.heads = HEADS;
    cfg
}

pub fn cohort(seed: u64) -> Result<Vec<PatientRecord>> {
    generate_synthetic(&SynthConfig {
        seed,
        ..SynthConfig::default()
    })
}

/// Mean |r| against G_l of the raw class token and of the translation, on
/// one held-out fold.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FoldCorrelation {
    pub class_token: f64,
    pub translated: f64,
}

pub fn held_out_correlation(
    model: &PathoGenX,
    records: &[&PatientRecord],
) -> Result<FoldCorrelation> {
    let bags: Vec<&Tensor> = records.iter().map(|r| &r.bag).collect();
    let genomic = records
        .iter()
        .map(|r| {
            r.genomic
                .as_ref()
                .ok_or_else(|| pathogenx::Error::MissingGenomic(r.id.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let g_l = model.project(&genomic)?;
    let (cls, translated): (Vec<Tensor>, Vec<Tensor>) = model
        .infer(&bags)?
        .into_iter()
        .map(|i| (i.class_token, i.translated))
        .unzip();
    Ok(FoldCorrelation {
        class_token: correlation_report(&cls, &g_l)?.mean_abs,
        translated: correlation_report(&translated, &g_l)?.mean_abs,
    })
}

#[derive(Clone, Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub genomic_cox: CvReport,
    pub mean_mil: CvReport,
    /// Both alignment terms: the default configuration.
    pub pathogenx: CvReport,
    pub latent_only: CvReport,
    pub translation_only: CvReport,
    /// Median split of the out-of-fold PathoGen-X risks.
    pub km: KmReport,
    pub correlation: Vec<FoldCorrelation>,
    pub baseline_time: Duration,
    pub pathogenx_time: Duration,
    pub ablation_time: Duration,
}

impl SeedRun {
    pub fn mean_correlation(&self) -> FoldCorrelation {
        let n = self.correlation.len() as f64;
        FoldCorrelation {
            class_token: self.correlation.iter().map(|c| c.class_token).sum::<f64>() / n,
            translated: self.correlation.iter().map(|c| c.translated).sum::<f64>() / n,
        }
    }
}

pub fn run_seed(seed: u64) -> Result<SeedRun> {
    let data = cohort(seed)?;

    let start = Instant::now();
    let genomic_cox = cross_validate(&data, &protocol_config(seed, Method::GenomicCox), FOLDS)?;
    let mean_mil = cross_validate(&data, &protocol_config(seed, Method::MeanMil), FOLDS)?;
    let baseline_time = start.elapsed();

    let start = Instant::now();
    let mut correlation = Vec::new();
    let pathogenx = cross_validate_with::<PathoGenX, _>(
        &data,
        &protocol_config(seed, Method::PathoGenX),
        FOLDS,
        |_, model, held_out| {
            let records: Vec<&PatientRecord> = held_out.iter().map(|&i| &data[i]).collect();
            correlation.push(held_out_correlation(model, &records)?);
            Ok(())
        },
    )?;
    let pathogenx_time = start.elapsed();

    let start = Instant::now();
    let variant = |alignment| {
        let cfg = TrainConfig {
            alignment,
            ..protocol_config(seed, Method::PathoGenX)
        };
        cross_validate(&data, &cfg, FOLDS)
    };
    let latent_only = variant(AlignmentTerms::LatentOnly)?;
    let translation_only = variant(AlignmentTerms::TranslationOnly)?;
    let ablation_time = start.elapsed();

    Ok(SeedRun {
        seed,
        km: KmReport::from_risks(&pathogenx.risks, &outcomes(&data))?,
        genomic_cox,
        mean_mil,
        pathogenx,
        latent_only,
        translation_only,
        correlation,
        baseline_time,
        pathogenx_time,
        ablation_time,
    })
}
