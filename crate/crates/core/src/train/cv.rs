use std::io::Write;

use super::models::{GenomicCox, MeanMil, SurvivalModel};
use super::trainer::{evaluate, Trainer};
use super::{Method, TrainConfig};
use crate::data::{kfold_split, PatientRecord};
use crate::error::Result;
use crate::losses::AlignmentTerms;
use crate::model::PathoGenX;

#[derive(Clone, Debug, PartialEq)]
pub struct CvReport {
    pub method: Method,
    /// Held-out C-index per fold.
    pub folds: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation of `folds`.
    pub std: f64,
    /// Out-of-fold risk of every record, by index.
    pub risks: Vec<f64>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// k-fold cross-validation; folds are drawn with `cfg.seed` and fold f
/// trains with seed `cfg.seed + f`. `on_fold` sees each trained model with
/// its held-out indices.
pub fn cross_validate_with<M, F>(
    data: &[PatientRecord],
    cfg: &TrainConfig,
    k: usize,
    mut on_fold: F,
) -> Result<CvReport>
where
    M: SurvivalModel,
    F: FnMut(usize, &M, &[usize]) -> Result<()>,
{
    let split = kfold_split(data.len(), k, cfg.seed)?;
    let mut folds = Vec::with_capacity(k);
    let mut risks = vec![0.0; data.len()];
    for fold in 0..k {
        let pick = |idx: &[usize]| idx.iter().map(|&i| data[i].clone()).collect::<Vec<_>>();
        let held_out = split.validation(fold);
        let fold_cfg = TrainConfig {
            seed: cfg.seed.wrapping_add(fold as u64),
            ..cfg.clone()
        };
        let mut trainer = Trainer::<M>::new(fold_cfg, &pick(&split.training(fold)))?;
        trainer.fit(&pick(&split.training(fold)))?;
        let eval = evaluate(&trainer.model, &pick(&held_out))?;
        for (&i, &r) in held_out.iter().zip(&eval.risks) {
            risks[i] = r;
        }
        folds.push(eval.c_index);
        on_fold(fold, &trainer.model, &held_out)?;
    }
    let (mean, std) = mean_std(&folds);
    Ok(CvReport {
        method: M::METHOD,
        folds,
        mean,
        std,
        risks,
    })
}

/// Cross-validates the method named in `cfg`.
pub fn cross_validate(data: &[PatientRecord], cfg: &TrainConfig, k: usize) -> Result<CvReport> {
    match cfg.method {
        Method::PathoGenX => cross_validate_with::<PathoGenX, _>(data, cfg, k, |_, _, _| Ok(())),
        Method::MeanMil => cross_validate_with::<MeanMil, _>(data, cfg, k, |_, _, _| Ok(())),
        Method::GenomicCox => cross_validate_with::<GenomicCox, _>(data, cfg, k, |_, _, _| Ok(())),
    }
}

/// `fold,c_index` rows followed by `mean` and `std` rows.
pub fn write_cv_csv(mut w: impl Write, report: &CvReport) -> std::io::Result<()> {
    writeln!(w, "fold,c_index")?;
    for (i, c) in report.folds.iter().enumerate() {
        writeln!(w, "{i},{c}")?;
    }
    writeln!(w, "mean,{}", report.mean)?;
    writeln!(w, "std,{}", report.std)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub alignment: AlignmentTerms,
    pub report: CvReport,
}

/// PathoGen-X cross-validated with each alignment variant.
pub fn ablation_alignment(
    data: &[PatientRecord],
    cfg: &TrainConfig,
    k: usize,
) -> Result<Vec<AblationRow>> {
    AlignmentTerms::ALL
        .iter()
        .map(|&alignment| {
            let c = TrainConfig {
                method: Method::PathoGenX,
                alignment,
                ..cfg.clone()
            };
            Ok(AblationRow {
                alignment,
                report: cross_validate(data, &c, k)?,
            })
        })
        .collect()
}

pub fn write_ablation_csv(mut w: impl Write, rows: &[AblationRow]) -> std::io::Result<()> {
    writeln!(w, "alignment,mean,std")?;
    for r in rows {
        writeln!(w, "{},{},{}", r.alignment, r.report.mean, r.report.std)?;
    }
    Ok(())
}
