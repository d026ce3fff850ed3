//! Training-run properties on the default synthetic cohort.

use std::time::{Duration, Instant};

use pathogenx::data::{generate_synthetic, without_genomic, SynthConfig};
use pathogenx::model::PathoGenX;
use pathogenx::nn::ParamTree;
use pathogenx::train::{cross_validate, evaluate, LogRow, Method, TrainConfig, Trainer};

fn config(seed: u64, method: Method) -> TrainConfig {
    let mut cfg = TrainConfig {
        method,
        seed,
        ..TrainConfig::default()
    };
    cfg.model.d_model = 64;
    cfg
}

fn cohort(seed: u64, hazard_coef: f64) -> Vec<pathogenx::data::PatientRecord> {
    generate_synthetic(&SynthConfig {
        seed,
        hazard_coef,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn epoch_total(rows: &[LogRow], epoch: usize) -> f64 {
    rows.iter()
        .filter(|r| r.epoch == epoch)
        .map(|r| r.total)
        .sum()
}

#[test]
fn loss_falls_over_twelve_epochs_and_stays_finite() {
    let mut decreased = 0;
    for seed in 0..5 {
        let data = cohort(seed, 1.5);
        let mut trainer =
            Trainer::<PathoGenX>::new(config(seed, Method::PathoGenX), &data).unwrap();
        let mut rows = Vec::new();
        for _ in 0..12 {
            let start = Instant::now();
            rows.extend(trainer.train_epoch(&data).unwrap());
            assert!(start.elapsed() < Duration::from_secs(60));
        }
        assert!(rows
            .iter()
            .all(|r| [r.cox, r.latent, r.translation, r.total]
                .iter()
                .all(|v| v.is_finite())));
        assert!(trainer
            .model
            .elems()
            .iter()
            .all(|t| t.data().iter().all(|v| v.is_finite())));
        if epoch_total(&rows, 12) < epoch_total(&rows, 1) {
            decreased += 1;
        }
    }
    assert!(decreased >= 4, "loss fell for {decreased}/5 seeds");
}

#[test]
fn untrained_model_is_uninformative_on_null_data() {
    for seed in 0..5 {
        let data = cohort(seed, 0.0);
        let trainer = Trainer::<PathoGenX>::new(config(seed, Method::PathoGenX), &data).unwrap();
        let c = evaluate(&trainer.model, &without_genomic(&data))
            .unwrap()
            .c_index;
        assert!((0.4..=0.6).contains(&c), "seed {seed}: {c}");
    }
}

#[test]
fn genomic_baseline_is_at_chance_without_hazard_signal() {
    let mean = (0..5)
        .map(|seed| {
            let report =
                cross_validate(&cohort(seed, 0.0), &config(seed, Method::GenomicCox), 4).unwrap();
            assert_eq!(report.folds.len(), 4);
            report.mean
        })
        .sum::<f64>()
        / 5.0;
    assert!((0.45..=0.55).contains(&mean), "{mean}");
}
