use std::path::Path;

use proptest::prelude::*;

use super::*;
use crate::data::{generate_synthetic, without_genomic, PatientRecord, SynthConfig};
use crate::model::PathoGenX;
use crate::nn::ParamTree;
use crate::tensor::Tensor;
use crate::Error;

fn data(seed: u64, n: usize) -> Vec<PatientRecord> {
    generate_synthetic(&SynthConfig {
        n_patients: n,
        genomic_dim: 10,
        feature_dim: 6,
        min_patches: 3,
        max_patches: 6,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn tiny(seed: u64) -> TrainConfig {
    let mut c = TrainConfig {
        epochs: 3,
        batch_size: 16,
        seed,
        ..TrainConfig::default()
    };
    c.model.d_model = 8;
    c.model.heads = 2;
    c.model.head_hidden = 4;
    c
}

fn bits(rows: &[LogRow]) -> Vec<u64> {
    rows.iter()
        .flat_map(|r| [r.cox, r.latent, r.translation, r.total].map(f64::to_bits))
        .collect()
}

fn param_bits<P: ParamTree<Elem = Tensor>>(p: &P) -> Vec<u64> {
    p.elems()
        .iter()
        .flat_map(|t| t.data().iter().map(|v| v.to_bits()))
        .collect()
}

#[test]
fn adam_with_zero_gradient_and_decay_only_counts() {
    let mut w = Tensor::vector(vec![1.0, -2.0]);
    let mut state = AdamState::new([&w]);
    let g = [Tensor::zeros(&[2])];
    for _ in 0..5 {
        adam_step(
            vec![&mut w],
            &g,
            &mut state,
            0.001,
            0.0,
            DecayMode::Decoupled,
        )
        .unwrap();
    }
    assert_eq!(w.data(), &[1.0, -2.0]);
    assert_eq!(state.step, 5);
}

#[test]
fn adam_constant_gradient_steps_by_learning_rate() {
    let mut w = Tensor::vector(vec![0.0, 0.0]);
    let mut state = AdamState::new([&w]);
    let g = [Tensor::vector(vec![0.3, -7.0])];
    let mut prev = w.clone();
    for _ in 0..1000 {
        prev = w.clone();
        adam_step(
            vec![&mut w],
            &g,
            &mut state,
            0.01,
            0.0,
            DecayMode::Decoupled,
        )
        .unwrap();
    }
    for (a, b) in w.data().iter().zip(prev.data()) {
        assert!(
            ((a - b).abs() - 0.01).abs() < 1e-3 * 0.01,
            "{}",
            (a - b).abs()
        );
    }
    assert!(w.data()[0] < 0.0 && w.data()[1] > 0.0);
}

#[test]
fn decoupled_decay_alone_is_geometric() {
    let mut w = Tensor::vector(vec![3.0, -0.5]);
    let mut state = AdamState::new([&w]);
    let g = [Tensor::zeros(&[2])];
    for _ in 0..100 {
        adam_step(
            vec![&mut w],
            &g,
            &mut state,
            0.01,
            0.1,
            DecayMode::Decoupled,
        )
        .unwrap();
    }
    let f = (1.0f64 - 0.001).powi(100);
    assert!((w.data()[0] - 3.0 * f).abs() < 1e-12);
    assert!((w.data()[1] + 0.5 * f).abs() < 1e-12);
}

#[test]
fn coupled_decay_enters_the_gradient() {
    let mut a = Tensor::vector(vec![2.0]);
    let mut b = a.clone();
    let (mut sa, mut sb) = (AdamState::new([&a]), AdamState::new([&b]));
    for _ in 0..3 {
        let g = [Tensor::vector(vec![0.5 + 0.1 * b.data()[0]])];
        adam_step(
            vec![&mut a],
            &[Tensor::vector(vec![0.5])],
            &mut sa,
            0.01,
            0.1,
            DecayMode::Coupled,
        )
        .unwrap();
        adam_step(vec![&mut b], &g, &mut sb, 0.01, 0.0, DecayMode::Coupled).unwrap();
    }
    assert_eq!(a, b);
}

#[test]
fn adam_rejects_mismatched_shapes() {
    let mut w = Tensor::zeros(&[2]);
    let mut state = AdamState::new([&w]);
    let g = [Tensor::zeros(&[3])];
    let err = adam_step(
        vec![&mut w],
        &g,
        &mut state,
        0.01,
        0.0,
        DecayMode::Decoupled,
    );
    assert!(matches!(err, Err(Error::Shape { .. })));
}

#[test]
fn training_is_bitwise_deterministic() {
    let d = data(1, 40);
    let run = || {
        let mut t = Trainer::<PathoGenX>::new(tiny(5), &d).unwrap();
        (t.fit(&d).unwrap(), t.model)
    };
    let (a, ma) = run();
    let (b, mb) = run();
    assert_eq!(a.len(), 3 * 3);
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(param_bits(&ma), param_bits(&mb));
    let mut other = Trainer::<PathoGenX>::new(tiny(6), &d).unwrap();
    assert_ne!(bits(&other.fit(&d).unwrap()), bits(&a));
}

#[test]
fn zero_alpha_makes_alignment_irrelevant() {
    let d = data(2, 40);
    let run = |l1: f64, l2: f64| {
        let mut c = tiny(3);
        c.weight_decay = 0.0;
        c.weights.alpha = 0.0;
        c.weights.lambda1 = l1;
        c.weights.lambda2 = l2;
        let mut t = Trainer::<PathoGenX>::new(c, &d).unwrap();
        let init = t.model.clone();
        t.fit(&d).unwrap();
        (t.model, init)
    };
    let (a, init) = run(1.0, 1.0);
    let (b, _) = run(0.0, 0.0);
    let (c, _) = run(5.0, 0.5);
    assert_eq!(param_bits(&a), param_bits(&b));
    assert_eq!(param_bits(&a), param_bits(&c));
    assert_eq!(a.genomic_projection, init.genomic_projection);
    assert_ne!(param_bits(&a.decoder), param_bits(&init.decoder));
}

#[test]
fn alignment_toggles_zero_the_other_term() {
    let d = data(4, 40);
    for (terms, latent, translation) in [
        (AlignmentTerms::LatentOnly, true, false),
        (AlignmentTerms::TranslationOnly, false, true),
        (AlignmentTerms::Both, true, true),
    ] {
        let c = TrainConfig {
            alignment: terms,
            ..tiny(1)
        };
        let rows = Trainer::<PathoGenX>::new(c, &d).unwrap().fit(&d).unwrap();
        for r in rows {
            assert_eq!(r.latent != 0.0, latent, "{terms}");
            assert_eq!(r.translation != 0.0, translation, "{terms}");
            let expect = r.cox + (r.latent + r.translation);
            assert!((r.total - expect).abs() < 1e-9 * expect.abs().max(1.0));
        }
    }
}

#[test]
fn training_requires_genomics_except_for_meanmil() {
    let mut d = data(5, 20);
    d[7].genomic = None;
    let id = d[7].id.clone();
    match Trainer::<PathoGenX>::new(tiny(0), &d) {
        Err(Error::MissingGenomic(got)) => assert_eq!(got, id),
        other => panic!("{other:?}"),
    }
    assert!(matches!(
        Trainer::<GenomicCox>::new(tiny(0), &d),
        Err(Error::MissingGenomic(_))
    ));
    let stripped = without_genomic(&d);
    let mut t = Trainer::<MeanMil>::new(tiny(0), &stripped).unwrap();
    t.fit(&stripped).unwrap();
    let msg = Error::MissingGenomic(id).to_string();
    assert!(msg.contains("training requires paired modalities"));
}

#[test]
fn batches_without_events_train_on_alignment_only() {
    let mut d = data(6, 12);
    for r in &mut d {
        r.outcome.event = false;
    }
    let mut t = Trainer::<PathoGenX>::new(tiny(0), &d).unwrap();
    let before = t.model.clone();
    let rows = t.train_epoch(&d).unwrap();
    assert!(rows.iter().all(|r| r.cox == 0.0 && r.total > 0.0));
    assert_ne!(param_bits(&t.model), param_bits(&before));

    let mut m = Trainer::<MeanMil>::new(tiny(0), &d).unwrap();
    let before = m.model.clone();
    let rows = m.train_epoch(&d).unwrap();
    assert!(rows.iter().all(|r| r.total == 0.0));
    assert_eq!(m.model, before);
}

#[test]
fn evaluation_ignores_genomics_and_duplicates() {
    let d = data(7, 40);
    let mut t = Trainer::<PathoGenX>::new(tiny(2), &d).unwrap();
    t.fit(&d).unwrap();
    let a = evaluate(&t.model, &d).unwrap();
    let b = evaluate(&t.model, &without_genomic(&d)).unwrap();
    assert_eq!(a, b);
    let doubled: Vec<PatientRecord> = d.iter().chain(&d).cloned().collect();
    let c = evaluate(&t.model, &doubled).unwrap();
    assert!((c.c_index - a.c_index).abs() < 1e-12);
    assert!(matches!(
        evaluate(&t.model, &[]),
        Err(Error::TooFewPatients { .. })
    ));
}

#[test]
fn meanmil_ignores_patch_order() {
    let d = data(8, 20);
    let mut t = Trainer::<MeanMil>::new(tiny(0), &d).unwrap();
    t.fit(&d).unwrap();
    let shuffled: Vec<PatientRecord> = d
        .iter()
        .map(|r| {
            let rows: Vec<Vec<f64>> = (0..r.bag.rows())
                .rev()
                .map(|i| r.bag.row(i).to_vec())
                .collect();
            PatientRecord {
                bag: Tensor::from_rows(&rows).unwrap(),
                ..r.clone()
            }
        })
        .collect();
    let a = t.model.predict(&d).unwrap();
    let b = t.model.predict(&shuffled).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-10);
    }
}

#[test]
fn genomic_cox_needs_genomics_at_test_time() {
    let d = data(9, 20);
    let mut t = Trainer::<GenomicCox>::new(tiny(0), &d).unwrap();
    t.fit(&d).unwrap();
    assert!(matches!(
        t.model.predict(&without_genomic(&d)),
        Err(Error::MissingGenomic(_))
    ));
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let d = data(10, 30);
    let mut t = Trainer::<PathoGenX>::new(tiny(1), &d).unwrap();
    t.train_epoch(&d).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.pgxc");
    save_checkpoint(&path, &t.checkpoint()).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded, t.checkpoint());
    let again = dir.path().join("b.pgxc");
    save_checkpoint(&again, &loaded).unwrap();
    assert_eq!(
        std::fs::read(&path).unwrap(),
        std::fs::read(&again).unwrap()
    );
    assert_eq!(&std::fs::read(&path).unwrap()[..6], b"PGXC\x01\x00");
}

#[test]
fn resume_matches_an_uninterrupted_run() {
    let d = data(11, 40);
    let c = TrainConfig {
        epochs: 4,
        ..tiny(9)
    };
    let mut straight = Trainer::<PathoGenX>::new(c.clone(), &d).unwrap();
    let full = straight.fit(&d).unwrap();

    let mut first = Trainer::<PathoGenX>::new(c, &d).unwrap();
    let mut rows = first.train_epoch(&d).unwrap();
    rows.extend(first.train_epoch(&d).unwrap());
    let bytes = first.checkpoint().encode();
    let ckpt = Checkpoint::decode(&bytes, Path::new("mem")).unwrap();
    let mut resumed = Trainer::<PathoGenX>::from_checkpoint(&ckpt).unwrap();
    assert_eq!(resumed.epoch, 2);
    rows.extend(resumed.fit(&d).unwrap());
    assert_eq!(bits(&rows), bits(&full));
    assert_eq!(param_bits(&resumed.model), param_bits(&straight.model));
    assert_eq!(resumed.adam, straight.adam);
}

#[test]
fn mismatched_architecture_names_the_tensor() {
    let d = data(12, 20);
    let t = Trainer::<PathoGenX>::new(tiny(0), &d).unwrap();
    let mut ckpt = t.checkpoint();
    ckpt.config.model.d_model = 16;
    let err = Trainer::<PathoGenX>::from_checkpoint(&ckpt).unwrap_err();
    assert!(matches!(err, Error::Checkpoint(_)));
    assert!(err.to_string().contains("input_embed.weight"), "{err}");

    let ckpt = t.checkpoint();
    assert!(matches!(
        Trainer::<MeanMil>::from_checkpoint(&ckpt),
        Err(Error::Checkpoint(_))
    ));
    let mut renamed = ckpt.params.clone();
    renamed[1].0 = "bogus".into();
    let mut m = t.model.clone();
    let err = assign_named(&mut m, &renamed).unwrap_err();
    assert!(err.to_string().contains("bogus"), "{err}");
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let d = data(13, 20);
    let bytes = Trainer::<MeanMil>::new(tiny(0), &d)
        .unwrap()
        .checkpoint()
        .encode();
    let p = Path::new("x.pgxc");
    let check = |b: &[u8], needle: &str| {
        let err = Checkpoint::decode(b, p).unwrap_err();
        assert!(err.to_string().contains(needle), "{err}");
    };
    let mut magic = bytes.clone();
    magic[0] = b'Q';
    check(&magic, "magic");
    let mut version = bytes.clone();
    version[4] = 9;
    check(&version, "version");
    check(&bytes[..bytes.len() - 3], "truncated");
    let mut long = bytes.clone();
    long.push(1);
    check(&long, "trailing");
}

#[test]
fn predict_checkpoint_dispatches_on_method() {
    let d = data(14, 24);
    let mut m = Trainer::<MeanMil>::new(tiny(0), &d).unwrap();
    m.fit(&d).unwrap();
    assert_eq!(
        predict_checkpoint(&m.checkpoint(), &d).unwrap(),
        m.model.predict(&d).unwrap()
    );
    let mut p = Trainer::<PathoGenX>::new(tiny(0), &d).unwrap();
    p.fit(&d).unwrap();
    assert_eq!(
        predict_checkpoint(&p.checkpoint(), &d).unwrap(),
        SurvivalModel::predict(&p.model, &d).unwrap()
    );
}

#[test]
fn cross_validation_reports_every_fold() {
    let d = data(15, 40);
    let c = TrainConfig {
        method: Method::MeanMil,
        ..tiny(4)
    };
    let a = cross_validate(&d, &c, 4).unwrap();
    let b = cross_validate(&d, &c, 4).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.folds.len(), 4);
    let mean = a.folds.iter().sum::<f64>() / 4.0;
    assert!((a.mean - mean).abs() < 1e-12);
    let mut buf = Vec::new();
    write_cv_csv(&mut buf, &a).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 1 + 4 + 2);
    assert!(text.lines().nth(5).unwrap().starts_with("mean,"));
    assert!(matches!(
        cross_validate(&d[..3], &c, 4),
        Err(Error::TooFewPatients { .. })
    ));
}

#[test]
fn ablation_emits_three_rows() {
    let d = data(16, 24);
    let c = TrainConfig {
        epochs: 1,
        ..tiny(0)
    };
    let rows = ablation_alignment(&d, &c, 2).unwrap();
    assert_eq!(
        rows.iter().map(|r| r.alignment).collect::<Vec<_>>(),
        AlignmentTerms::ALL
    );
    let mut buf = Vec::new();
    write_ablation_csv(&mut buf, &rows).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.starts_with("alignment,mean,std\nlatent,"));
}

#[test]
fn log_csv_has_one_row_per_step() {
    let d = data(17, 40);
    let rows = Trainer::<PathoGenX>::new(tiny(0), &d)
        .unwrap()
        .fit(&d)
        .unwrap();
    let mut buf = Vec::new();
    write_log_csv(&mut buf, &rows).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], LOG_HEADER);
    assert_eq!(lines.len(), 1 + 3 * 3);
    assert!(lines[1].starts_with("1,1,"));
    assert!(lines[9].starts_with("3,3,"));
}

#[test]
fn train_config_text_round_trips() {
    let mut c = tiny(42);
    c.method = Method::GenomicCox;
    c.decay_mode = DecayMode::Coupled;
    c.alignment = AlignmentTerms::TranslationOnly;
    c.cox_reduction = crate::losses::CoxReduction::MeanPerEvent;
    c.model.risk_input = crate::model::RiskInput::ClassToken;
    c.learning_rate = 0.1 + 0.2;
    let mut back = TrainConfig::default();
    back.apply_text(&c.to_text(), Path::new("c")).unwrap();
    assert_eq!(back, c);
    let err = back.apply_text("# x\nlearning_rate = 1\nbogus = 2\n", Path::new("c"));
    assert!(matches!(err, Err(Error::Parse { line: 3, .. })), "{err:?}");
    let err = back
        .apply_text("epochs = many\n", Path::new("c"))
        .unwrap_err();
    assert!(err.to_string().contains("epochs"), "{err}");
    let err = back.apply_text("epochs 3\n", Path::new("c")).unwrap_err();
    assert!(matches!(err, Error::Parse { line: 1, .. }));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn adam_moments_keep_parameter_shapes(
        rows in 1usize..4,
        cols in 1usize..4,
        steps in 1usize..6,
        g in -5.0f64..5.0,
    ) {
        let mut w = Tensor::full(&[rows, cols], 0.5);
        let mut state = AdamState::new([&w]);
        for _ in 0..steps {
            let grad = [Tensor::full(&[rows, cols], g)];
            adam_step(vec![&mut w], &grad, &mut state, 0.001, 0.1, DecayMode::Decoupled).unwrap();
        }
        prop_assert_eq!(state.first[0].shape(), w.shape());
        prop_assert_eq!(state.second[0].shape(), w.shape());
        prop_assert_eq!(state.step, steps as u64);
        prop_assert!(w.all_finite());
        prop_assert!(state.second[0].data().iter().all(|&v| v >= 0.0));
    }
}
