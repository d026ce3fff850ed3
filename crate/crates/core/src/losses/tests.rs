use proptest::prelude::*;

use super::*;
use crate::tensor::finite_difference_check;
use crate::testutil::{randn, rng};

/// Direct expansion of the partial likelihood, no stabilization.
fn cox_oracle(r: &[f64], t: &[f64], e: &[bool]) -> f64 {
    let mut loss = 0.0;
    for i in 0..r.len() {
        if e[i] {
            let denom: f64 = (0..r.len())
                .filter(|&j| t[j] >= t[i])
                .map(|j| r[j].exp())
                .sum();
            loss -= r[i] - denom.ln();
        }
    }
    loss
}

fn cox(r: &[f64], t: &[f64], e: &[bool]) -> Result<f64> {
    let mut tape = Tape::new();
    let v = tape.constant(Tensor::vector(r.to_vec()));
    let l = cox_loss(&mut tape, v, t, e, CoxReduction::Sum)?;
    tape.value(l).item()
}

fn pair(p: &[f64], q: &[f64], f: impl FnOnce(&mut Tape, Var, Var) -> Result<Var>) -> f64 {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::vector(p.to_vec()));
    let b = tape.constant(Tensor::vector(q.to_vec()));
    let out = f(&mut tape, a, b).unwrap();
    tape.value(out).item().unwrap()
}

#[test]
fn equal_risks_give_log_of_risk_set_size() {
    assert_eq!(
        cox(&[0.0, 0.0], &[1.0, 2.0], &[true, false]).unwrap(),
        2f64.ln()
    );
    for r in [-3.0, 0.7, 25.0, 800.0] {
        let l = cox(&[r, r], &[1.0, 2.0], &[true, false]).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12, "{r}: {l}");
    }
}

#[test]
fn hand_expanded_partial_likelihood() {
    let r = [1.0, 0.5, -0.3];
    let t = [2.0, 1.0, 3.0];
    let e = [true, true, false];
    let by_hand = -(1.0 - (1f64.exp() + (-0.3f64).exp()).ln())
        - (0.5 - (1f64.exp() + 0.5f64.exp() + (-0.3f64).exp()).ln());
    assert!((cox(&r, &t, &e).unwrap() - by_hand).abs() < 1e-12);
}

#[test]
fn breslow_ties_match_direct_expansion() {
    let mut g = rng(1);
    for trial in 0..50 {
        let b = 2 + trial % 9;
        let r = randn(&mut g, &[b]).into_data();
        let t: Vec<f64> = (0..b).map(|i| 1.0 + ((i * 7 + trial) % 3) as f64).collect();
        let mut e: Vec<bool> = (0..b).map(|i| (i + trial) % 3 != 0).collect();
        e[0] = true;
        let got = cox(&r, &t, &e).unwrap();
        assert!((got - cox_oracle(&r, &t, &e)).abs() < 1e-10);
    }
}

#[test]
fn mean_reduction_divides_by_event_count() {
    let r = [0.2, -1.0, 0.4, 1.1];
    let t = [5.0, 3.0, 3.0, 9.0];
    let e = [true, true, false, true];
    let mut tape = Tape::new();
    let v = tape.constant(Tensor::vector(r.to_vec()));
    let m = cox_loss(&mut tape, v, &t, &e, CoxReduction::MeanPerEvent).unwrap();
    let mean = tape.value(m).item().unwrap();
    assert!((mean - cox_oracle(&r, &t, &e) / 3.0).abs() < 1e-12);
}

#[test]
fn cox_errors() {
    assert!(matches!(
        cox(&[0.0, 1.0], &[1.0, 2.0], &[false, false]),
        Err(Error::UninformativeBatch(2))
    ));
    assert!(matches!(
        cox(&[0.0, 1.0], &[0.0, 2.0], &[true, false]),
        Err(Error::Domain { op: "cox_loss", .. })
    ));
    assert!(matches!(
        cox(&[0.0, 1.0], &[1.0], &[true, false]),
        Err(Error::Shape { .. })
    ));
}

#[test]
fn cox_is_stable_for_large_risks() {
    let l = cox(&[900.0, -900.0, 0.0], &[1.0, 2.0, 3.0], &[true, true, true]).unwrap();
    assert!((l - 900.0).abs() < 1e-9, "{l}");
}

#[test]
fn cox_gradient_with_ties() {
    let mut g = rng(2);
    for b in [2usize, 5, 10] {
        let r = randn(&mut g, &[b]);
        let t: Vec<f64> = (0..b).map(|i| 1.0 + (i % 4) as f64).collect();
        let e: Vec<bool> = (0..b).map(|i| i % 3 != 2).collect();
        let report = finite_difference_check(
            |tape, v| cox_loss(tape, v[0], &t, &e, CoxReduction::Sum),
            &[r],
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}

#[test]
fn kl_examples() {
    let v = [0.3, -1.2, 2.0];
    assert!(pair(&v, &v, |t, a, b| kl_embedding(t, a, b)).abs() < 1e-12);
    let kl = pair(&[0.0, 0.0], &[0.0, 3f64.ln()], |t, a, b| {
        kl_embedding(t, a, b)
    });
    let by_hand = 0.5 * (0.5f64 / 0.25).ln() + 0.5 * (0.5f64 / 0.75).ln();
    assert!((kl - by_hand).abs() < 1e-12);
    assert!((kl - 0.143841).abs() < 1e-6);
}

#[test]
fn kl_rejects_mismatched_lengths() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::vector(vec![1.0, 2.0]));
    let b = tape.constant(Tensor::vector(vec![1.0]));
    assert!(matches!(
        kl_embedding(&mut tape, a, b),
        Err(Error::Shape { .. })
    ));
    assert!(matches!(
        sq_euclidean(&mut tape, a, b),
        Err(Error::Shape { .. })
    ));
}

#[test]
fn sq_euclidean_examples() {
    let v = [0.1, 0.2];
    assert_eq!(pair(&v, &v, |t, a, b| sq_euclidean(t, a, b)), 0.0);
    assert_eq!(
        pair(&[1.0, 0.0], &[0.0, 1.0], |t, a, b| sq_euclidean(t, a, b)),
        2.0
    );
    let p = randn(&mut rng(3), &[7]).into_data();
    let q = randn(&mut rng(4), &[7]).into_data();
    let mut oracle = 0.0;
    for i in 0..7 {
        oracle += (p[i] - q[i]) * (p[i] - q[i]);
    }
    assert!((pair(&p, &q, |t, a, b| sq_euclidean(t, a, b)) - oracle).abs() < 1e-12);
}

#[test]
fn latent_and_translation_examples() {
    let w = LossWeights::default();
    let v = randn(&mut rng(5), &[6]).into_data();
    assert!(pair(&v, &v, |t, a, b| latent_loss(t, a, b, &w)).abs() < 1e-12);
    assert!(pair(&v, &v, |t, a, b| translation_loss(t, a, b, &w)).abs() < 1e-12);

    let (p, q) = ([0.0, 0.0], [0.0, 3f64.ln()]);
    let kl = pair(&p, &q, |t, a, b| kl_embedding(t, a, b));
    let sq = pair(&p, &q, |t, a, b| sq_euclidean(t, a, b));
    let both = pair(&p, &q, |t, a, b| latent_loss(t, a, b, &w));
    assert!((both - (kl + sq)).abs() < 1e-12);

    let euclid_only = LossWeights {
        lambda1: 0.0,
        lambda2: 2.5,
        alpha: 1.0,
    };
    let l = pair(&p, &q, |t, a, b| latent_loss(t, a, b, &euclid_only));
    assert!((l - 2.5 * sq).abs() < 1e-12);

    let sq_only = LossWeights { lambda1: 0.0, ..w };
    let a = randn(&mut rng(6), &[6]).into_data();
    let b = randn(&mut rng(7), &[6]).into_data();
    let fwd = pair(&a, &b, |t, x, y| translation_loss(t, x, y, &sq_only));
    let rev = pair(&b, &a, |t, x, y| translation_loss(t, x, y, &sq_only));
    assert_eq!(fwd, rev);

    let w = LossWeights {
        lambda1: 0.7,
        lambda2: 1.3,
        alpha: 1.0,
    };
    let kl = pair(&a, &b, |t, x, y| kl_embedding(t, x, y));
    let sq = pair(&a, &b, |t, x, y| sq_euclidean(t, x, y));
    let tr = pair(&a, &b, |t, x, y| translation_loss(t, x, y, &w));
    assert!((tr - (0.7 * kl + 1.3 * sq)).abs() < 1e-12);
}

#[test]
fn total_loss_examples() {
    let w = |alpha| LossWeights {
        alpha,
        ..LossWeights::default()
    };
    assert_eq!(total_loss(0.8, 0.3, 0.4, &w(0.0)).total, 0.8);
    assert_eq!(total_loss(0.0, 0.3, 0.4, &w(1.0)).total, 0.3 + 0.4);
    assert_eq!(total_loss(0.5, 0.2, 0.3, &w(2.0)).total, 1.5);

    let mut tape = Tape::new();
    let [c, l, t] = [0.5, 0.2, 0.3].map(|v| tape.scalar(v));
    let total = total_loss_var(&mut tape, c, l, t, &w(2.0)).unwrap();
    assert_eq!(tape.value(total).item().unwrap(), 1.5);
}

#[test]
fn weights_reject_negative_values() {
    let bad = LossWeights {
        lambda2: -1.0,
        ..LossWeights::default()
    };
    assert!(matches!(bad.validate(), Err(Error::Config(_))));
    assert!(LossWeights::default().validate().is_ok());
}

#[test]
fn alignment_toggles_parse_and_select() {
    for terms in AlignmentTerms::ALL {
        assert_eq!(terms.to_string().parse::<AlignmentTerms>().unwrap(), terms);
    }
    assert!(!AlignmentTerms::LatentOnly.translation());
    assert!(!AlignmentTerms::TranslationOnly.latent());
    assert!(AlignmentTerms::Both.latent() && AlignmentTerms::Both.translation());
}

fn batch() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<bool>)> {
    (2usize..10).prop_flat_map(|b| {
        (
            prop::collection::vec(-3.0f64..3.0, b),
            prop::collection::vec(1u32..6, b),
            prop::collection::vec(any::<bool>(), b),
        )
            .prop_map(|(r, t, mut e)| {
                e[0] = true;
                (r, t.into_iter().map(f64::from).collect(), e)
            })
    })
}

proptest! {
    #[test]
    fn cox_shift_invariant((r, t, e) in batch(), c in -50.0f64..50.0) {
        let shifted: Vec<f64> = r.iter().map(|v| v + c).collect();
        let a = cox(&r, &t, &e).unwrap();
        let b = cox(&shifted, &t, &e).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn cox_decreases_when_earliest_event_risk_rises(
        (r, mut t, e) in batch(),
        bump in 0.01f64..2.0,
    ) {
        t[0] = 0.5;
        let mut raised = r.clone();
        raised[0] += bump;
        prop_assert!(cox(&raised, &t, &e).unwrap() < cox(&r, &t, &e).unwrap());
    }

    #[test]
    fn cox_ignores_subject_order((r, t, e) in batch(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut order: Vec<usize> = (0..r.len()).collect();
        order.shuffle(&mut rng(seed));
        let pr: Vec<f64> = order.iter().map(|&i| r[i]).collect();
        let pt: Vec<f64> = order.iter().map(|&i| t[i]).collect();
        let pe: Vec<bool> = order.iter().map(|&i| e[i]).collect();
        prop_assert!((cox(&r, &t, &e).unwrap() - cox(&pr, &pt, &pe).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn cox_matches_direct_expansion((r, t, e) in batch()) {
        prop_assert!((cox(&r, &t, &e).unwrap() - cox_oracle(&r, &t, &e)).abs() < 1e-10);
    }

    #[test]
    fn kl_is_nonnegative(
        p in prop::collection::vec(-5.0f64..5.0, 1..12),
        seed in any::<u64>(),
    ) {
        let q = randn(&mut rng(seed), &[p.len()]).map(|v| 3.0 * v).into_data();
        let kl = pair(&p, &q, |t, a, b| kl_embedding(t, a, b));
        prop_assert!(kl >= 0.0 && kl.is_finite());
    }
}
