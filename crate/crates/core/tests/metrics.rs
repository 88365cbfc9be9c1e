//! Metric and loss checks against exact or high-precision oracles.

mod common;

use common::{fixed, random_labels, random_probs, recall_mean_oracle};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Signed;
use proptest::prelude::*;
use synthdetect::eval::{balanced_accuracy, is_fake, softmax, to_binary, ConfusionMatrix};
use synthdetect::rng::{derive_rng, Draw};
use synthdetect::train::smoothed_ce;

#[test]
fn fixed_point_oracle_self_check() {
    let one = fixed::scale();
    assert!((fixed::to_f64(&fixed::exp(&one)) - std::f64::consts::E).abs() < 1e-15);
    assert!((fixed::to_f64(&fixed::ln(&(&one * 7))) - 7f64.ln()).abs() < 1e-15);
    assert!(fixed::ln(&one).abs() < BigInt::from(10).pow(20));
}

#[test]
fn smoothed_ce_matches_high_precision_oracle() {
    let mut rng = derive_rng(5, "ce");
    for case in 0..100 {
        let k = rng.uniform_usize(2, 10);
        let logits: Vec<f64> = (0..k).map(|_| rng.uniform_f64(-8.0, 8.0)).collect();
        let y = rng.uniform_usize(0, k - 1);
        let eps = if case % 4 == 0 { 0.0 } else { rng.uniform_f64(0.0, 0.5) };
        let got = smoothed_ce(&logits, y, eps).unwrap();
        let want = fixed::smoothed_ce(&logits, y, eps);
        assert!((got - want).abs() <= 1e-6 * want.abs().max(1e-12), "case {case}: {got} vs {want}");
    }
}

#[test]
fn smoothed_ce_frozen_example() {
    // ln(e^2 + 6) - (0.95 * 2 + 0.05 * 2/7), evaluated at 50 digits.
    let logits = [2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    let oracle = fixed::smoothed_ce(&logits, 0, 0.05);
    assert!((oracle - 0.680_151_949_947_604_7).abs() < 1e-15, "{oracle}");
    assert!((smoothed_ce(&logits, 0, 0.05).unwrap() - oracle).abs() < 1e-12);
}

#[test]
fn smoothed_ce_degenerate_cases() {
    for y in 0..7 {
        for eps in [0.0, 0.05, 0.5] {
            let l = smoothed_ce(&[0.3; 7], y, eps).unwrap();
            assert!((l - 7f64.ln()).abs() < 1e-12);
        }
    }
    let logits = [1.5, -0.5, 0.25];
    let plain = -softmax(&logits)[0].ln();
    assert!((smoothed_ce(&logits, 0, 0.0).unwrap() - plain).abs() < 1e-12);
    assert!(smoothed_ce(&[f64::NAN, 0.0], 0, 0.1).is_err());
    assert!(smoothed_ce(&[0.0, 0.0], 2, 0.1).is_err());
}

#[test]
fn balanced_accuracy_equals_rational_oracle() {
    for seed in 0..100 {
        let (truth, pred, n) = random_labels(seed);
        let got = balanced_accuracy(&truth, &pred, n).unwrap();
        let want = recall_mean_oracle(&truth, &pred, n);
        // The result must be the f64 nearest the rational, measured exactly.
        let err = (BigRational::from_float(got).unwrap() - &want).abs();
        for n in [got.next_down(), got.next_up()] {
            assert!((BigRational::from_float(n).unwrap() - &want).abs() >= err, "seed {seed}: {got} vs {want}");
        }
        let cm = ConfusionMatrix::from_pairs(n, &truth, &pred);
        for c in 0..n {
            let row: u64 = (0..n).map(|p| cm.get(c, p)).sum();
            assert_eq!(row, cm.support(c));
        }
    }
}

#[test]
fn balanced_accuracy_examples() {
    let truth: Vec<usize> = (0..100).map(|i| usize::from(i >= 90)).collect();
    assert_eq!(balanced_accuracy(&truth, &[0; 100], 2).unwrap(), 0.5);
    assert_eq!(balanced_accuracy(&truth, &truth, 2).unwrap(), 1.0);
    assert!(balanced_accuracy(&[0, 1], &[0], 2).is_err());
}

#[test]
fn to_binary_complement_and_redistribution() {
    let mut rng = derive_rng(11, "probs");
    for _ in 0..1000 {
        let k = rng.uniform_usize(2, 9);
        let real = rng.uniform_usize(0, k - 1);
        let probs = random_probs(&mut rng, k);
        let p_fake = to_binary(&probs, real).unwrap();
        assert!((p_fake + probs[real] - 1.0).abs() <= 1e-9);

        // Move the non-real mass around; the decision must not change.
        let mut moved = probs.clone();
        let rest: f64 = 1.0 - probs[real];
        let shares = random_probs(&mut rng, k - 1);
        let mut j = 0;
        for (c, p) in moved.iter_mut().enumerate() {
            if c != real {
                *p = rest * shares[j];
                j += 1;
            }
        }
        let moved_fake = to_binary(&moved, real).unwrap();
        assert_eq!(is_fake(moved_fake), is_fake(p_fake));
    }
}

#[test]
fn to_binary_examples_and_errors() {
    assert_eq!(to_binary(&[1.0, 0.0, 0.0], 0).unwrap(), 0.0);
    assert!(is_fake(to_binary(&[0.5, 0.5], 0).unwrap()));
    assert!(!is_fake(to_binary(&[0.51, 0.49], 0).unwrap()));
    assert!(to_binary(&[0.5, 0.6], 0).is_err());
    assert!(to_binary(&[1.2, -0.2], 0).is_err());
    assert!(to_binary(&[0.5, 0.5], 2).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn balanced_accuracy_is_relabel_invariant(seed in any::<u64>()) {
        let (truth, pred, n) = random_labels(seed);
        let mut perm: Vec<usize> = (0..n).collect();
        derive_rng(seed, "perm").shuffle(&mut perm);
        let t2: Vec<usize> = truth.iter().map(|&t| perm[t]).collect();
        let p2: Vec<usize> = pred.iter().map(|&p| perm[p]).collect();
        let a = balanced_accuracy(&truth, &pred, n).unwrap();
        let b = balanced_accuracy(&t2, &p2, n).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn softmax_is_a_distribution(v in proptest::collection::vec(-50.0f64..50.0, 1..12)) {
        let p = softmax(&v);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }
}
