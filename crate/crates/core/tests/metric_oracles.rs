//! AUROC/AUPR against brute-force definitions on random, tie-heavy inputs.

mod support;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use geoscore::metrics::{aupr, auroc, dsc, summarize, LabeledScores};
use geoscore::AnomalyMask;
use support::oracles::{instance, worst_deviation};

#[test]
fn auroc_and_aupr_match_brute_force_on_1000_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (worst_roc, worst_pr) = worst_deviation(&mut rng, 1000);
    println!("max |auroc - oracle| {worst_roc:e}, max |aupr - oracle| {worst_pr:e}");
    assert!(worst_roc <= 1e-12, "{worst_roc}");
    assert!(worst_pr <= 1e-12, "{worst_pr}");
}

#[test]
fn fully_tied_scores_give_half_auroc_and_prevalence_aupr() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let (_, labels) = instance(&mut rng, None);
        let p = labels.iter().filter(|&&l| l).count() as f64 / labels.len() as f64;
        let ls = LabeledScores::new(vec![0.25; labels.len()], labels).unwrap();
        assert_eq!(auroc(&ls).unwrap(), 0.5);
        assert!((aupr(&ls).unwrap() - p).abs() < 1e-12);
    }
}

#[test]
fn dsc_examples_are_exact() {
    let m = |bits: &[u8]| AnomalyMask::new(2, bits.iter().map(|&b| b != 0).collect()).unwrap();
    assert_eq!(dsc(&m(&[1, 1, 0, 0]), &m(&[1, 1, 0, 0])).unwrap(), 1.0);
    assert_eq!(dsc(&m(&[1, 1, 0, 0]), &m(&[0, 0, 1, 1])).unwrap(), 0.0);
    assert_eq!(dsc(&m(&[1, 1, 1, 1]), &m(&[1, 1, 0, 0])).unwrap(), 4.0 / 6.0);
    assert_eq!(dsc(&m(&[0, 0, 0, 0]), &m(&[0, 0, 0, 0])).unwrap(), 1.0);
}

fn labeled() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..60).prop_flat_map(|n| {
        (
            proptest::collection::vec(prop_oneof![0.0f64..1.0, Just(0.5)], n),
            proptest::collection::vec(any::<bool>(), n),
        )
            .prop_map(|(s, mut l)| {
                l[0] = true;
                l[1] = false;
                (s, l)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig {
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn auroc_is_invariant_under_monotone_maps((s, l) in labeled()) {
        let base = auroc(&LabeledScores::new(s.clone(), l.clone()).unwrap()).unwrap();
        let mapped: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() - 7.0).collect();
        let other = auroc(&LabeledScores::new(mapped, l).unwrap()).unwrap();
        prop_assert!((base - other).abs() < 1e-12);
    }

    #[test]
    fn negating_scores_reflects_auroc((s, l) in labeled()) {
        let a = auroc(&LabeledScores::new(s.clone(), l.clone()).unwrap()).unwrap();
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        let b = auroc(&LabeledScores::new(neg, l).unwrap()).unwrap();
        prop_assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn metrics_lie_in_the_unit_interval((s, l) in labeled()) {
        let ls = LabeledScores::new(s, l).unwrap();
        let a = auroc(&ls).unwrap();
        let p = aupr(&ls).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(p > 0.0 && p <= 1.0 + 1e-12);
    }

    #[test]
    fn dsc_is_symmetric_and_bounded(bits in proptest::collection::vec(any::<(bool, bool)>(), 64)) {
        let a = AnomalyMask::new(8, bits.iter().map(|b| b.0).collect()).unwrap();
        let b = AnomalyMask::new(8, bits.iter().map(|b| b.1).collect()).unwrap();
        let d = dsc(&a, &b).unwrap();
        prop_assert_eq!(d, dsc(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(dsc(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn summary_std_is_population_std(v in proptest::collection::vec(-10.0f64..10.0, 1..50)) {
        let (m, s) = summarize(&v).unwrap();
        let n = v.len() as f64;
        let direct = (v.iter().map(|x| x * x).sum::<f64>() / n - m * m).max(0.0).sqrt();
        prop_assert!((s - direct).abs() < 1e-9);
    }
}
