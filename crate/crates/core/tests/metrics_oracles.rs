mod common;

use common::brute_force_ap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seavae::metrics::{pr_curve, ConfusionCounts, EvalReport};

#[test]
fn confusion_unit_cases_are_exact() {
    let c = ConfusionCounts::from_predictions(
        &[true, true, false, false, true],
        &[true, false, true, false, true],
    )
    .unwrap();
    assert_eq!((c.tp, c.fp, c.tn, c.fn_), (2, 1, 1, 1));
    assert_eq!(c.precision(), 2.0 / 3.0);
    assert_eq!(c.recall(), 2.0 / 3.0);
    assert_eq!(c.f1(), 2.0 / 3.0);

    let perfect = ConfusionCounts::from_predictions(&[true, false], &[true, false]).unwrap();
    assert_eq!(
        (perfect.precision(), perfect.recall(), perfect.f1()),
        (1.0, 1.0, 1.0)
    );

    let none_flagged = ConfusionCounts::from_predictions(&[false, false], &[true, false]).unwrap();
    assert_eq!(
        (
            none_flagged.precision(),
            none_flagged.recall(),
            none_flagged.f1()
        ),
        (0.0, 0.0, 0.0)
    );

    let c =
        ConfusionCounts::from_predictions(&[true, true, true, false], &[true, false, false, false])
            .unwrap();
    assert_eq!(c.precision(), 1.0 / 3.0);
    assert_eq!(c.recall(), 1.0);
    assert_eq!(c.f1(), 0.5);

    assert!(ConfusionCounts::from_predictions(&[], &[]).is_err());
    assert!(ConfusionCounts::from_predictions(&[true], &[true, false]).is_err());
}

#[test]
fn ap_matches_brute_force_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for trial in 0..100 {
        let n = rng.random_range(2..200);
        let levels = rng.random_range(2..50);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
        labels[0] = true;
        labels[1] = false;
        // Coarse levels force plenty of tied scores.
        let scores: Vec<f64> = (0..n)
            .map(|_| rng.random_range(0..levels) as f64 / levels as f64)
            .collect();
        let curve = pr_curve(&scores, &labels).unwrap();
        let expected = brute_force_ap(&scores, &labels);
        assert!(
            (curve.average_precision - expected).abs() < 1e-12,
            "trial {trial}: {} vs {expected}",
            curve.average_precision
        );
    }
}

#[test]
fn perfect_scorer_has_unit_ap() {
    let labels = [true, false, true, false, false, true];
    let scores = [0.9, 0.1, 0.8, 0.3, 0.2, 0.7];
    assert_eq!(pr_curve(&scores, &labels).unwrap().average_precision, 1.0);
    let worst = pr_curve(&scores.map(|s| -s), &labels).unwrap();
    assert!(worst.average_precision < 0.6);
}

#[test]
fn pr_curve_rejects_degenerate_inputs() {
    assert!(pr_curve(&[0.1, 0.2], &[false, false]).is_err());
    assert!(pr_curve(&[0.1, 0.2], &[true, true]).is_err());
    assert!(pr_curve(&[0.1, f64::NAN], &[true, false]).is_err());
    assert!(pr_curve(&[0.1], &[true, false]).is_err());
}

#[test]
fn eval_report_serializes_curve_and_config() {
    let r = EvalReport::new(
        &[true, false, true],
        &[0.9, 0.2, 0.6],
        &[true, false, false],
        serde_json::json!({ "mode": "joint" }),
    )
    .unwrap();
    assert_eq!(r.average_precision, Some(1.0));
    assert_eq!(r.precision, 0.5);
    let v = serde_json::to_value(&r).unwrap();
    assert_eq!(v["config"]["mode"], "joint");
    assert!(v["pr_curve"].as_array().unwrap().len() >= 2);
}
