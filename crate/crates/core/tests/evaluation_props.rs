mod common;

use proptest::prelude::*;
use strobe::dataset::{family_disjoint_split, validate_split, Strategy};
use strobe::evaluation::{
    box_stats, run_experiment, run_lofo, weighted_family_accuracy, Confusion, EvalResult, FamilyAccuracy,
    LearnerKind, LearnerOptions,
};
use strobe::synth::SynthConfig;

use common::*;

fn small_confounded() -> strobe::dataset::Corpus {
    corpus_of(&SynthConfig {
        n_families: 12,
        samples_per_family: (4, 60),
        strings_per_app: (10, 40),
        ..SynthConfig::confounded(3)
    })
}

#[test]
fn lofo_weighted_equals_pooled() {
    let corpus = small_confounded();
    for kind in [LearnerKind::Batch, LearnerKind::Online] {
        let s = run_lofo(&corpus, kind, 1, &LearnerOptions::default()).unwrap();
        assert_eq!(s.families.len() + s.skipped.len(), 12);
        let rows: Vec<FamilyAccuracy> = s.families.iter().map(FamilyAccuracy::from).collect();
        let w = weighted_family_accuracy(&rows).unwrap();
        assert!((w - s.pooled.accuracy).abs() < 1e-12, "{w} vs {}", s.pooled.accuracy);
        assert!((w - s.weighted_accuracy).abs() < 1e-12);
    }
}

#[test]
fn family_disjoint_runs_never_overlap() {
    let corpus = small_confounded();
    let summary = run_experiment(&corpus, Strategy::FamilyDisjoint, LearnerKind::Online, 30, 100).unwrap();
    assert_eq!(summary.per_run.len() + summary.failed_runs.len(), 30);
    for run in &summary.per_run {
        let split = family_disjoint_split(&corpus, run.seed).unwrap();
        assert_eq!(split.retries, run.retries);
        let report = validate_split(&corpus, &split).unwrap();
        assert_eq!(report.family_overlap, 0);
        assert_eq!(run.confusion.total(), split.test_ids.len());
    }
    let again = run_experiment(&corpus, Strategy::FamilyDisjoint, LearnerKind::Online, 30, 100).unwrap();
    assert_eq!(summary, again);
}

#[test]
fn metric_identities() {
    let r = EvalResult::from_confusion(Confusion { tp: 1, fp: 1, tn: 7, fn_: 1 });
    assert_eq!((r.precision, r.recall, r.f1), (0.5, 0.5, 0.5));
    assert_eq!(r.accuracy, 0.8);
    let rows = [
        FamilyAccuracy { family: "A".into(), n: 10, accuracy: 1.0 },
        FamilyAccuracy { family: "B".into(), n: 30, accuracy: 0.5 },
    ];
    assert_eq!(weighted_family_accuracy(&rows).unwrap(), 0.625);
}

proptest! {
    #[test]
    fn box_invariants(values in proptest::collection::vec(-1e6f64..1e6, 1..80)) {
        let b = box_stats(&values).unwrap();
        prop_assert!(b.q1 <= b.median && b.median <= b.q3);
        let iqr = b.q3 - b.q1;
        for &v in &values {
            let outside = v < b.q1 - 1.5 * iqr || v > b.q3 + 1.5 * iqr;
            prop_assert_eq!(outside, b.outliers.contains(&v));
            if !outside {
                prop_assert!(b.whisker_lo <= v && v <= b.whisker_hi);
            }
        }
        let want = ref_box(&values);
        prop_assert_eq!(b.outliers, want.outliers);
    }

    #[test]
    fn confusion_metrics_consistent(tp in 0usize..50, fp in 0usize..50, tn in 0usize..50, fn_ in 0usize..50) {
        prop_assume!(tp + fp + tn + fn_ > 0);
        let r = EvalResult::from_confusion(Confusion { tp, fp, tn, fn_ });
        prop_assert_eq!(r.accuracy, (tp + tn) as f64 / (tp + fp + tn + fn_) as f64);
        let p = r.precision;
        let q = r.recall;
        let f = if p + q == 0.0 { 0.0 } else { 2.0 * p * q / (p + q) };
        prop_assert!((r.f1 - f).abs() < 1e-12);
    }
}
