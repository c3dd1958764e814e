//! Algebraic properties of the evaluation metrics and early stopping.

use icufed::metrics::{auprc, auroc, confusion_at, es_update, EsMetric, EsMonitor};
use icufed::nn::{ParamSpec, ParamVector};
use proptest::prelude::*;

fn scored_sample() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..80).prop_flat_map(|n| {
        (
            prop::collection::vec(prop_oneof![0.0f64..1.0, (0u8..5).prop_map(|v| f64::from(v) / 4.0)], n),
            prop::collection::vec(0u8..2, n),
        )
    })
}

fn has_both(y: &[u8]) -> bool {
    y.contains(&0) && y.contains(&1)
}

proptest! {
    #[test]
    fn ranking_metrics_ignore_monotone_transforms((s, y) in scored_sample()) {
        prop_assume!(has_both(&y));
        let t: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() - 7.0).collect();
        prop_assert!((auroc(&s, &y).unwrap() - auroc(&t, &y).unwrap()).abs() < 1e-12);
        prop_assert!((auprc(&s, &y).unwrap() - auprc(&t, &y).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn auroc_of_negated_scores_is_complement((s, y) in scored_sample()) {
        prop_assume!(has_both(&y));
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        prop_assert!((auroc(&s, &y).unwrap() + auroc(&neg, &y).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn metrics_stay_in_unit_interval((s, y) in scored_sample()) {
        prop_assume!(has_both(&y));
        let ap = auprc(&s, &y).unwrap();
        prop_assert!(ap > 0.0 && ap <= 1.0 + 1e-12);
        let roc = auroc(&s, &y).unwrap();
        prop_assert!((0.0..=1.0).contains(&roc));
    }

    #[test]
    fn confusion_counts_cover_every_sample((s, y) in scored_sample(), thr in 0.0f64..1.0) {
        let c = confusion_at(&s, &y, thr).unwrap();
        prop_assert_eq!(c.tp + c.fp + c.tn + c.fn_, s.len());
        prop_assert_eq!(c.tp + c.fn_, y.iter().filter(|&&v| v == 1).count());
        prop_assert_eq!(c.tp + c.fp, s.iter().filter(|&&v| v >= thr).count());
    }

    #[test]
    fn early_stopping_keeps_the_best_score(
        scores in prop::collection::vec(prop_oneof![0.0f64..2.0, Just(-1.0)], 1..60),
        patience in 1usize..10,
        f1 in any::<bool>(),
    ) {
        let metric = if f1 { EsMetric::F1 } else { EsMetric::Loss };
        let mut monitor = EsMonitor::new(metric, patience);
        let layout = vec![ParamSpec::new("w", 1, 1)];
        let mut best_seen: Option<(usize, f64)> = None;
        for (epoch, &score) in scores.iter().enumerate() {
            let params = ParamVector::new(layout.clone(), vec![epoch as f64]).unwrap();
            let better = match best_seen {
                None => true,
                Some((_, b)) => if f1 { score > b } else { score < b },
            };
            if better {
                best_seen = Some((epoch, score));
            }
            let decision = es_update(&mut monitor, epoch, score, &params);
            let (best_epoch, best) = best_seen.unwrap();
            prop_assert_eq!(monitor.best_epoch, Some(best_epoch));
            prop_assert_eq!(monitor.best_score, best);
            prop_assert_eq!(monitor.best_params.as_ref().unwrap().values()[0], best_epoch as f64);
            let should_stop = epoch - best_epoch >= patience;
            prop_assert_eq!(decision != icufed::metrics::EsDecision::Continue, should_stop);
            if should_stop {
                break;
            }
        }
    }
}
