//! Ranking and threshold metrics, and the early-stopping monitor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamVector;

/// F1 reported when precision and recall are both zero.
pub const F1_UNDEFINED: f64 = -1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p == 0.0 && r == 0.0 {
            F1_UNDEFINED
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::Validation("metrics need at least one sample".into()));
    }
    if scores.len() != labels.len() {
        return Err(Error::dim("labels", scores.len().to_string(), labels.len().to_string()));
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::Validation("labels must be 0 or 1".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Validation("scores contain NaN".into()));
    }
    Ok(())
}

/// Predicts positive when `score >= threshold`.
pub fn confusion_at(scores: &[f64], labels: &[u8], threshold: f64) -> Result<Confusion> {
    check_inputs(scores, labels)?;
    let mut c = Confusion {
        tp: 0,
        fp: 0,
        tn: 0,
        fn_: 0,
    };
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Mann-Whitney U via rank sums, ties sharing their average rank.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("AUROC needs both classes".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * idx[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Average precision `Σ (R_i − R_{i−1}) · P_i` over a descending-score sweep,
/// with each group of tied scores treated as a single threshold.
pub fn auprc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    if n_pos == 0 {
        return Err(Error::UndefinedMetric("AUPRC needs at least one positive".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen, mut ap, mut prev_recall) = (0usize, 0usize, 0.0, 0.0);
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        tp += idx[i..=j].iter().filter(|&&k| labels[k] == 1).count();
        seen += j - i + 1;
        let recall = tp as f64 / n_pos as f64;
        ap += (recall - prev_recall) * (tp as f64 / seen as f64);
        prev_recall = recall;
        i = j + 1;
    }
    Ok(ap)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auroc: f64,
    pub auprc: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub threshold: f64,
    pub n: usize,
    pub n_pos: usize,
}

/// All five metrics; ranking metrics are NaN when undefined for the sample.
pub fn evaluate(scores: &[f64], labels: &[u8], threshold: f64) -> Result<MetricsReport> {
    let c = confusion_at(scores, labels, threshold)?;
    let defined = |r: Result<f64>| match r {
        Ok(v) => Ok(v),
        Err(Error::UndefinedMetric(msg)) => {
            log::warn!("{msg}");
            Ok(f64::NAN)
        }
        Err(e) => Err(e),
    };
    Ok(MetricsReport {
        auroc: defined(auroc(scores, labels))?,
        auprc: defined(auprc(scores, labels))?,
        precision: c.precision(),
        recall: c.recall(),
        f1: c.f1(),
        threshold,
        n: scores.len(),
        n_pos: c.tp + c.fn_,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EsMetric {
    Loss,
    F1,
}

impl EsMetric {
    pub fn name(self) -> &'static str {
        match self {
            EsMetric::Loss => "loss",
            EsMetric::F1 => "f1",
        }
    }

    /// Strictly better; equal scores never improve.
    pub fn improves(self, candidate: f64, best: f64) -> bool {
        match self {
            EsMetric::Loss => candidate < best,
            EsMetric::F1 => candidate > best,
        }
    }

    fn worst(self) -> f64 {
        match self {
            EsMetric::Loss => f64::INFINITY,
            EsMetric::F1 => f64::NEG_INFINITY,
        }
    }
}

impl std::fmt::Display for EsMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for EsMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "loss" => Ok(EsMetric::Loss),
            "f1" => Ok(EsMetric::F1),
            _ => Err(Error::Config(format!("es_metric must be `loss` or `f1`, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EsMonitor {
    pub metric: EsMetric,
    pub patience: usize,
    pub best_score: f64,
    pub best_epoch: Option<usize>,
    pub best_params: Option<ParamVector>,
    pub epochs_since_best: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EsDecision {
    Continue,
    Stop { best_epoch: usize, best_params: ParamVector },
}

impl EsMonitor {
    pub fn new(metric: EsMetric, patience: usize) -> Self {
        Self {
            metric,
            patience,
            best_score: metric.worst(),
            best_epoch: None,
            best_params: None,
            epochs_since_best: 0,
        }
    }

    /// Best snapshot so far, or `fallback` when nothing was recorded.
    pub fn best_or(&self, fallback: &ParamVector) -> ParamVector {
        self.best_params.clone().unwrap_or_else(|| fallback.clone())
    }
}

/// Records one epoch. NaN scores never improve.
pub fn es_update(monitor: &mut EsMonitor, epoch: usize, score: f64, params: &ParamVector) -> EsDecision {
    if monitor.best_epoch.is_none() && !score.is_nan() || monitor.metric.improves(score, monitor.best_score) {
        monitor.best_score = score;
        monitor.best_epoch = Some(epoch);
        monitor.best_params = Some(params.clone());
        monitor.epochs_since_best = 0;
        return EsDecision::Continue;
    }
    monitor.epochs_since_best += 1;
    match (&monitor.best_params, monitor.best_epoch) {
        (Some(p), Some(e)) if monitor.epochs_since_best >= monitor.patience => EsDecision::Stop {
            best_epoch: e,
            best_params: p.clone(),
        },
        _ => EsDecision::Continue,
    }
}

/// `Σ (n_k / n) · s_k`
pub fn fl_es_score(scores: &[f64], sizes: &[usize]) -> Result<f64> {
    if scores.len() != sizes.len() || scores.is_empty() {
        return Err(Error::dim("client sizes", scores.len().to_string(), sizes.len().to_string()));
    }
    let n: usize = sizes.iter().sum();
    if n == 0 {
        return Err(Error::Validation("client sizes sum to zero".into()));
    }
    Ok(scores.iter().zip(sizes).map(|(s, &k)| k as f64 / n as f64 * s).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamSpec;

    fn pv(v: f64) -> ParamVector {
        ParamVector::new(
            vec![ParamSpec {
                name: "x".into(),
                rows: 1,
                cols: 1,
            }],
            vec![v],
        )
        .unwrap()
    }

    #[test]
    fn confusion_examples() {
        let c = confusion_at(&[0.9, 0.1], &[1, 0], 0.5).unwrap();
        assert_eq!((c.precision(), c.recall(), c.f1()), (1.0, 1.0, 1.0));
        let c = confusion_at(&[0.1, 0.2, 0.3], &[1, 0, 1], 0.5).unwrap();
        assert_eq!((c.precision(), c.recall(), c.f1()), (0.0, 0.0, F1_UNDEFINED));
        let c = confusion_at(&[0.6, 0.6], &[1, 0], 0.5).unwrap();
        assert_eq!(c.precision(), 0.5);
        assert_eq!(c.recall(), 1.0);
        assert!((c.f1() - 2.0 / 3.0).abs() < 1e-15);
        assert!(confusion_at(&[], &[], 0.5).is_err());
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.3; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
        assert!(matches!(auroc(&[0.1, 0.2], &[1, 1]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn auprc_examples() {
        assert_eq!(auprc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        // worst ranking: positives last, P at recall 1/2 is 1/3, at 1 is 2/4
        let ap = auprc(&[0.9, 0.8, 0.2, 0.1], &[0, 0, 1, 1]).unwrap();
        assert!((ap - (0.5 / 3.0 + 0.5 * 0.5)).abs() < 1e-15);
        assert_eq!(auprc(&[0.5; 4], &[1, 0, 0, 0]).unwrap(), 0.25);
        assert!(auprc(&[0.5, 0.2], &[0, 0]).is_err());
    }

    #[test]
    fn es_patience_counter() {
        let mut m = EsMonitor::new(EsMetric::Loss, 30);
        let mut stop = None;
        for epoch in 0..100 {
            let score = if epoch <= 3 { 1.0 - epoch as f64 * 0.1 } else { 0.7 };
            if let EsDecision::Stop { best_epoch, best_params } = es_update(&mut m, epoch, score, &pv(epoch as f64)) {
                stop = Some((epoch, best_epoch, best_params.values()[0]));
                break;
            }
        }
        assert_eq!(stop, Some((33, 3, 3.0)));
    }

    #[test]
    fn es_never_stops_while_improving() {
        let mut m = EsMonitor::new(EsMetric::F1, 2);
        for epoch in 0..100 {
            assert_eq!(es_update(&mut m, epoch, epoch as f64 / 100.0, &pv(0.0)), EsDecision::Continue);
        }
    }

    #[test]
    fn es_sentinel_loses_to_real_f1() {
        let mut m = EsMonitor::new(EsMetric::F1, 5);
        es_update(&mut m, 0, F1_UNDEFINED, &pv(0.0));
        es_update(&mut m, 1, 0.1, &pv(1.0));
        assert_eq!(m.best_epoch, Some(1));
        es_update(&mut m, 2, 0.1, &pv(2.0));
        assert_eq!(m.best_epoch, Some(1), "ties are not improvements");
    }

    #[test]
    fn fl_score_weighting() {
        assert_eq!(fl_es_score(&[0.4, 0.6], &[5, 5]).unwrap(), 0.5);
        assert_eq!(fl_es_score(&[0.3], &[7]).unwrap(), 0.3);
        assert_eq!(fl_es_score(&[0.0, 1.0], &[1, 3]).unwrap(), 0.75);
    }
}
