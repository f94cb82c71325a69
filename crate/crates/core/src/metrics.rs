//! Confusion-matrix metrics with diagnostic-as-positive convention, the
//! thresholded decision rule, ROC sweeps and trapezoidal AUC.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Label;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("validation error: {0}")]
    Validation(String),
}

/// A scored frame: probability of being diagnostic plus ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredItem {
    pub score: f64,
    pub truth: Label,
}

impl ScoredItem {
    pub fn new(score: f64, truth: Label) -> Result<Self, MetricsError> {
        if !(0.0..=1.0).contains(&score) {
            return Err(MetricsError::Validation(format!(
                "score {score} outside [0, 1]"
            )));
        }
        Ok(Self { score, truth })
    }
}

/// Positive = diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Undefined ratios (zero denominators) stay `None` instead of turning
/// into a silent 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Decision threshold that produced this point; NaN on averaged curves.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// Ordered from (0, 0) to (1, 1), both coordinates non-decreasing.
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// Predict diagnostic iff `score >= threshold` and count against truth.
pub fn classify_at_threshold(
    items: &[ScoredItem],
    threshold: f64,
) -> Result<ConfusionCounts, MetricsError> {
    if items.is_empty() {
        return Err(MetricsError::Validation(
            "cannot classify an empty item list".into(),
        ));
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(MetricsError::Validation(format!(
            "threshold {threshold} outside [0, 1]"
        )));
    }
    let mut counts = ConfusionCounts { tp: 0, fp: 0, tn: 0, fn_: 0 };
    for item in items {
        let predicted_diag = item.score >= threshold;
        match (predicted_diag, item.truth.is_diagnostic()) {
            (true, true) => counts.tp += 1,
            (true, false) => counts.fp += 1,
            (false, false) => counts.tn += 1,
            (false, true) => counts.fn_ += 1,
        }
    }
    Ok(counts)
}

/// accuracy = (TP+TN)/total, sensitivity = TP/(TP+FN),
/// specificity = TN/(TN+FP).
pub fn metrics(counts: &ConfusionCounts) -> MetricsSummary {
    let ratio = |num: u64, den: u64| {
        if den == 0 {
            None
        } else {
            Some(num as f64 / den as f64)
        }
    };
    MetricsSummary {
        accuracy: ratio(counts.tp + counts.tn, counts.total()),
        sensitivity: ratio(counts.tp, counts.tp + counts.fn_),
        specificity: ratio(counts.tn, counts.tn + counts.fp),
    }
}

/// Sweep a threshold over every distinct score (plus sentinels above the
/// max and below the min) and integrate the trapezoid. The resulting AUC
/// equals the Mann-Whitney pair statistic with ties counted one half.
pub fn roc_curve(items: &[ScoredItem]) -> Result<RocCurve, MetricsError> {
    let positives = items.iter().filter(|i| i.truth.is_diagnostic()).count() as f64;
    let negatives = items.len() as f64 - positives;
    if positives == 0.0 || negatives == 0.0 {
        return Err(MetricsError::Validation(format!(
            "ROC needs both classes, got {positives} positives and {negatives} negatives"
        )));
    }

    let mut sorted: Vec<&ScoredItem> = items.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));

    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0, threshold: f64::INFINITY }];
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut i = 0;
    while i < sorted.len() {
        let threshold = sorted[i].score;
        // Consume the whole tie group at this threshold.
        while i < sorted.len() && sorted[i].score == threshold {
            if sorted[i].truth.is_diagnostic() {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / negatives,
            tpr: tp as f64 / positives,
            threshold,
        });
    }
    points.push(RocPoint { fpr: 1.0, tpr: 1.0, threshold: f64::NEG_INFINITY });

    let auc = trapezoid_area(&points);
    Ok(RocCurve { points, auc })
}

fn trapezoid_area(points: &[RocPoint]) -> f64 {
    let mut auc = 0.0f64;
    for pair in points.windows(2) {
        auc += (pair[1].fpr - pair[0].fpr) * (pair[0].tpr + pair[1].tpr) / 2.0;
    }
    auc
}

/// Number of interior grid points used by [`mean_roc`] (0..=1 inclusive).
pub const MEAN_ROC_GRID: usize = 1001;

/// Vertical averaging: TPR averaged at a fixed grid of FPR points, with
/// linear interpolation within each curve. The mean AUC is the mean of the
/// fold AUCs, matching how per-fold tables are averaged.
pub fn mean_roc(curves: &[RocCurve]) -> Result<RocCurve, MetricsError> {
    if curves.is_empty() {
        return Err(MetricsError::Validation("mean of zero ROC curves".into()));
    }
    let mut points = Vec::with_capacity(MEAN_ROC_GRID);
    for g in 0..MEAN_ROC_GRID {
        let fpr = g as f64 / (MEAN_ROC_GRID - 1) as f64;
        let mut tpr = 0.0f64;
        for curve in curves {
            tpr += interpolate_tpr(curve, fpr);
        }
        points.push(RocPoint {
            fpr,
            tpr: tpr / curves.len() as f64,
            threshold: f64::NAN,
        });
    }
    let auc = curves.iter().map(|c| c.auc).sum::<f64>() / curves.len() as f64;
    Ok(RocCurve { points, auc })
}

/// TPR of a curve at the given FPR: the upper envelope at vertical jumps,
/// linear interpolation between distinct FPR values.
fn interpolate_tpr(curve: &RocCurve, fpr: f64) -> f64 {
    // Compress to (distinct fpr, max tpr), preserving order.
    let mut prev_fpr = f64::NAN;
    let mut nodes: Vec<(f64, f64)> = Vec::with_capacity(curve.points.len());
    for p in &curve.points {
        if p.fpr == prev_fpr {
            let last = nodes.last_mut().expect("node exists for repeated fpr");
            last.1 = last.1.max(p.tpr);
        } else {
            nodes.push((p.fpr, p.tpr));
            prev_fpr = p.fpr;
        }
    }
    if fpr <= nodes[0].0 {
        return nodes[0].1;
    }
    for pair in nodes.windows(2) {
        let (f0, t0) = pair[0];
        let (f1, t1) = pair[1];
        if fpr <= f1 {
            if f1 == f0 {
                return t1;
            }
            return t0 + (t1 - t0) * (fpr - f0) / (f1 - f0);
        }
    }
    nodes.last().expect("curve has points").1
}

/// Threshold (drawn from the distinct scores plus a sentinel) that
/// maximizes accuracy; ties go to the lowest threshold.
pub fn best_accuracy_threshold(items: &[ScoredItem]) -> Result<f64, MetricsError> {
    if items.is_empty() {
        return Err(MetricsError::Validation("empty item list".into()));
    }
    let mut candidates: Vec<f64> = items.iter().map(|i| i.score).collect();
    candidates.push(0.0);
    candidates.push(1.0);
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let mut best = (0.0f64, -1.0f64);
    for &threshold in &candidates {
        let counts = classify_at_threshold(items, threshold)?;
        let accuracy = (counts.tp + counts.tn) as f64 / counts.total() as f64;
        if accuracy > best.1 {
            best = (threshold, accuracy);
        }
    }
    Ok(best.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(score: f64, diagnostic: bool) -> ScoredItem {
        ScoredItem {
            score,
            truth: if diagnostic { Label::Diagnostic } else { Label::Nondiagnostic },
        }
    }

    /// Fraction of (positive, negative) pairs ranked correctly, ties = 1/2.
    fn mann_whitney(items: &[ScoredItem]) -> f64 {
        let pos: Vec<f64> = items.iter().filter(|i| i.truth.is_diagnostic()).map(|i| i.score).collect();
        let neg: Vec<f64> = items.iter().filter(|i| !i.truth.is_diagnostic()).map(|i| i.score).collect();
        let mut wins = 0.0f64;
        for &p in &pos {
            for &n in &neg {
                if p > n {
                    wins += 1.0;
                } else if p == n {
                    wins += 0.5;
                }
            }
        }
        wins / (pos.len() as f64 * neg.len() as f64)
    }

    #[test]
    fn threshold_zero_flags_everything_diagnostic() {
        let items = vec![item(0.0, true), item(0.3, false), item(0.9, true)];
        let counts = classify_at_threshold(&items, 0.0).unwrap();
        assert_eq!(counts, ConfusionCounts { tp: 2, fp: 1, tn: 0, fn_: 0 });
        let m = metrics(&counts);
        assert_eq!(m.sensitivity, Some(1.0));
        assert_eq!(m.specificity, Some(0.0));
    }

    #[test]
    fn lowering_threshold_never_decreases_tp_or_fp() {
        let items: Vec<ScoredItem> = (0..60)
            .map(|i| item((i as f64 * 7.0 % 13.0) / 13.0, i % 3 == 0))
            .collect();
        let mut prev_tp = 0;
        let mut prev_fp = 0;
        let mut t = 1.0;
        while t >= 0.0 {
            let counts = classify_at_threshold(&items, t).unwrap();
            assert!(counts.tp >= prev_tp && counts.fp >= prev_fp);
            prev_tp = counts.tp;
            prev_fp = counts.fp;
            t -= 0.05;
        }
    }

    #[test]
    fn all_correct_means_unit_accuracy() {
        let m = metrics(&ConfusionCounts { tp: 7, fp: 0, tn: 5, fn_: 0 });
        assert_eq!(m.accuracy, Some(1.0));
        assert_eq!(m.sensitivity, Some(1.0));
        assert_eq!(m.specificity, Some(1.0));
    }

    #[test]
    fn clinical_scale_counts_reproduce_the_mean_row() {
        let counts = ConfusionCounts { tp: 9071, fn_: 929, tn: 9086, fp: 914 };
        let m = metrics(&counts);
        assert!((m.sensitivity.unwrap() - 0.9071).abs() < 1e-12);
        assert!((m.specificity.unwrap() - 0.9086).abs() < 1e-12);
        assert!((m.accuracy.unwrap() - 0.90785).abs() < 1e-12);
    }

    #[test]
    fn degenerate_denominators_stay_undefined() {
        let counts = ConfusionCounts { tp: 0, fn_: 0, tn: 5, fp: 3 };
        let m = metrics(&counts);
        assert_eq!(m.sensitivity, None);
        assert!(m.specificity.is_some());
        let empty = classify_at_threshold(&[], 0.5);
        assert!(empty.is_err());
    }

    #[test]
    fn perfect_separation_and_inversion() {
        let perfect = vec![item(0.9, true), item(0.8, true), item(0.1, false), item(0.2, false)];
        assert_eq!(roc_curve(&perfect).unwrap().auc, 1.0);

        let inverted = vec![item(0.4, true), item(0.6, false)];
        assert_eq!(roc_curve(&inverted).unwrap().auc, 0.0);
    }

    #[test]
    fn roc_endpoints_and_monotonicity() {
        let items: Vec<ScoredItem> = (0..37)
            .map(|i| item(((i * 29) % 17) as f64 / 16.0, i % 2 == 0))
            .collect();
        let curve = roc_curve(&items).unwrap();
        let first = curve.points.first().unwrap();
        let last = curve.points.last().unwrap();
        assert_eq!((first.fpr, first.tpr), (0.0, 0.0));
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        for pair in curve.points.windows(2) {
            assert!(pair[1].fpr >= pair[0].fpr && pair[1].tpr >= pair[0].tpr);
        }
        assert!((0.0..=1.0).contains(&curve.auc));
    }

    #[test]
    fn trapezoid_equals_mann_whitney_with_ties() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..50 {
            let n = rng.gen_range(5..120);
            let items: Vec<ScoredItem> = (0..n)
                .map(|_| {
                    // Coarse grid forces plenty of tied scores.
                    let score = (rng.gen_range(0..8) as f64) / 7.0;
                    item(score, rng.gen_bool(0.5))
                })
                .collect();
            let pos = items.iter().filter(|i| i.truth.is_diagnostic()).count();
            if pos == 0 || pos == items.len() {
                continue;
            }
            let curve = roc_curve(&items).unwrap();
            assert!((curve.auc - mann_whitney(&items)).abs() < 1e-12);
        }
    }

    #[test]
    fn single_class_input_is_rejected() {
        let items = vec![item(0.5, true), item(0.6, true)];
        assert!(roc_curve(&items).is_err());
    }

    #[test]
    fn score_flip_mirrors_auc_without_ties() {
        let items: Vec<ScoredItem> = (0..20)
            .map(|i| item((i as f64 + 0.5) / 21.0, i % 3 != 0))
            .collect();
        let auc = roc_curve(&items).unwrap().auc;
        let flipped: Vec<ScoredItem> = items
            .iter()
            .map(|i| ScoredItem { score: 1.0 - i.score, truth: i.truth })
            .collect();
        let flipped_auc = roc_curve(&flipped).unwrap().auc;
        assert!((auc + flipped_auc - 1.0).abs() < 1e-12);
    }

    #[test]
    fn auc_is_rank_invariant() {
        let items: Vec<ScoredItem> = (0..25)
            .map(|i| item(((i * 13) % 25) as f64 / 25.0, i % 4 == 0))
            .collect();
        let auc = roc_curve(&items).unwrap().auc;
        // Strictly increasing transform: x -> x^3 * 0.5 + 0.4 * x
        let transformed: Vec<ScoredItem> = items
            .iter()
            .map(|i| ScoredItem {
                score: (i.score.powi(3) * 0.5 + 0.4 * i.score) / 0.9,
                truth: i.truth,
            })
            .collect();
        assert!((roc_curve(&transformed).unwrap().auc - auc).abs() < 1e-12);
    }

    #[test]
    fn mean_of_one_curve_is_that_curve_on_the_grid() {
        let items = vec![
            item(0.9, true),
            item(0.7, true),
            item(0.6, false),
            item(0.3, true),
            item(0.2, false),
        ];
        let curve = roc_curve(&items).unwrap();
        let mean = mean_roc(std::slice::from_ref(&curve)).unwrap();
        assert_eq!(mean.auc, curve.auc);
        for p in &mean.points {
            assert!((p.tpr - interpolate_tpr(&curve, p.fpr)).abs() < 1e-15);
        }
        // Averaging a gridded curve with itself is the identity.
        let twice = mean_roc(&[mean.clone(), mean.clone()]).unwrap();
        for (a, b) in twice.points.iter().zip(&mean.points) {
            assert_eq!(a.tpr, b.tpr);
        }
    }

    #[test]
    fn mean_auc_matches_published_rounding() {
        // Fold AUCs 0.9607, 0.9583, 0.9584, 0.9556 average to 0.9583
        // at four decimal places.
        let folds: Vec<RocCurve> = [0.9607, 0.9583, 0.9584, 0.9556]
            .iter()
            .map(|&auc| RocCurve {
                points: vec![
                    RocPoint { fpr: 0.0, tpr: 0.0, threshold: f64::INFINITY },
                    RocPoint { fpr: 1.0, tpr: 1.0, threshold: f64::NEG_INFINITY },
                ],
                auc,
            })
            .collect();
        let mean = mean_roc(&folds).unwrap();
        assert!((mean.auc - 0.9583).abs() <= 5e-5);
    }

    #[test]
    fn best_accuracy_threshold_is_exhaustive() {
        let items = vec![
            item(0.9, true),
            item(0.8, true),
            item(0.75, false),
            item(0.7, true),
            item(0.2, false),
            item(0.1, false),
        ];
        let t = best_accuracy_threshold(&items).unwrap();
        let counts = classify_at_threshold(&items, t).unwrap();
        assert_eq!(counts.tp + counts.tn, 5); // best achievable here
    }
}
