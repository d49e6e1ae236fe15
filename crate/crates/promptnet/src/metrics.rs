//! Binary classification metrics and multi-seed aggregation.
//!
//! Scores are probabilities of the positive class (the HGG analog, class 1).
//! `roc_auc` uses the rank-sum (Mann-Whitney) form with average ranks for
//! ties; `pr_auc` is average precision with tied scores handled by grouping.
//! Zero-denominator confusion metrics return an explicit undefined marker
//! instead of a silent zero so aggregates cannot be inflated.

use std::fmt;

/// Scores plus ground-truth labels for one evaluation.
#[derive(Clone, Debug)]
pub struct ScoredSet {
    scores: Vec<f64>,
    labels: Vec<u8>,
}

/// Errors raised by metric computations.
#[derive(Clone, Debug, PartialEq)]
pub enum MetricError {
    LengthMismatch { scores: usize, labels: usize },
    BadLabel { index: usize, value: u8 },
    /// AUC-type metrics need at least one sample of the named class.
    MissingClass { class: u8 },
    /// Aggregation requires at least two reports with one config digest.
    TooFewReports { got: usize },
    MixedConfigs { left: String, right: String },
}

impl fmt::Display for MetricError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricError::LengthMismatch { scores, labels } => {
                write!(f, "{scores} scores but {labels} labels")
            }
            MetricError::BadLabel { index, value } => {
                write!(f, "label at {index} must be 0 or 1, got {value}")
            }
            MetricError::MissingClass { class } => {
                write!(f, "metric undefined: no samples of class {class}")
            }
            MetricError::TooFewReports { got } => {
                write!(f, "aggregation needs at least 2 reports, got {got}")
            }
            MetricError::MixedConfigs { left, right } => {
                write!(f, "cannot aggregate reports from different configs ({left} vs {right})")
            }
        }
    }
}

impl std::error::Error for MetricError {}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self, MetricError> {
        if scores.len() != labels.len() {
            return Err(MetricError::LengthMismatch {
                scores: scores.len(),
                labels: labels.len(),
            });
        }
        for (index, &value) in labels.iter().enumerate() {
            if value > 1 {
                return Err(MetricError::BadLabel { index, value });
            }
        }
        Ok(ScoredSet { scores, labels })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }
}

/// Area under the ROC curve as the Mann-Whitney statistic
/// P(score_pos > score_neg) + 0.5 * P(tie), computed from average ranks.
pub fn roc_auc(set: &ScoredSet) -> Result<f64, MetricError> {
    let n_pos = set.positives();
    let n_neg = set.len() - n_pos;
    if n_pos == 0 {
        return Err(MetricError::MissingClass { class: 1 });
    }
    if n_neg == 0 {
        return Err(MetricError::MissingClass { class: 0 });
    }

    let mut order: Vec<usize> = (0..set.len()).collect();
    order.sort_by(|&a, &b| set.scores[a].partial_cmp(&set.scores[b]).expect("finite scores"));

    // Average ranks over tie groups, then the rank-sum statistic.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && set.scores[order[j + 1]] == set.scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share the average rank.
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if set.labels[idx] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let n_pos_f = n_pos as f64;
    let n_neg_f = n_neg as f64;
    Ok((rank_sum_pos - n_pos_f * (n_pos_f + 1.0) / 2.0) / (n_pos_f * n_neg_f))
}

/// Area under the precision-recall curve by the average-precision rule:
/// positives are ranked by descending score and each contributes the
/// precision at its rank, with tied scores treated as arriving together.
pub fn pr_auc(set: &ScoredSet) -> Result<f64, MetricError> {
    let n_pos = set.positives();
    if n_pos == 0 {
        return Err(MetricError::MissingClass { class: 1 });
    }
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.sort_by(|&a, &b| set.scores[b].partial_cmp(&set.scores[a]).expect("finite scores"));

    let mut sum_precision = 0.0;
    let mut cum_tp = 0usize;
    let mut cum_fp = 0usize;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && set.scores[order[j + 1]] == set.scores[order[i]] {
            j += 1;
        }
        let mut group_tp = 0usize;
        for &idx in &order[i..=j] {
            if set.labels[idx] == 1 {
                group_tp += 1;
            }
        }
        let group_fp = (j - i + 1) - group_tp;
        cum_tp += group_tp;
        cum_fp += group_fp;
        let precision = cum_tp as f64 / (cum_tp + cum_fp) as f64;
        sum_precision += group_tp as f64 * precision;
        i = j + 1;
    }
    Ok(sum_precision / n_pos as f64)
}

/// A metric value that may be undefined (zero denominator).
pub type MetricValue = Option<f64>;

/// Accuracy, precision and sensitivity at a decision threshold.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConfusionMetrics {
    pub accuracy: f64,
    /// TP / (TP + FP); undefined when nothing is predicted positive.
    pub precision: MetricValue,
    /// TP / (TP + FN); undefined when there are no positives.
    pub sensitivity: MetricValue,
}

/// Confusion metrics with predictions `score >= threshold`.
pub fn confusion_metrics(set: &ScoredSet, threshold: f64) -> ConfusionMetrics {
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (score, &label) in set.scores.iter().zip(&set.labels) {
        let predicted = *score >= threshold;
        match (predicted, label == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let n = set.len() as f64;
    ConfusionMetrics {
        accuracy: (tp + tn) as f64 / n,
        precision: ratio(tp, tp + fp),
        sensitivity: ratio(tp, tp + fn_),
    }
}

fn ratio(num: usize, denom: usize) -> MetricValue {
    if denom == 0 {
        None
    } else {
        Some(num as f64 / denom as f64)
    }
}

/// Default decision threshold for confusion metrics.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Per-run metric record.
#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub auc: f64,
    pub prc: f64,
    pub accuracy: f64,
    pub precision: MetricValue,
    pub sensitivity: MetricValue,
    pub seed: u64,
    pub config_digest: String,
}

impl RunReport {
    /// Computes all metrics of one scored evaluation.
    pub fn from_scores(
        set: &ScoredSet,
        seed: u64,
        config_digest: &str,
    ) -> Result<Self, MetricError> {
        let auc = roc_auc(set)?;
        let prc = pr_auc(set)?;
        let c = confusion_metrics(set, DEFAULT_THRESHOLD);
        Ok(RunReport {
            auc,
            prc,
            accuracy: c.accuracy,
            precision: c.precision,
            sensitivity: c.sensitivity,
            seed,
            config_digest: config_digest.to_string(),
        })
    }

    /// CSV header matching [`RunReport::csv_row`].
    pub fn csv_header() -> &'static str {
        "seed,auc,prc,accuracy,precision,sensitivity,config_digest"
    }

    /// One CSV row; undefined metrics render as `undef`.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{},{},{}",
            self.seed,
            self.auc,
            self.prc,
            self.accuracy,
            fmt_value(self.precision),
            fmt_value(self.sensitivity),
            self.config_digest
        )
    }
}

fn fmt_value(v: MetricValue) -> String {
    match v {
        Some(x) => format!("{x:.6}"),
        None => "undef".to_string(),
    }
}

/// Mean and population standard deviation of one metric over seeds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Renders in the table style `0.9451±0.0080`.
    pub fn render(&self) -> String {
        format!("{:.4}\u{b1}{:.4}", self.mean, self.std)
    }
}

/// Aggregate of [`RunReport`]s across seeds. A metric aggregates to `None`
/// when it was undefined in any contributing run.
#[derive(Clone, Debug)]
pub struct AggregateReport {
    pub auc: MeanStd,
    pub prc: MeanStd,
    pub accuracy: MeanStd,
    pub precision: Option<MeanStd>,
    pub sensitivity: Option<MeanStd>,
    pub n_runs: usize,
    pub config_digest: String,
}

impl AggregateReport {
    pub fn render_precision(&self) -> String {
        self.precision.map_or_else(|| "undef".to_string(), |m| m.render())
    }

    pub fn render_sensitivity(&self) -> String {
        self.sensitivity.map_or_else(|| "undef".to_string(), |m| m.render())
    }
}

/// Per-metric mean and population standard deviation over >= 2 runs of one
/// configuration.
pub fn aggregate(reports: &[RunReport]) -> Result<AggregateReport, MetricError> {
    if reports.len() < 2 {
        return Err(MetricError::TooFewReports { got: reports.len() });
    }
    let digest = &reports[0].config_digest;
    for r in reports {
        if &r.config_digest != digest {
            return Err(MetricError::MixedConfigs {
                left: digest.clone(),
                right: r.config_digest.clone(),
            });
        }
    }
    let collect = |f: &dyn Fn(&RunReport) -> f64| -> MeanStd {
        mean_std(&reports.iter().map(f).collect::<Vec<_>>())
    };
    let collect_opt = |f: &dyn Fn(&RunReport) -> MetricValue| -> Option<MeanStd> {
        let values: Option<Vec<f64>> = reports.iter().map(f).collect();
        values.map(|v| mean_std(&v))
    };
    Ok(AggregateReport {
        auc: collect(&|r| r.auc),
        prc: collect(&|r| r.prc),
        accuracy: collect(&|r| r.accuracy),
        precision: collect_opt(&|r| r.precision),
        sensitivity: collect_opt(&|r| r.sensitivity),
        n_runs: reports.len(),
        config_digest: digest.clone(),
    })
}

fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    MeanStd { mean, std: var.sqrt() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// O(n^2) pairwise definition of the ROC area.
    fn pairwise_auc(set: &ScoredSet) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for i in 0..set.len() {
            for j in 0..set.len() {
                if set.labels[i] == 1 && set.labels[j] == 0 {
                    pairs += 1.0;
                    if set.scores[i] > set.scores[j] {
                        wins += 1.0;
                    } else if set.scores[i] == set.scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        wins / pairs
    }

    /// Exhaustive threshold sweep for the PR area: precision/recall at every
    /// distinct score, rectangles against recall increments.
    fn threshold_sweep_pr(set: &ScoredSet) -> f64 {
        let mut thresholds: Vec<f64> = set.scores.to_vec();
        thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
        thresholds.dedup();
        let n_pos = set.positives() as f64;
        let mut area = 0.0;
        let mut prev_recall = 0.0;
        for t in thresholds {
            let mut tp = 0usize;
            let mut fp = 0usize;
            for (s, &l) in set.scores.iter().zip(set.labels()) {
                if *s >= t {
                    if l == 1 {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                }
            }
            let recall = tp as f64 / n_pos;
            let precision = tp as f64 / (tp + fp) as f64;
            area += (recall - prev_recall) * precision;
            prev_recall = recall;
        }
        area
    }

    fn random_set(rng: &mut ChaCha8Rng, n: usize, with_ties: bool) -> ScoredSet {
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                if with_ties {
                    // Coarse grid forces tie groups.
                    (rng.gen_range(0..10) as f64) / 10.0
                } else {
                    rng.gen_range(0.0..1.0)
                }
            })
            .collect();
        let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.4))).collect();
        ScoredSet::new(scores, labels).unwrap()
    }

    #[test]
    fn roc_auc_separated_and_tied() {
        let set = ScoredSet::new(vec![0.9, 0.8, 0.2, 0.1], vec![1, 1, 0, 0]).unwrap();
        assert_eq!(roc_auc(&set).unwrap(), 1.0);
        let set = ScoredSet::new(vec![0.5; 6], vec![1, 0, 1, 0, 1, 0]).unwrap();
        assert_eq!(roc_auc(&set).unwrap(), 0.5);
    }

    #[test]
    fn roc_auc_single_class_is_an_error() {
        let set = ScoredSet::new(vec![0.1, 0.9], vec![1, 1]).unwrap();
        assert_eq!(roc_auc(&set).unwrap_err(), MetricError::MissingClass { class: 0 });
    }

    #[test]
    fn roc_auc_matches_pairwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for case in 0..20 {
            let set = random_set(&mut rng, 50, case % 2 == 0);
            if set.positives() == 0 || set.positives() == set.len() {
                continue;
            }
            let fast = roc_auc(&set).unwrap();
            let slow = pairwise_auc(&set);
            assert!((fast - slow).abs() <= 1e-12, "case {case}: {fast} vs {slow}");
        }
    }

    #[test]
    fn roc_auc_invariant_under_monotone_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let set = random_set(&mut rng, 40, false);
        let transformed = ScoredSet::new(
            set.scores.iter().map(|s| (3.0 * s).exp()).collect(),
            set.labels.clone(),
        )
        .unwrap();
        let a = roc_auc(&set).unwrap();
        let b = roc_auc(&transformed).unwrap();
        assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn roc_auc_complement_symmetry_without_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let set = random_set(&mut rng, 30, false);
        let flipped = ScoredSet::new(
            set.scores.clone(),
            set.labels.iter().map(|l| 1 - l).collect(),
        )
        .unwrap();
        let total = roc_auc(&set).unwrap() + roc_auc(&flipped).unwrap();
        assert!((total - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn pr_auc_perfect_and_constant() {
        let set = ScoredSet::new(vec![0.9, 0.8, 0.2, 0.1], vec![1, 1, 0, 0]).unwrap();
        assert_eq!(pr_auc(&set).unwrap(), 1.0);
        // All scores equal: precision is prevalence everywhere.
        let set = ScoredSet::new(vec![0.5; 10], vec![1, 1, 1, 0, 0, 0, 0, 0, 0, 0]).unwrap();
        assert!((pr_auc(&set).unwrap() - 0.3).abs() <= 1e-12);
    }

    #[test]
    fn pr_auc_matches_threshold_sweep_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for case in 0..20 {
            let set = random_set(&mut rng, 50, case % 2 == 0);
            if set.positives() == 0 {
                continue;
            }
            let fast = pr_auc(&set).unwrap();
            let slow = threshold_sweep_pr(&set);
            assert!((fast - slow).abs() <= 1e-12, "case {case}: {fast} vs {slow}");
        }
    }

    #[test]
    fn confusion_worked_example() {
        // TP=1 (0.9), FP=1 (0.6), FN=1 (0.4), TN=1 (0.1).
        let set = ScoredSet::new(vec![0.9, 0.6, 0.4, 0.1], vec![1, 0, 1, 0]).unwrap();
        let c = confusion_metrics(&set, 0.5);
        assert_eq!(c.accuracy, 0.5);
        assert_eq!(c.precision, Some(0.5));
        assert_eq!(c.sensitivity, Some(0.5));
    }

    #[test]
    fn confusion_all_correct_and_all_negative() {
        let set = ScoredSet::new(vec![0.9, 0.1], vec![1, 0]).unwrap();
        let c = confusion_metrics(&set, 0.5);
        assert_eq!((c.accuracy, c.precision, c.sensitivity), (1.0, Some(1.0), Some(1.0)));

        let set = ScoredSet::new(vec![0.1, 0.2], vec![1, 0]).unwrap();
        let c = confusion_metrics(&set, 0.5);
        assert_eq!(c.precision, None);
        assert_eq!(c.sensitivity, Some(0.0));
    }

    #[test]
    fn sensitivity_nonincreasing_in_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let set = random_set(&mut rng, 60, false);
        let mut prev = f64::INFINITY;
        for i in 0..=20 {
            let c = confusion_metrics(&set, i as f64 / 20.0);
            let s = c.sensitivity.unwrap_or(0.0);
            assert!(s <= prev + 1e-15);
            prev = s;
        }
    }

    fn report(seed: u64, auc: f64) -> RunReport {
        RunReport {
            auc,
            prc: auc,
            accuracy: auc,
            precision: Some(auc),
            sensitivity: Some(auc),
            seed,
            config_digest: "cfg".to_string(),
        }
    }

    #[test]
    fn aggregate_two_point_example() {
        let agg = aggregate(&[report(0, 0.9), report(1, 1.0)]).unwrap();
        assert!((agg.auc.mean - 0.95).abs() <= 1e-12);
        assert!((agg.auc.std - 0.05).abs() <= 1e-12);
        assert_eq!(agg.auc.render(), "0.9500\u{b1}0.0500");
    }

    #[test]
    fn aggregate_identical_reports_zero_std() {
        let agg = aggregate(&[report(0, 0.8), report(1, 0.8), report(2, 0.8)]).unwrap();
        assert!(agg.auc.std <= 1e-12);
        assert_eq!(agg.auc.render(), "0.8000\u{b1}0.0000");
    }

    #[test]
    fn aggregate_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let values: Vec<f64> = (0..5).map(|_| rng.gen_range(0.5..1.0)).collect();
        let reports: Vec<RunReport> =
            values.iter().enumerate().map(|(i, &v)| report(i as u64, v)).collect();
        let agg = aggregate(&reports).unwrap();
        // Straight-line mean / population std.
        let mean = values.iter().sum::<f64>() / 5.0;
        let std =
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 5.0).sqrt();
        assert!((agg.auc.mean - mean).abs() <= 1e-12);
        assert!((agg.auc.std - std).abs() <= 1e-12);
    }

    #[test]
    fn aggregate_rejects_mixed_configs() {
        let mut b = report(1, 0.9);
        b.config_digest = "other".to_string();
        match aggregate(&[report(0, 0.9), b]) {
            Err(MetricError::MixedConfigs { .. }) => {}
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn undefined_metrics_propagate_to_aggregate() {
        let mut a = report(0, 0.9);
        a.precision = None;
        let agg = aggregate(&[a, report(1, 0.9)]).unwrap();
        assert!(agg.precision.is_none());
        assert!(agg.sensitivity.is_some());
    }
}
