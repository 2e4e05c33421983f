//! Confusion matrices, the unified performance measure (UPM) and its companion
//! metrics, threshold sweeps and floor-constrained threshold selection.
//!
//! A sample is predicted positive (failed healing) iff its probability is
//! strictly greater than the threshold. Ratios whose denominator is zero are
//! reported as `None` rather than NaN.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("{labels} labels but {scores} scores")]
    LengthMismatch { labels: usize, scores: usize },
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("score {value} at index {index} is not a probability")]
    InvalidProbability { index: usize, value: f64 },
    #[error("target {0} is outside [0, 1]")]
    InvalidTarget(f64),
    #[error("no positive samples")]
    NoPositives,
    #[error("no negative samples")]
    NoNegatives,
    #[error("no threshold reaches the target {target}")]
    Unachievable { target: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub threshold: f64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        Self { tp, fp, tn, fn_, threshold: f64::NAN }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Metric values; `None` marks a 0/0 ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub upm: Option<f64>,
    pub mcc: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub precision: Option<f64>,
    pub npv: Option<f64>,
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den > 0.0).then(|| num / den)
}

fn validate(y: &[bool], p: &[f64]) -> Result<(), MetricsError> {
    if y.len() != p.len() {
        return Err(MetricsError::LengthMismatch { labels: y.len(), scores: p.len() });
    }
    if let Some((index, &value)) = p.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
        return Err(MetricsError::InvalidProbability { index, value });
    }
    Ok(())
}

fn count(y: &[bool], p: &[f64], threshold: f64) -> ConfusionMatrix {
    let mut cm = ConfusionMatrix::new(0, 0, 0, 0);
    cm.threshold = threshold;
    for (&label, &score) in y.iter().zip(p) {
        match (label, score > threshold) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fn_ += 1,
            (false, true) => cm.fp += 1,
            (false, false) => cm.tn += 1,
        }
    }
    cm
}

pub fn confusion(y: &[bool], p: &[f64], threshold: f64) -> Result<ConfusionMatrix, MetricsError> {
    validate(y, p)?;
    Ok(count(y, p, threshold))
}

/// `4·TP·TN / (4·TP·TN + (TP+TN)(FP+FN))`; `None` when the denominator is zero.
pub fn upm(cm: &ConfusionMatrix) -> Result<Option<f64>, MetricsError> {
    if cm.total() == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    let (tp, tn, fp, fn_) = (cm.tp as f64, cm.tn as f64, cm.fp as f64, cm.fn_ as f64);
    let num = 4.0 * tp * tn;
    Ok(ratio(num, num + (tp + tn) * (fp + fn_)))
}

/// `4 / (1/precision + 1/sensitivity + 1/specificity + 1/npv)`, defined only
/// when all four components are defined and positive.
pub fn upm_harmonic(report: &MetricReport) -> Option<f64> {
    let parts = [report.precision?, report.sensitivity?, report.specificity?, report.npv?];
    if parts.iter().any(|&v| v <= 0.0) {
        return None;
    }
    Some(4.0 / parts.iter().map(|v| 1.0 / v).sum::<f64>())
}

pub fn companion_metrics(cm: &ConfusionMatrix) -> Result<MetricReport, MetricsError> {
    let upm = upm(cm)?;
    let (tp, tn, fp, fn_) = (cm.tp as f64, cm.tn as f64, cm.fp as f64, cm.fn_ as f64);
    let mcc_den = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
    Ok(MetricReport {
        upm,
        mcc: ratio(tp * tn - fp * fn_, mcc_den),
        sensitivity: ratio(tp, tp + fn_),
        specificity: ratio(tn, tn + fp),
        precision: ratio(tp, tp + fp),
        npv: ratio(tn, tn + fn_),
    })
}

/// Convenience: confusion matrix and metrics at one threshold.
pub fn evaluate(y: &[bool], p: &[f64], threshold: f64) -> Result<(ConfusionMatrix, MetricReport), MetricsError> {
    let cm = confusion(y, p, threshold)?;
    let report = companion_metrics(&cm)?;
    Ok((cm, report))
}

/// 0.00, 0.01, ..., 1.00.
pub fn default_grid() -> Vec<f64> {
    (0..=100).map(|i| i as f64 / 100.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub confusion: ConfusionMatrix,
    pub metrics: MetricReport,
}

pub fn sweep_thresholds(y: &[bool], p: &[f64], grid: &[f64]) -> Result<Vec<SweepPoint>, MetricsError> {
    validate(y, p)?;
    grid.iter()
        .map(|&threshold| {
            let confusion = count(y, p, threshold);
            Ok(SweepPoint { threshold, confusion, metrics: companion_metrics(&confusion)? })
        })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Sweep as CSV; undefined values are empty cells.
pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("threshold,upm,sensitivity,specificity,precision,npv\n");
    for pt in points {
        let m = &pt.metrics;
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            pt.threshold,
            fmt_opt(m.upm),
            fmt_opt(m.sensitivity),
            fmt_opt(m.specificity),
            fmt_opt(m.precision),
            fmt_opt(m.npv)
        ));
    }
    out
}

/// `{0}` together with every distinct score, ascending.
pub fn threshold_candidates(p: &[f64]) -> Vec<f64> {
    let mut c: Vec<f64> = std::iter::once(0.0).chain(p.iter().copied()).collect();
    c.sort_by(f64::total_cmp);
    c.dedup();
    c
}

fn check_target(target: f64) -> Result<(), MetricsError> {
    if (0.0..=1.0).contains(&target) {
        Ok(())
    } else {
        Err(MetricsError::InvalidTarget(target))
    }
}

/// Largest candidate threshold whose sensitivity on `(y, p)` is at least
/// `target`. Positives scored exactly 0 can never be predicted positive, so
/// the search fails with `Unachievable` when too many of them exist.
pub fn min_threshold_for_sensitivity(y: &[bool], p: &[f64], target: f64) -> Result<f64, MetricsError> {
    validate(y, p)?;
    check_target(target)?;
    let mut pos: Vec<f64> = y.iter().zip(p).filter(|(&l, _)| l).map(|(_, &s)| s).collect();
    if pos.is_empty() {
        return Err(MetricsError::NoPositives);
    }
    pos.sort_by(f64::total_cmp);
    let n_pos = pos.len() as f64;
    for &t in threshold_candidates(p).iter().rev() {
        let above = pos.len() - pos.partition_point(|&s| s <= t);
        if above as f64 / n_pos >= target {
            return Ok(t);
        }
    }
    Err(MetricsError::Unachievable { target })
}

/// Smallest candidate threshold whose specificity is at least `target`
/// (maximizing sensitivity subject to a specificity floor).
pub fn min_threshold_for_specificity(y: &[bool], p: &[f64], target: f64) -> Result<f64, MetricsError> {
    validate(y, p)?;
    check_target(target)?;
    let mut neg: Vec<f64> = y.iter().zip(p).filter(|(&l, _)| !l).map(|(_, &s)| s).collect();
    if neg.is_empty() {
        return Err(MetricsError::NoNegatives);
    }
    neg.sort_by(f64::total_cmp);
    let n_neg = neg.len() as f64;
    for &t in &threshold_candidates(p) {
        let at_or_below = neg.partition_point(|&s| s <= t);
        if at_or_below as f64 / n_neg >= target {
            return Ok(t);
        }
    }
    Err(MetricsError::Unachievable { target })
}
