//! Resampled model comparison: repeated training on 80% subsets of the
//! training data, paired UPM scores on the test set, Wilcoxon signed-rank
//! tests with Bonferroni correction, effect sizes and ECDF curves.

use log::warn;
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::Dataset;
use crate::metrics::{confusion, upm};
use crate::models::{ModelArtifact, ModelConfigs, ModelKind};
use crate::rng::{derive_seed, rng_from_seed, stream};

/// Largest number of non-zero differences for which exact p-values are used.
pub const EXACT_MAX_N: usize = 25;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompareError {
    #[error("invalid resample plan: {0}")]
    InvalidPlan(String),
    #[error("{0} and {1} paired values")]
    LengthMismatch(usize, usize),
    #[error("no pairs to test")]
    TooFewPairs,
    #[error("all paired differences are zero")]
    AllZeroDifferences,
    #[error("non-finite value in paired scores")]
    NonFinite,
    #[error("no scores")]
    EmptyInput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResamplePlan {
    pub count: usize,
    pub fraction: f64,
}

impl Default for ResamplePlan {
    fn default() -> Self {
        Self { count: 300, fraction: 0.8 }
    }
}

impl ResamplePlan {
    /// `floor(fraction · n)`, guarded against representation error just below an integer.
    pub fn subset_size(&self, n: usize) -> usize {
        let raw = self.fraction * n as f64;
        let rounded = raw.round();
        if (raw - rounded).abs() < 1e-9 {
            rounded as usize
        } else {
            raw.floor() as usize
        }
    }

    /// Seed of resample `index`.
    pub fn seed(master_seed: u64, index: usize) -> u64 {
        derive_seed(master_seed, stream::RESAMPLE, index as u64)
    }
}

/// `plan.count` sorted index sets of size `floor(fraction · n)`, each drawn
/// without replacement from `0..n` with its own derived seed.
pub fn make_resamples(n: usize, plan: &ResamplePlan, master_seed: u64) -> Result<Vec<Vec<usize>>, CompareError> {
    if plan.count == 0 {
        return Err(CompareError::InvalidPlan("count must be at least 1".into()));
    }
    if !(plan.fraction > 0.0 && plan.fraction <= 1.0) {
        return Err(CompareError::InvalidPlan(format!("fraction {} outside (0, 1]", plan.fraction)));
    }
    let size = plan.subset_size(n);
    if size < 2 {
        return Err(CompareError::InvalidPlan(format!("subsets of {size} rows are too small")));
    }
    Ok((0..plan.count)
        .map(|i| {
            let mut rng = rng_from_seed(ResamplePlan::seed(master_seed, i));
            let mut idx = sample(&mut rng, n, size).into_vec();
            idx.sort_unstable();
            idx
        })
        .collect())
}

/// One side of a comparison: a model kind, optionally trained on permuted labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contender {
    pub name: String,
    pub kind: ModelKind,
    #[serde(default)]
    pub shuffled_labels: bool,
}

impl Contender {
    pub fn genuine(kind: ModelKind) -> Self {
        Self { name: kind.name().to_string(), kind, shuffled_labels: false }
    }

    pub fn shuffled(kind: ModelKind) -> Self {
        Self { name: format!("{}_shuffled", kind.name()), kind, shuffled_labels: true }
    }
}

/// Train `contender` on `train` restricted to `indices` and return its UPM on `test`.
pub fn resample_score(
    train: &Dataset,
    test: &Dataset,
    indices: &[usize],
    contender: &Contender,
    configs: &ModelConfigs,
    threshold: f64,
    shuffle_seed: u64,
) -> Result<Option<f64>, crate::Error> {
    let mut subset = train.subset(indices);
    if contender.shuffled_labels {
        let mut labels = subset.outcomes().to_vec();
        labels.shuffle(&mut rng_from_seed(shuffle_seed));
        subset = subset.with_outcomes(labels)?;
    }
    let model = ModelArtifact::fit(&subset, contender.kind, configs)?;
    let p = model.predict_proba(test)?;
    Ok(upm(&confusion(test.outcomes(), &p, threshold)?)?)
}

/// UPM on `test` of one model per resample, in resample order. Failed
/// trainings and undefined UPM values are `None` and never abort the batch.
pub fn paired_scores(
    resamples: &[Vec<usize>],
    train: &Dataset,
    test: &Dataset,
    contender: &Contender,
    configs: &ModelConfigs,
    threshold: f64,
    master_seed: u64,
) -> Vec<Option<f64>> {
    resamples
        .par_iter()
        .enumerate()
        .map(|(i, idx)| {
            let shuffle_seed = derive_seed(master_seed, stream::SHUFFLE, i as u64);
            match resample_score(train, test, idx, contender, configs, threshold, shuffle_seed) {
                Ok(score) => score,
                Err(e) => {
                    warn!("resample {i} of {} failed: {e}", contender.name);
                    None
                }
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Pairs entering the test, zero differences included.
    pub n_pairs: usize,
    /// Non-zero differences that were ranked.
    pub n_nonzero: usize,
    pub w_plus: f64,
    pub w_minus: f64,
    /// Normal-approximation statistic with tie and continuity correction.
    pub z: f64,
    pub p_normal: f64,
    pub p_exact: Option<f64>,
    /// The p-value used for inference.
    pub p_value: f64,
    pub method: PValueMethod,
    /// `|z| / sqrt(n_pairs)`.
    pub effect_size: f64,
}

/// Average ranks (1-based) of `values`.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Two-sided standard normal tail probability `2(1 − Φ(|z|))`.
pub fn normal_two_sided(z: f64) -> f64 {
    libm::erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0)
}

/// Exact two-sided p-value `P(|W − m| ≥ |w − m|)` under the null hypothesis
/// that every rank carries a positive sign with probability 1/2. Ranks may
/// be averaged (multiples of 1/2).
pub fn exact_p_value(ranks: &[f64], w_plus: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0.0f64; total + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    // In doubled units the mean of W+ is total / 2; compare 2|S - total/2| = |2S - total|.
    let observed = ((4.0 * w_plus).round() as i64 - total as i64).abs();
    let extreme: f64 = counts
        .iter()
        .enumerate()
        .filter(|(s, _)| (2 * *s as i64 - total as i64).abs() >= observed)
        .map(|(_, c)| c)
        .sum();
    (extreme / 2f64.powi(ranks.len() as i32)).min(1.0)
}

pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult, CompareError> {
    if a.len() != b.len() {
        return Err(CompareError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(CompareError::TooFewPairs);
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(CompareError::NonFinite);
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|&v| v != 0.0).collect();
    if d.is_empty() {
        return Err(CompareError::AllZeroDifferences);
    }
    let n = d.len();
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let nf = n as f64;
    let w_minus = nf * (nf + 1.0) / 2.0 - w_plus;
    let mean = nf * (nf + 1.0) / 4.0;

    let mut sorted = abs.clone();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && sorted[end] == sorted[start] {
            end += 1;
        }
        let t = (end - start) as f64;
        tie_term += t * t * t - t;
        start = end;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let diff = w_plus - mean;
    let correction = if diff > 0.0 {
        0.5
    } else if diff < 0.0 {
        -0.5
    } else {
        0.0
    };
    let z = (diff - correction) / var.sqrt();
    let p_normal = normal_two_sided(z);
    let p_exact = (n <= EXACT_MAX_N).then(|| exact_p_value(&ranks, w_plus));
    let (p_value, method) = match p_exact {
        Some(p) => (p, PValueMethod::Exact),
        None => (p_normal, PValueMethod::Normal),
    };
    Ok(WilcoxonResult {
        n_pairs: a.len(),
        n_nonzero: n,
        w_plus,
        w_minus,
        z,
        p_normal,
        p_exact,
        p_value,
        method,
        effect_size: z.abs() / (a.len() as f64).sqrt(),
    })
}

/// `p_i < alpha / k` for the `k = p_values.len()` comparisons.
pub fn bonferroni(p_values: &[f64], alpha: f64) -> Vec<bool> {
    let k = p_values.len() as f64;
    p_values.iter().map(|&p| p < alpha / k).collect()
}

/// Steps `(value, fraction of scores ≤ value)` of the empirical CDF.
pub fn ecdf(scores: &[f64]) -> Result<Vec<(f64, f64)>, CompareError> {
    if scores.is_empty() {
        return Err(CompareError::EmptyInput);
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(CompareError::NonFinite);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut steps: Vec<(f64, f64)> = Vec::new();
    for (i, &v) in sorted.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match steps.last_mut() {
            Some(last) if last.0 == v => last.1 = frac,
            _ => steps.push((v, frac)),
        }
    }
    Ok(steps)
}

/// Value of the step function returned by [`ecdf`] at `x`.
pub fn ecdf_at(steps: &[(f64, f64)], x: f64) -> f64 {
    let k = steps.partition_point(|s| s.0 <= x);
    if k == 0 {
        0.0
    } else {
        steps[k - 1].1
    }
}

pub fn ecdf_csv(steps: &[(f64, f64)]) -> String {
    let mut out = String::from("value,cumulative_fraction\n");
    for (v, f) in steps {
        out.push_str(&format!("{v},{f}\n"));
    }
    out
}

/// Spearman rank correlation (average ranks for ties); `None` if either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len());
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// One pairwise test between two contenders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    pub model_a: String,
    pub model_b: String,
    /// Pairs where both scores are defined.
    pub n_pairs: usize,
    pub median_a: Option<f64>,
    pub median_b: Option<f64>,
    /// `None` when every paired difference is zero.
    pub wilcoxon: Option<WilcoxonResult>,
    pub p_value: f64,
    pub alpha: f64,
    /// Bonferroni-corrected threshold `alpha / k`.
    pub corrected_alpha: f64,
    pub significant: bool,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 })
}

/// Test `a` against `b` on the pairs where both scores are defined, flagging
/// significance at `alpha / k`. Identical score vectors give p = 1.
pub fn compare_scores(
    name_a: &str,
    a: &[Option<f64>],
    name_b: &str,
    b: &[Option<f64>],
    alpha: f64,
    k: usize,
) -> Result<ComparisonResult, CompareError> {
    if a.len() != b.len() {
        return Err(CompareError::LengthMismatch(a.len(), b.len()));
    }
    let (xa, xb): (Vec<f64>, Vec<f64>) = a.iter().zip(b).filter_map(|(x, y)| Some(((*x)?, (*y)?))).unzip();
    let wilcoxon = match wilcoxon_signed_rank(&xa, &xb) {
        Ok(w) => Some(w),
        Err(CompareError::AllZeroDifferences) => None,
        Err(e) => return Err(e),
    };
    let p_value = wilcoxon.as_ref().map_or(1.0, |w| w.p_value);
    let corrected_alpha = alpha / k.max(1) as f64;
    Ok(ComparisonResult {
        model_a: name_a.to_string(),
        model_b: name_b.to_string(),
        n_pairs: xa.len(),
        median_a: median(&xa),
        median_b: median(&xb),
        wilcoxon,
        p_value,
        alpha,
        corrected_alpha,
        significant: p_value < corrected_alpha,
    })
}
