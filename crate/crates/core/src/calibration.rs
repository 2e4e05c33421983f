//! Calibration analysis: robust LOWESS smoothing of observed outcomes against
//! predicted probabilities, and the calibration odds ratio
//! `odds(mean(p)) / odds(mean(y))`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("need at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("smoothing fraction {0} outside (0, 1]")]
    InvalidFraction(f64),
    #[error("{0} x values but {1} y values")]
    LengthMismatch(usize, usize),
    #[error("non-finite input value")]
    NonFinite,
    #[error("mean {which} = {value} leaves the odds undefined")]
    DegenerateMean { which: &'static str, value: f64 },
}

fn tricube(u: f64) -> f64 {
    let v = 1.0 - u * u * u;
    if v <= 0.0 {
        0.0
    } else {
        v * v * v
    }
}

fn bisquare(u: f64) -> f64 {
    let v = 1.0 - u * u;
    if v <= 0.0 {
        0.0
    } else {
        v * v
    }
}

/// Weighted local linear fit of `ys` on `xs` evaluated at `x0`. Falls back to
/// the weighted mean when the weighted x spread vanishes.
fn local_fit(xs: &[f64], ys: &[f64], weights: &[f64], x0: f64, scale: f64) -> f64 {
    let sw: f64 = weights.iter().sum();
    if sw <= 0.0 {
        return weighted_mean(ys, &vec![1.0; ys.len()], ys.len() as f64);
    }
    let xm = xs.iter().zip(weights).map(|(x, w)| w * x).sum::<f64>() / sw;
    let ym = weighted_mean(ys, weights, sw);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for ((x, y), w) in xs.iter().zip(ys).zip(weights) {
        sxx += w * (x - xm) * (x - xm);
        sxy += w * (x - xm) * (y - ym);
    }
    let tiny = 1e-10 * scale;
    if sxx / sw > tiny * tiny {
        ym + sxy / sxx * (x0 - xm)
    } else {
        ym
    }
}

/// Weighted mean taken relative to the first value, so that constant input is
/// reproduced without rounding.
fn weighted_mean(ys: &[f64], weights: &[f64], sw: f64) -> f64 {
    let y0 = ys[0];
    y0 + ys.iter().zip(weights).map(|(y, w)| w * (y - y0)).sum::<f64>() / sw
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        (values[m - 1] + values[m]) / 2.0
    }
}

/// Number of neighbours `ceil(frac · n)`, guarded against representation
/// error just above an integer.
fn window_size(frac: f64, n: usize) -> usize {
    let raw = frac * n as f64;
    let rounded = raw.round();
    let k = if (raw - rounded).abs() < 1e-9 { rounded } else { raw.ceil() };
    (k as usize).clamp(1, n)
}

/// Robust LOWESS smoothed values at every `x[i]`, in input order.
///
/// Each fit uses the `ceil(frac · n)` nearest neighbours of `x[i]` plus every
/// point tied with the farthest of them, tricube distance weights and a
/// weighted linear regression. Each of the `robust_iters` passes recomputes
/// bisquare weights from the residuals of the previous pass.
pub fn lowess(x: &[f64], y: &[f64], frac: f64, robust_iters: usize) -> Result<Vec<f64>, CalibrationError> {
    let n = x.len();
    if n != y.len() {
        return Err(CalibrationError::LengthMismatch(n, y.len()));
    }
    if n < 3 {
        return Err(CalibrationError::TooFewPoints(n));
    }
    if !(frac > 0.0 && frac <= 1.0) {
        return Err(CalibrationError::InvalidFraction(frac));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(CalibrationError::NonFinite);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));
    let xs: Vec<f64> = order.iter().map(|&i| x[i]).collect();
    let ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();
    let k = window_size(frac, n);

    // Neighbourhood [lo, hi) and its radius for every sorted point.
    let mut windows = Vec::with_capacity(n);
    let mut lo = 0;
    for &x0 in &xs {
        while lo + k < n && xs[lo + k] - x0 < x0 - xs[lo] {
            lo += 1;
        }
        let hi0 = lo + k;
        let radius = (x0 - xs[lo]).max(xs[hi0 - 1] - x0);
        let mut a = lo;
        while a > 0 && x0 - xs[a - 1] <= radius {
            a -= 1;
        }
        let mut b = hi0;
        while b < n && xs[b] - x0 <= radius {
            b += 1;
        }
        windows.push((a, b, radius));
    }
    let scale = xs[n - 1] - xs[0];
    let y_scale = ys.iter().fold(0.0f64, |m, v| m.max(v.abs()));

    let mut robust = vec![1.0; n];
    let mut fitted = vec![0.0; n];
    for pass in 0..=robust_iters {
        fitted = windows
            .par_iter()
            .enumerate()
            .map(|(i, &(a, b, radius))| {
                let x0 = xs[i];
                let w: Vec<f64> = (a..b)
                    .map(|j| {
                        let d = if radius > 0.0 { tricube((xs[j] - x0).abs() / radius) } else { 1.0 };
                        d * robust[j]
                    })
                    .collect();
                if radius > 0.0 {
                    local_fit(&xs[a..b], &ys[a..b], &w, x0, scale)
                } else {
                    let sw: f64 = w.iter().sum();
                    if sw > 0.0 {
                        weighted_mean(&ys[a..b], &w, sw)
                    } else {
                        weighted_mean(&ys[a..b], &vec![1.0; b - a], (b - a) as f64)
                    }
                }
            })
            .collect();
        if pass == robust_iters {
            break;
        }
        let residuals: Vec<f64> = ys.iter().zip(&fitted).map(|(y, f)| y - f).collect();
        let s = median(&mut residuals.iter().map(|r| r.abs()).collect::<Vec<_>>());
        // Residuals at rounding level carry no outlier information.
        if s <= 1e-12 * y_scale {
            break;
        }
        robust = residuals.iter().map(|r| bisquare(r / (6.0 * s))).collect();
    }

    let mut out = vec![0.0; n];
    for (pos, &i) in order.iter().enumerate() {
        out[i] = fitted[pos];
    }
    Ok(out)
}

fn mean_in_unit_interval(values: impl Iterator<Item = f64>, len: usize, which: &'static str) -> Result<f64, CalibrationError> {
    let m = values.sum::<f64>() / len as f64;
    if !(m > 0.0 && m < 1.0) {
        return Err(CalibrationError::DegenerateMean { which, value: m });
    }
    Ok(m)
}

/// `[mean(p) / (1 − mean(p))] / [mean(y) / (1 − mean(y))]`.
pub fn calibration_odds_ratio(y: &[bool], p: &[f64]) -> Result<f64, CalibrationError> {
    if y.len() != p.len() {
        return Err(CalibrationError::LengthMismatch(p.len(), y.len()));
    }
    if y.is_empty() {
        return Err(CalibrationError::TooFewPoints(0));
    }
    if p.iter().any(|v| !v.is_finite()) {
        return Err(CalibrationError::NonFinite);
    }
    let mp = mean_in_unit_interval(p.iter().copied(), p.len(), "prediction")?;
    let my = mean_in_unit_interval(y.iter().map(|&b| if b { 1.0 } else { 0.0 }), y.len(), "outcome")?;
    Ok((mp / (1.0 - mp)) / (my / (1.0 - my)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPoint {
    pub predicted: f64,
    pub outcome: bool,
    pub smoothed_raw: f64,
    pub smoothed_clamped: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    /// Sorted by predicted probability, then outcome.
    pub points: Vec<CalibrationPoint>,
    pub odds_ratio: f64,
    pub frac: f64,
    pub robust_iters: usize,
}

pub fn calibration_report(y: &[bool], p: &[f64], frac: f64, robust_iters: usize) -> Result<CalibrationReport, CalibrationError> {
    let odds_ratio = calibration_odds_ratio(y, p)?;
    let yf: Vec<f64> = y.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let smooth = lowess(p, &yf, frac, robust_iters)?;
    let mut points: Vec<CalibrationPoint> = (0..y.len())
        .map(|i| CalibrationPoint {
            predicted: p[i],
            outcome: y[i],
            smoothed_raw: smooth[i],
            smoothed_clamped: smooth[i].clamp(0.0, 1.0),
        })
        .collect();
    points.sort_by(|a, b| a.predicted.total_cmp(&b.predicted).then(a.outcome.cmp(&b.outcome)));
    Ok(CalibrationReport { points, odds_ratio, frac, robust_iters })
}

pub fn calibration_csv(report: &CalibrationReport) -> String {
    let mut out = String::from("predicted,outcome,smoothed_raw,smoothed_clamped\n");
    for pt in &report.points {
        out.push_str(&format!(
            "{},{},{},{}\n",
            pt.predicted,
            u8::from(pt.outcome),
            pt.smoothed_raw,
            pt.smoothed_clamped
        ));
    }
    out
}
