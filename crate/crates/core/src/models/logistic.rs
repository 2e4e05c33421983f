//! L2-regularized logistic regression fitted by Newton's method (IRLS) with
//! step halving. The intercept is not penalized.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::matrix::{dot, sigmoid, softplus, Matrix};
use crate::preprocess::DesignMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogisticConfig {
    pub lambda: f64,
    /// Euclidean norm of the objective's gradient at which training stops.
    pub tol: f64,
    pub max_iter: usize,
    /// Multiply the likelihood of positive samples by the negative/positive ratio.
    pub class_weighting: bool,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self { lambda: 1.0, tol: 1e-8, max_iter: 200, class_weighting: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub iterations: usize,
    pub gradient_norm: f64,
    pub converged: bool,
    /// Objective after every accepted step, starting with the initial point.
    pub losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub column_names: Vec<String>,
    pub trace: TrainingTrace,
}

/// Weighted negative log-likelihood plus `lambda/2 * |w|^2`, and its gradient.
///
/// `beta[0]` is the intercept, `beta[1..]` the weights.
pub fn objective(x: &DesignMatrix, beta: &[f64], lambda: f64) -> (f64, Vec<f64>) {
    let d = x.cols();
    assert_eq!(beta.len(), d + 1);
    let mut loss = 0.0;
    let mut grad = vec![0.0; d + 1];
    for i in 0..x.rows() {
        let row = x.values.row(i);
        let z = beta[0] + dot(row, &beta[1..]);
        let w = x.sample_weights[i];
        let y = if x.labels[i] { 1.0 } else { 0.0 };
        loss += w * (softplus(z) - y * z);
        let r = w * (sigmoid(z) - y);
        grad[0] += r;
        for (g, v) in grad[1..].iter_mut().zip(row) {
            *g += r * v;
        }
    }
    let penalty: f64 = beta[1..].iter().map(|b| b * b).sum();
    loss += 0.5 * lambda * penalty;
    for (g, b) in grad[1..].iter_mut().zip(&beta[1..]) {
        *g += lambda * b;
    }
    (loss, grad)
}

fn hessian(x: &DesignMatrix, beta: &[f64], lambda: f64) -> DMatrix<f64> {
    let d = x.cols() + 1;
    let mut h = DMatrix::<f64>::zeros(d, d);
    let mut aug = vec![0.0; d];
    aug[0] = 1.0;
    for i in 0..x.rows() {
        let row = x.values.row(i);
        aug[1..].copy_from_slice(row);
        let p = sigmoid(beta[0] + dot(row, &beta[1..]));
        let s = x.sample_weights[i] * p * (1.0 - p);
        if s == 0.0 {
            continue;
        }
        // Lower triangle only; mirrored below.
        for a in 0..d {
            let sa = s * aug[a];
            if sa == 0.0 {
                continue;
            }
            for b in 0..=a {
                h[(a, b)] += sa * aug[b];
            }
        }
    }
    for a in 1..d {
        h[(a, a)] += lambda;
    }
    for a in 0..d {
        for b in 0..a {
            h[(b, a)] = h[(a, b)];
        }
    }
    h
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|g| g * g).sum::<f64>().sqrt()
}

pub fn train_logistic(x: &DesignMatrix, config: &LogisticConfig) -> Result<LinearModel, ModelError> {
    let n = x.rows();
    if n < 2 {
        return Err(ModelError::TooFewRows(n));
    }
    super::require_both_classes(&x.labels)?;
    if x.sample_weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
        return Err(ModelError::InvalidConfig("sample weights must be positive".into()));
    }
    if !(config.lambda >= 0.0 && config.tol > 0.0) {
        return Err(ModelError::InvalidConfig("lambda must be >= 0 and tol > 0".into()));
    }
    let d = x.cols();
    let mut beta = vec![0.0; d + 1];
    let (mut loss, mut grad) = objective(x, &beta, config.lambda);
    let mut losses = vec![loss];
    let mut iterations = 0;
    let mut converged = norm(&grad) <= config.tol;

    while !converged && iterations < config.max_iter {
        iterations += 1;
        let h = hessian(x, &beta, config.lambda);
        let g = DVector::from_column_slice(&grad);
        let step = match h.clone().cholesky() {
            Some(chol) => chol.solve(&g),
            None => {
                // Unpenalized and saturated: fall back to a jittered system.
                let jitter = DMatrix::<f64>::identity(d + 1, d + 1) * 1e-8;
                match (h + jitter).cholesky() {
                    Some(chol) => chol.solve(&g),
                    None => return Err(ModelError::Diverged("singular Newton system".into())),
                }
            }
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let candidate: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b - t * s).collect();
            let (new_loss, new_grad) = objective(x, &candidate, config.lambda);
            if !new_loss.is_finite() {
                t *= 0.5;
                continue;
            }
            // Close to the optimum loss differences drown in rounding; a
            // smaller gradient at an indistinguishable loss is progress too.
            let within_rounding = new_loss <= loss + 4.0 * f64::EPSILON * loss.abs();
            if new_loss <= loss || (within_rounding && norm(&new_grad) < norm(&grad)) {
                beta = candidate;
                loss = new_loss;
                grad = new_grad;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // No decrease is representable any more: we sit at the optimum to
            // machine precision.
            break;
        }
        losses.push(loss);
        converged = norm(&grad) <= config.tol;
    }
    if !loss.is_finite() || beta.iter().any(|b| !b.is_finite()) {
        return Err(ModelError::Diverged("non-finite loss".into()));
    }
    let gradient_norm = norm(&grad);
    if !converged {
        log::warn!("logistic regression stopped after {iterations} iterations, |grad| = {gradient_norm:e}");
    }
    Ok(LinearModel {
        intercept: beta[0],
        weights: beta[1..].to_vec(),
        lambda: config.lambda,
        column_names: x.column_names.clone(),
        trace: TrainingTrace { iterations, gradient_norm, converged, losses },
    })
}

impl LinearModel {
    pub fn predict_proba(&self, x: &Matrix) -> Result<Vec<f64>, ModelError> {
        if x.cols() != self.weights.len() {
            return Err(ModelError::DimensionMismatch { expected: self.weights.len(), got: x.cols() });
        }
        Ok(x.iter_rows().map(|r| sigmoid(self.intercept + dot(r, &self.weights))).collect())
    }
}
