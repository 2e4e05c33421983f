//! Soft-margin support vector classifier.
//!
//! The dual is solved by sequential minimal optimization with the maximal
//! violating pair as working set (lowest index wins ties), so training is
//! fully deterministic. Probabilities come from a logistic link fitted to
//! out-of-fold decision values (Platt scaling).

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::matrix::{dot, Matrix};
use crate::preprocess::DesignMatrix;
use crate::rng::{derive_seed, rng_from_seed, stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Linear,
    Rbf,
}

/// RBF width: `scale` resolves to `1 / (d * Var(X))` over all matrix entries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GammaSpec {
    Named(GammaName),
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaName {
    Scale,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Kernel {
    Linear,
    Rbf { gamma: f64 },
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Linear => dot(a, b),
            Kernel::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d2).exp()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmConfig {
    pub c: f64,
    pub kernel: KernelKind,
    pub gamma: GammaSpec,
    /// Stop when the maximal KKT violation drops below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Box constraint of positive samples scaled by the negative/positive ratio.
    pub class_weighting: bool,
    /// Folds producing out-of-fold decision values for Platt scaling.
    pub platt_folds: usize,
    /// Seed of the fold assignment; experiment drivers derive it from their master seed.
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            kernel: KernelKind::Rbf,
            gamma: GammaSpec::Named(GammaName::Scale),
            tol: 1e-3,
            max_iter: 1_000_000,
            class_weighting: false,
            platt_folds: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlattParams {
    pub a: f64,
    pub b: f64,
}

impl PlattParams {
    /// `1 / (1 + exp(a*f + b))`, evaluated without overflow.
    pub fn probability(&self, f: f64) -> f64 {
        let z = self.a * f + self.b;
        if z >= 0.0 {
            let e = (-z).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + z.exp())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub support_vectors: Matrix,
    /// `alpha_i * y_i` with `y_i` in {-1, +1}.
    pub dual_coef: Vec<f64>,
    pub bias: f64,
    pub kernel: Kernel,
    pub c: f64,
    pub platt: PlattParams,
    pub converged: bool,
    pub iterations: usize,
}

/// Raw dual solution, exposed for feasibility checks.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    /// +1 for positives, -1 for negatives.
    pub y: Vec<f64>,
    /// Per-sample box constraint.
    pub upper: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Maximal KKT violation at exit.
    pub kkt_gap: f64,
}

pub fn resolve_gamma(x: &Matrix, config: &SvmConfig) -> Result<Kernel, ModelError> {
    match config.kernel {
        KernelKind::Linear => Ok(Kernel::Linear),
        KernelKind::Rbf => {
            let gamma = match config.gamma {
                GammaSpec::Value(g) => g,
                GammaSpec::Named(GammaName::Scale) => {
                    let data = x.as_slice();
                    let n = data.len() as f64;
                    let mean = data.iter().sum::<f64>() / n;
                    let var = data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                    1.0 / (x.cols() as f64 * var)
                }
            };
            if gamma.is_finite() && gamma > 0.0 {
                Ok(Kernel::Rbf { gamma })
            } else {
                Err(ModelError::DegenerateKernel(gamma))
            }
        }
    }
}

fn kernel_matrix(x: &Matrix, kernel: &Kernel) -> Vec<f64> {
    let n = x.rows();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = kernel.eval(x.row(i), x.row(j));
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}

/// Minimize `1/2 a'Qa - e'a` s.t. `y'a = 0`, `0 <= a_i <= upper_i`.
pub fn solve_dual(x: &Matrix, labels: &[bool], upper: &[f64], kernel: &Kernel, tol: f64, max_iter: usize) -> DualSolution {
    let n = x.rows();
    let k = kernel_matrix(x, kernel);
    let y: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    const TAU: f64 = 1e-12;

    let mut iterations = 0;
    let mut converged = false;
    let mut kkt_gap = f64::INFINITY;
    while iterations < max_iter {
        // i maximizes -y G over I_up, j minimizes it over I_low.
        let mut i = usize::MAX;
        let mut gmax = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut gmin = f64::INFINITY;
        for t in 0..n {
            let v = -y[t] * grad[t];
            let in_up = if y[t] > 0.0 { alpha[t] < upper[t] } else { alpha[t] > 0.0 };
            let in_low = if y[t] > 0.0 { alpha[t] > 0.0 } else { alpha[t] < upper[t] };
            if in_up && v > gmax {
                gmax = v;
                i = t;
            }
            if in_low && v < gmin {
                gmin = v;
                j = t;
            }
        }
        kkt_gap = gmax - gmin;
        if i == usize::MAX || j == usize::MAX || kkt_gap < tol {
            converged = true;
            break;
        }
        iterations += 1;

        let (ci, cj) = (upper[i], upper[j]);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let kii = k[i * n + i];
        let kjj = k[j * n + j];
        let kij = k[i * n + j];
        if y[i] != y[j] {
            let mut quad = kii + kjj + 2.0 * (y[i] * y[j] * kij);
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > ci - cj {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = ci - diff;
                }
            } else if alpha[j] > cj {
                alpha[j] = cj;
                alpha[i] = cj + diff;
            }
        } else {
            let mut quad = kii + kjj - 2.0 * (y[i] * y[j] * kij);
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > ci {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = sum - ci;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > cj {
                if alpha[j] > cj {
                    alpha[j] = cj;
                    alpha[i] = sum - cj;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let di = alpha[i] - old_i;
        let dj = alpha[j] - old_j;
        let (ki, kj) = (&k[i * n..(i + 1) * n], &k[j * n..(j + 1) * n]);
        for t in 0..n {
            grad[t] += y[t] * (y[i] * ki[t] * di + y[j] * kj[t] * dj);
        }
    }

    // Bias from free vectors, or the midpoint of the feasible interval.
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free, mut sum_free) = (0usize, 0.0);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= upper[t] {
            if y[t] < 0.0 { ub = ub.min(yg) } else { lb = lb.max(yg) }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 { ub = ub.min(yg) } else { lb = lb.max(yg) }
        } else {
            free += 1;
            sum_free += yg;
        }
    }
    let rho = if free > 0 { sum_free / free as f64 } else { (ub + lb) / 2.0 };
    DualSolution { alpha, y, upper: upper.to_vec(), bias: -rho, iterations, converged, kkt_gap }
}

fn fit_machine(x: &Matrix, labels: &[bool], weights: &[f64], kernel: Kernel, config: &SvmConfig) -> SvmModel {
    let upper: Vec<f64> = weights.iter().map(|w| config.c * w).collect();
    let sol = solve_dual(x, labels, &upper, &kernel, config.tol, config.max_iter);
    if !sol.converged {
        log::warn!("SMO hit the iteration limit with KKT gap {:e}", sol.kkt_gap);
    }
    let sv: Vec<usize> = (0..x.rows()).filter(|&t| sol.alpha[t] > 0.0).collect();
    SvmModel {
        support_vectors: x.select_rows(&sv),
        dual_coef: sv.iter().map(|&t| sol.alpha[t] * sol.y[t]).collect(),
        bias: sol.bias,
        kernel,
        c: config.c,
        platt: PlattParams { a: -1.0, b: 0.0 },
        converged: sol.converged,
        iterations: sol.iterations,
    }
}

/// Stratified, seeded fold assignment.
fn fold_assignment(labels: &[bool], folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = rng_from_seed(derive_seed(seed, stream::PLATT_FOLDS, 0));
    let mut assignment = vec![0; labels.len()];
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for (k, i) in idx.into_iter().enumerate() {
            assignment[i] = k % folds;
        }
    }
    assignment
}

pub fn train_svm(x: &DesignMatrix, config: &SvmConfig) -> Result<SvmModel, ModelError> {
    super::require_both_classes(&x.labels)?;
    if !(config.c > 0.0 && config.tol > 0.0) {
        return Err(ModelError::InvalidConfig("C and tol must be positive".into()));
    }
    let kernel = resolve_gamma(&x.values, config)?;
    let mut model = fit_machine(&x.values, &x.labels, &x.sample_weights, kernel, config);

    // Out-of-fold decision values; in-sample values when a fold cannot be trained.
    let n = x.rows();
    let folds = config.platt_folds;
    let mut decision = vec![0.0; n];
    let mut oof_ok = folds >= 2 && n >= 2 * folds;
    if oof_ok {
        let assignment = fold_assignment(&x.labels, folds, config.seed);
        for f in 0..folds {
            let train_idx: Vec<usize> = (0..n).filter(|&i| assignment[i] != f).collect();
            let held: Vec<usize> = (0..n).filter(|&i| assignment[i] == f).collect();
            let sub = x.select_rows(&train_idx);
            if held.is_empty() || super::require_both_classes(&sub.labels).is_err() {
                oof_ok = false;
                break;
            }
            let m = fit_machine(&sub.values, &sub.labels, &sub.sample_weights, kernel, config);
            for &i in &held {
                decision[i] = m.decision_value(x.values.row(i));
            }
        }
    }
    if !oof_ok {
        decision = model.decision_function(&x.values)?;
    }
    model.platt = fit_platt(&decision, &x.labels)?;
    Ok(model)
}

impl SvmModel {
    pub fn dimension(&self) -> usize {
        self.support_vectors.cols()
    }

    fn decision_value(&self, row: &[f64]) -> f64 {
        self.support_vectors
            .iter_rows()
            .zip(&self.dual_coef)
            .map(|(sv, c)| c * self.kernel.eval(sv, row))
            .sum::<f64>()
            + self.bias
    }

    /// `f(x) = sum_i alpha_i y_i K(x_i, x) + b`.
    pub fn decision_function(&self, x: &Matrix) -> Result<Vec<f64>, ModelError> {
        if !self.dual_coef.is_empty() && x.cols() != self.dimension() {
            return Err(ModelError::DimensionMismatch { expected: self.dimension(), got: x.cols() });
        }
        Ok(x.iter_rows().map(|r| self.decision_value(r)).collect())
    }

    pub fn predict_proba(&self, x: &Matrix) -> Result<Vec<f64>, ModelError> {
        Ok(self.decision_function(x)?.into_iter().map(|f| self.platt.probability(f)).collect())
    }
}

/// Fit `p = 1/(1+exp(A f + B))` by Newton's method with backtracking on the
/// cross-entropy against smoothed targets `(N+ + 1)/(N+ + 2)` and `1/(N- + 2)`.
pub fn fit_platt(decision: &[f64], labels: &[bool]) -> Result<PlattParams, ModelError> {
    assert_eq!(decision.len(), labels.len());
    super::require_both_classes(labels)?;
    let pos = labels.iter().filter(|&&y| y).count() as f64;
    let neg = labels.len() as f64 - pos;
    let hi = (pos + 1.0) / (pos + 2.0);
    let lo = 1.0 / (neg + 2.0);
    let targets: Vec<f64> = labels.iter().map(|&y| if y { hi } else { lo }).collect();

    let objective = |a: f64, b: f64| -> f64 {
        decision
            .iter()
            .zip(&targets)
            .map(|(&f, &t)| {
                let z = f * a + b;
                if z >= 0.0 {
                    t * z + (-z).exp().ln_1p()
                } else {
                    (t - 1.0) * z + z.exp().ln_1p()
                }
            })
            .sum()
    };

    let (mut a, mut b) = (0.0, ((neg + 1.0) / (pos + 1.0)).ln());
    let mut fval = objective(a, b);
    const SIGMA: f64 = 1e-12;
    for _ in 0..100 {
        let (mut h11, mut h22, mut h21, mut g1, mut g2) = (SIGMA, SIGMA, 0.0, 0.0, 0.0);
        for (&f, &t) in decision.iter().zip(&targets) {
            let z = f * a + b;
            let (p, q) = if z >= 0.0 {
                let e = (-z).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = z.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = p * q;
            h11 += f * f * d2;
            h22 += d2;
            h21 += f * d2;
            let d1 = t - p;
            g1 += f * d1;
            g2 += d1;
        }
        if g1.abs() < 1e-10 && g2.abs() < 1e-10 {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        let mut moved = false;
        while step >= 1e-10 {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = objective(na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                moved = true;
                break;
            }
            step /= 2.0;
        }
        if !moved {
            break;
        }
    }
    Ok(PlattParams { a, b })
}
