//! Acceptance suite A1..A10.
//!
//! Runs as a plain binary (`harness = false`) so that every criterion prints
//! exactly one status line. Expected values come from oracles written here,
//! independently of the library: brute-force enumeration, finite differences,
//! exhaustive split search, hand-rolled routing and closed forms.
//!
//! Status words:
//! - `PASS`: every clause holds;
//! - `FAIL`: a clause that the implementation should meet does not;
//! - `UNATTAINABLE`: the attainable clauses hold, and a clause that no correct
//!   implementation can meet is reported with its measured value instead of
//!   being asserted. Only `FAIL` makes the suite exit non-zero.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use nonunion::calibration::{calibration_odds_ratio, lowess};
use nonunion::compare::wilcoxon_signed_rank;
use nonunion::experiments::{prepare, resolve, run_ablation, ExperimentConfig};
use nonunion::matrix::{sigmoid, Matrix};
use nonunion::metrics::{min_threshold_for_sensitivity, upm, ConfusionMatrix};
use nonunion::models::gbt::{fit_tree, train_gbt, GbtConfig, Node, RegressionTree};
use nonunion::models::logistic::objective;
use nonunion::models::svm::{train_svm, GammaSpec, KernelKind, SvmConfig, SvmModel};
use nonunion::preprocess::{compute_class_weights, DesignMatrix};
use nonunion::rng::{rng_from_seed, Rng};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde_json::Value;

enum Status {
    Pass,
    Fail,
    Unattainable,
}

struct Outcome {
    status: Status,
    detail: String,
}

fn check(ok: bool, detail: impl Into<String>) -> Outcome {
    Outcome { status: if ok { Status::Pass } else { Status::Fail }, detail: detail.into() }
}

fn study_config_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join("study.json")
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

// ---------------------------------------------------------------- A1

fn harmonic_upm(tp: u64, fp: u64, tn: u64, fn_: u64) -> f64 {
    let (tp, fp, tn, fn_) = (tp as f64, fp as f64, tn as f64, fn_ as f64);
    let parts = [tp / (tp + fn_), tn / (tn + fp), tp / (tp + fp), tn / (tn + fn_)];
    if parts.iter().any(|&c| c == 0.0) {
        return 0.0;
    }
    4.0 / parts.iter().map(|c| 1.0 / c).sum::<f64>()
}

fn a1() -> Outcome {
    let start = Instant::now();
    let mut rng = rng_from_seed(1);
    let mut worst = 0.0f64;
    let mut checked = 0;
    while checked < 10_000 {
        let [tp, fp, tn, fn_] = [(); 4].map(|_| rng.random_range(0..1000u64));
        // All four harmonic components defined.
        if tp + fn_ == 0 || tn + fp == 0 || tp + fp == 0 || tn + fn_ == 0 {
            continue;
        }
        let got = upm(&ConfusionMatrix::new(tp, fp, tn, fn_)).unwrap().expect("defined");
        worst = worst.max((got - harmonic_upm(tp, fp, tn, fn_)).abs());
        checked += 1;
    }
    let perfect = upm(&ConfusionMatrix::new(5, 0, 5, 0)).unwrap();
    let half = upm(&ConfusionMatrix::new(5, 5, 5, 5)).unwrap();
    let elapsed = start.elapsed();
    check(
        worst <= 1e-12 && perfect == Some(1.0) && half == Some(0.5) && elapsed < Duration::from_secs(1),
        format!(
            "10000 matrices, max |cm-form - harmonic| = {worst:.1e}; UPM(5,0,5,0) = {perfect:?}, UPM(5,5,5,5) = {half:?}; {}",
            secs(elapsed)
        ),
    )
}

// ---------------------------------------------------------------- A2

fn oracle_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&x| {
            let below = v.iter().filter(|&&y| y < x).count() as f64;
            let equal = v.iter().filter(|&&y| y == x).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

/// Two-sided p by enumerating all 2^n sign assignments of the ranked |d|.
fn brute_force_p(d: &[f64]) -> f64 {
    let d: Vec<f64> = d.iter().copied().filter(|&x| x != 0.0).collect();
    let n = d.len();
    let ranks = oracle_ranks(&d.iter().map(|x| x.abs()).collect::<Vec<_>>());
    let mean = ranks.iter().sum::<f64>() / 2.0;
    let observed: f64 = d.iter().zip(&ranks).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
    let dev = (observed - mean).abs();
    let hits = (0u32..1 << n)
        .filter(|mask| {
            let w: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            (w - mean).abs() >= dev - 1e-9
        })
        .count();
    hits as f64 / f64::from(1u32 << n)
}

fn a2() -> Outcome {
    let start = Instant::now();
    let mut rng = rng_from_seed(2);
    let mut exact_worst = 0.0f64;
    let mut normal_worst = [0.0f64; 13];
    for n in 1..=12usize {
        for _ in 0..200 {
            let a: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            let b: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            let r = wilcoxon_signed_rank(&a, &b).unwrap();
            let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
            let oracle = brute_force_p(&d);
            let exact = r.p_exact.expect("exact p for n <= 12");
            exact_worst = exact_worst.max((exact - oracle).abs());
            normal_worst[n] = normal_worst[n].max((r.p_normal - exact).abs());

            // Tie-heavy companion sample for the exact distribution with
            // averaged ranks.
            let a: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(-3..=3))).collect();
            let b: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(-3..=3))).collect();
            if a == b {
                continue;
            }
            let r = wilcoxon_signed_rank(&a, &b).unwrap();
            let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
            exact_worst = exact_worst.max((r.p_exact.unwrap() - brute_force_p(&d)).abs());
        }
    }
    let elapsed = start.elapsed();
    // With n = 2 or 3 the exact p takes so few values that no continuity-
    // corrected normal curve lands within 0.05 of all of them (n = 2, all
    // signs positive: exact 0.5, normal 2*(1 - Phi(1/sqrt(1.25))) = 0.371).
    let attainable: Vec<usize> = (1..=12).filter(|n| !matches!(n, 2 | 3)).collect();
    let attainable_worst = attainable.iter().map(|&n| normal_worst[n]).fold(0.0, f64::max);
    let ok = exact_worst <= 1e-9 && attainable_worst < 0.05 && elapsed < Duration::from_secs(30);
    let detail = format!(
        "exact vs 2^n enumeration over n = 1..12 x 200 (plus tied samples): max diff {exact_worst:.1e}; \
         |normal - exact| max {attainable_worst:.4} for n = 1, 4..12; n = 2: {:.4}, n = 3: {:.4} \
         (beyond 0.05 for any continuity-corrected normal approximation); {}",
        normal_worst[2],
        normal_worst[3],
        secs(elapsed)
    );
    let status = if !ok {
        Status::Fail
    } else if normal_worst[2] >= 0.05 || normal_worst[3] >= 0.05 {
        Status::Unattainable
    } else {
        Status::Pass
    };
    Outcome { status, detail }
}

// ---------------------------------------------------------------- A3 / A4

fn run_all(out: &Path) -> std::io::Result<(bool, Duration, String)> {
    let start = Instant::now();
    let output = Command::new(env!("CARGO_BIN_EXE_nonunion"))
        .arg("run-all")
        .arg("--config")
        .arg(study_config_path())
        .arg("--out")
        .arg(out)
        .output()?;
    Ok((output.status.success(), start.elapsed(), String::from_utf8_lossy(&output.stderr).into_owned()))
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const LAYOUT: &[&str] = &[
    "config.json",
    "reports/report.json",
    "models/logistic.json",
    "models/svm.json",
    "models/gbt.json",
    "plots/learning_curve.csv",
    "plots/ecdf_logistic.csv",
    "plots/ecdf_svm.csv",
    "plots/ecdf_gbt.csv",
    "plots/ecdf_gbt_shuffled.csv",
    "plots/upm_vs_threshold_gbt.csv",
    "plots/calibration_gbt.csv",
    "plots/confusion_gbt.csv",
];

fn a3(first_run: &Path) -> Outcome {
    let (ok, elapsed, stderr) = run_all(first_run).unwrap();
    if !ok {
        return check(false, format!("run-all failed: {stderr}"));
    }
    let missing: Vec<&str> = LAYOUT.iter().copied().filter(|f| !first_run.join(f).exists()).collect();
    let report = read_json(&first_run.join("reports/report.json"));
    let gbt = report["models"].as_array().unwrap().iter().find(|m| m["model"] == "gbt").unwrap();
    let gbt_upm = gbt["test_metrics"]["upm"].as_f64().unwrap();
    let base_upm = report["baseline"]["test_metrics"]["upm"].as_f64().unwrap();
    let control = &report["comparison"]["control"];
    let p = control["p_value"].as_f64().unwrap();
    let alpha = control["alpha"].as_f64().unwrap();
    let resamples = report["comparison"]["plan"]["count"].as_u64().unwrap();
    let rows = report["dataset"]["rows"].as_u64().unwrap();
    let genuine_better = control["median_a"].as_f64().unwrap() > control["median_b"].as_f64().unwrap();
    check(
        missing.is_empty()
            && rows == 797
            && resamples == 300
            && control["model_a"] == "gbt"
            && control["model_b"] == "gbt_shuffled"
            && gbt_upm - base_upm >= 0.1
            && genuine_better
            && p < alpha / 3.0
            && elapsed < Duration::from_secs(600),
        format!(
            "n = {rows}, {resamples} resamples: boosted test UPM {gbt_upm:.4} vs majority baseline {base_upm:.4}; \
             boosted vs shuffled twin p = {p:.2e} < {:.4}; missing outputs {missing:?}; {}",
            alpha / 3.0,
            secs(elapsed)
        ),
    )
}

/// File contents with provenance timestamps removed.
fn comparable(path: &Path) -> Vec<u8> {
    let bytes = std::fs::read(path).unwrap();
    if path.file_name().is_some_and(|n| n == "report.json") {
        let mut v: Value = serde_json::from_slice(&bytes).unwrap();
        let prov = v["provenance"].as_object_mut().unwrap();
        prov.remove("started_at").unwrap();
        prov.remove("finished_at").unwrap();
        return serde_json::to_vec(&v).unwrap();
    }
    bytes
}

fn files(root: &Path) -> BTreeMap<PathBuf, PathBuf> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), path);
            }
        }
    }
    out
}

fn a4(first_run: &Path, second_run: &Path) -> Outcome {
    if !first_run.join("reports/report.json").exists() {
        return check(false, "first run missing (A3 failed)");
    }
    let (ok, elapsed, stderr) = run_all(second_run).unwrap();
    if !ok {
        return check(false, format!("second run-all failed: {stderr}"));
    }
    let a = files(first_run);
    let b = files(second_run);
    let same_listing = a.keys().eq(b.keys());
    let differing: Vec<String> = a
        .iter()
        .filter(|(rel, path)| b.get(*rel).is_none_or(|other| comparable(path) != comparable(other)))
        .map(|(rel, _)| rel.display().to_string())
        .collect();
    let models = a.keys().filter(|k| k.starts_with("models")).count();
    check(
        same_listing && differing.is_empty() && models == 3,
        format!(
            "two full run-all invocations: {} files compared ({models} model artifacts), differing {differing:?}; second run {}",
            a.len(),
            secs(elapsed)
        ),
    )
}

// ---------------------------------------------------------------- A5

fn random_design(rng: &mut Rng, n: usize, d: usize) -> DesignMatrix {
    let values: Vec<f64> = (0..n * d).map(|_| StandardNormal.sample(rng)).collect();
    let labels: Vec<bool> = (0..n).map(|i| {
        let z: f64 = values[i * d] - 0.5 * values[i * d + 1];
        rng.random::<f64>() < 1.0 / (1.0 + (-z).exp())
    }).collect();
    DesignMatrix::new(Matrix::from_vec(n, d, values), labels)
}

fn route(tree: &RegressionTree, row: &[f64]) -> usize {
    let mut i = 0;
    while let Node::Split { column, threshold, missing_goes_left, left, right } = tree.nodes[i] {
        let x = row[column];
        i = if (x.is_nan() && missing_goes_left) || x < threshold { left } else { right };
    }
    i
}

/// Best gain over all "x <= v goes left" partitions, each column and distinct value.
fn best_gain(x: &Matrix, g: &[f64], h: &[f64], lambda: f64, min_child: f64) -> Option<f64> {
    let score = |g: f64, h: f64| g * g / (h + lambda);
    let (gt, ht) = (g.iter().sum::<f64>(), h.iter().sum::<f64>());
    let mut best: Option<f64> = None;
    for c in 0..x.cols() {
        for i in 0..x.rows() {
            let v = x.get(i, c);
            let left: Vec<usize> = (0..x.rows()).filter(|&r| x.get(r, c) <= v).collect();
            if left.len() == x.rows() {
                continue;
            }
            let gl: f64 = left.iter().map(|&r| g[r]).sum();
            let hl: f64 = left.iter().map(|&r| h[r]).sum();
            let (gr, hr) = (gt - gl, ht - hl);
            if hl < min_child || hr < min_child {
                continue;
            }
            let gain = 0.5 * (score(gl, hl) + score(gr, hr) - score(gt, ht));
            if gain > 0.0 && best.is_none_or(|b| gain > b) {
                best = Some(gain);
            }
        }
    }
    best
}

fn a5() -> Outcome {
    let mut rng = rng_from_seed(5);

    // Logistic gradient against central differences.
    let mut grad_worst = 0.0f64;
    for _ in 0..5 {
        let x = random_design(&mut rng, 60, 4);
        let beta: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, grad) = objective(&x, &beta, 0.3);
        for k in 0..beta.len() {
            let h = 1e-5;
            let mut up = beta.clone();
            let mut down = beta.clone();
            up[k] += h;
            down[k] -= h;
            let fd = (objective(&x, &up, 0.3).0 - objective(&x, &down, 0.3).0) / (2.0 * h);
            grad_worst = grad_worst.max((fd - grad[k]).abs() / grad[k].abs().max(1e-8));
        }
    }

    // Leaf values of every tree against the Newton step of the rows routed there.
    let mut x = random_design(&mut rng, 300, 4);
    let w = compute_class_weights(&x.labels).unwrap();
    x = x.with_weights(w);
    let cfg = GbtConfig { n_rounds: 20, ..Default::default() };
    let model = train_gbt(&x, &cfg).unwrap();
    let mut leaf_worst = 0.0f64;
    let mut leaves = 0;
    let mut margin = vec![model.base_score; x.rows()];
    for tree in &model.trees {
        let mut sums: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
        for i in 0..x.rows() {
            let p = sigmoid(margin[i]);
            let y = if x.labels[i] { 1.0 } else { 0.0 };
            let e = sums.entry(route(tree, x.values.row(i))).or_default();
            e.0 += x.sample_weights[i] * (p - y);
            e.1 += x.sample_weights[i] * p * (1.0 - p);
        }
        for (leaf, (g, h)) in sums {
            let Node::Leaf { value } = tree.nodes[leaf] else { unreachable!() };
            leaf_worst = leaf_worst.max((value + g / (h + cfg.lambda)).abs());
            leaves += 1;
        }
        for (i, m) in margin.iter_mut().enumerate() {
            let Node::Leaf { value } = tree.nodes[route(tree, x.values.row(i))] else { unreachable!() };
            *m += model.learning_rate * value;
        }
    }

    // Root split against exhaustive search on 20 random 6 x 2 matrices.
    let mut split_mismatches = 0;
    for _ in 0..20 {
        let data: Vec<f64> = (0..12).map(|_| f64::from(rng.random_range(0..4))).collect();
        let m = Matrix::from_vec(6, 2, data);
        let g: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h: Vec<f64> = (0..6).map(|_| rng.random_range(0.05..0.25)).collect();
        let cfg = GbtConfig { max_depth: 1, min_child_weight: 0.1, ..Default::default() };
        let tree = fit_tree(&m, &g, &h, &cfg);
        let oracle = best_gain(&m, &g, &h, cfg.lambda, cfg.min_child_weight);
        let realized = match tree.nodes[0] {
            Node::Leaf { .. } => None,
            Node::Split { left, .. } => {
                let (mut gl, mut hl, mut gr, mut hr) = (0.0, 0.0, 0.0, 0.0);
                for i in 0..6 {
                    if route(&tree, m.row(i)) == left {
                        gl += g[i];
                        hl += h[i];
                    } else {
                        gr += g[i];
                        hr += h[i];
                    }
                }
                let s = |g: f64, h: f64| g * g / (h + cfg.lambda);
                Some(0.5 * (s(gl, hl) + s(gr, hr) - s(gl + gr, hl + hr)))
            }
        };
        let same = match (oracle, realized) {
            (None, None) => true,
            (Some(a), Some(b)) => (a - b).abs() <= 1e-12,
            _ => false,
        };
        if !same {
            split_mismatches += 1;
        }
    }

    check(
        grad_worst < 1e-4 && leaf_worst <= 1e-10 && split_mismatches == 0,
        format!(
            "logistic gradient max rel err {grad_worst:.1e}; {leaves} leaves, max |leaf + G/(H+lambda)| {leaf_worst:.1e}; \
             root split gain mismatches vs exhaustive search {split_mismatches}/20"
        ),
    )
}

// ---------------------------------------------------------------- A6

fn train_accuracy(m: &SvmModel, x: &DesignMatrix) -> usize {
    let f = m.decision_function(&x.values).unwrap();
    f.iter().zip(&x.labels).filter(|(f, &y)| (**f > 0.0) == y).count()
}

fn a6() -> Outcome {
    let xor = DesignMatrix::new(
        Matrix::from_rows(&[[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]]),
        vec![false, false, true, true],
    );
    let rbf_cfg = SvmConfig { c: 10.0, gamma: GammaSpec::Value(1.0), tol: 1e-10, ..Default::default() };
    let rbf = train_svm(&xor, &rbf_cfg).unwrap();
    let lin = train_svm(&xor, &SvmConfig { c: 10.0, kernel: KernelKind::Linear, tol: 1e-10, ..Default::default() }).unwrap();
    let (acc_rbf, acc_lin) = (train_accuracy(&rbf, &xor), train_accuracy(&lin, &xor));

    // Dual feasibility from the stored coefficients alpha_i * y_i, also on a
    // larger noisy problem where some multipliers sit at the bound.
    let mut rng = rng_from_seed(6);
    let noisy = random_design(&mut rng, 80, 2);
    let noisy_model = train_svm(&noisy, &SvmConfig { c: 0.5, ..Default::default() }).unwrap();
    let mut box_violation = 0.0f64;
    let mut balance = 0.0f64;
    for m in [&rbf, &lin, &noisy_model] {
        for &coef in &m.dual_coef {
            let alpha = coef.abs();
            box_violation = box_violation.max((-alpha).max(alpha - m.c).max(0.0));
        }
        balance = balance.max(m.dual_coef.iter().sum::<f64>().abs());
    }
    let at_bound = noisy_model.dual_coef.iter().filter(|c| (c.abs() - 0.5).abs() < 1e-12).count();
    check(
        acc_rbf == 4 && acc_lin <= 3 && box_violation <= 1e-8 && balance <= 1e-8,
        format!(
            "XOR training accuracy rbf {acc_rbf}/4, linear {acc_lin}/4; max box violation {box_violation:.1e}, \
             max |sum alpha_i y_i| {balance:.1e} ({at_bound} multipliers at C in the noisy case)"
        ),
    )
}

// ---------------------------------------------------------------- A7

fn a7() -> Outcome {
    let mut rng = rng_from_seed(7);
    let mut x: Vec<f64> = (0..120).map(|_| rng.random_range(0.0..10.0)).collect();
    // A few exact ties in x.
    x[10] = x[11];
    x[50] = x[51];
    let constant = vec![0.37; x.len()];
    let linear: Vec<f64> = x.iter().map(|v| 1.5 - 0.8 * v).collect();
    let mut constant_exact = true;
    let mut linear_worst = 0.0f64;
    for iters in [0, 3] {
        constant_exact &= lowess(&x, &constant, 2.0 / 3.0, iters).unwrap() == constant;
        let fit = lowess(&x, &linear, 2.0 / 3.0, iters).unwrap();
        linear_worst = linear_worst.max(fit.iter().zip(&linear).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    check(
        constant_exact && linear_worst <= 1e-9,
        format!(
            "n = 120, frac 2/3, 0 and 3 robust iterations: constant reproduced exactly: {constant_exact}; \
             linear max error {linear_worst:.1e}"
        ),
    )
}

// ---------------------------------------------------------------- A8

fn a8() -> Outcome {
    // mean(p) = mean(y) exactly, in dyadic values.
    let y = [true, false, false, false, true, false, false, false];
    let flat = calibration_odds_ratio(&y, &[0.25; 8]).unwrap();
    let spread = calibration_odds_ratio(&y, &[0.125, 0.375, 0.0, 0.5, 0.25, 0.25, 0.125, 0.375]).unwrap();

    let mut rng = rng_from_seed(8);
    let n = 10_000;
    let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.02..0.98)).collect();
    let outcomes: Vec<bool> = p.iter().map(|&pi| rng.random::<f64>() < pi).collect();
    let or = calibration_odds_ratio(&outcomes, &p).unwrap();
    let yf: Vec<f64> = outcomes.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let deviation = |iters: usize| {
        let fit = lowess(&p, &yf, 2.0 / 3.0, iters).unwrap();
        p.iter()
            .zip(&fit)
            .filter(|(x, _)| (0.1..=0.9).contains(*x))
            .map(|(x, f)| (x - f).abs())
            .fold(0.0, f64::max)
    };
    let (dev0, dev3) = (deviation(0), deviation(3));
    check(
        flat == 1.0 && spread == 1.0 && (0.9..=1.1).contains(&or) && dev0 < 0.05,
        format!(
            "OR at mean(p) = mean(y): {flat}, {spread}; calibrated n = {n}: OR {or:.4}, \
             LOWESS (frac 2/3, no robustness iterations) max |curve - identity| on [0.1, 0.9] = {dev0:.4} \
             (with 3 bisquare iterations {dev3:.4}: they down-weight 0/1 outcomes far from the local fit)"
        ),
    )
}

// ---------------------------------------------------------------- A9

fn spearman_oracle(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (oracle_ranks(x), oracle_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn a9() -> Outcome {
    let start = Instant::now();
    let config = ExperimentConfig::load(Some(&study_config_path()), &[]).unwrap();
    let (config, seeds) = resolve(&config).unwrap();
    let prepared = prepare(&config, &seeds).unwrap();
    let report = run_ablation(&config, &prepared).unwrap();
    let elapsed = start.elapsed();
    let fractions: Vec<f64> = report.summary.iter().map(|s| s.fraction).collect();
    let means: Vec<f64> = report.summary.iter().map(|s| s.mean_upm.expect("defined mean UPM")).collect();
    let rho = spearman_oracle(&fractions, &means);
    let expected_grid: Vec<f64> = (1..=10).map(|k| f64::from(k) / 10.0).collect();
    let grid_ok = fractions.len() == 10 && fractions.iter().zip(&expected_grid).all(|(a, b)| (a - b).abs() < 1e-12);
    let rows_ok = report.rows.len() == 250 && report.repeats == 25 && report.skipped.is_empty();
    check(
        grid_ok && rows_ok && rho >= 0.6 && elapsed < Duration::from_secs(300),
        format!(
            "fractions 0.1..1.0 x 25 repeats ({} rows): Spearman(fraction, mean UPM) = {rho:.4}; mean UPM {:.4} -> {:.4}; {}",
            report.rows.len(),
            means.first().copied().unwrap_or(f64::NAN),
            means.last().copied().unwrap_or(f64::NAN),
            secs(elapsed)
        ),
    )
}

// ---------------------------------------------------------------- A10

fn sensitivity(y: &[bool], p: &[f64], t: f64) -> f64 {
    let pos = y.iter().filter(|&&b| b).count() as f64;
    y.iter().zip(p).filter(|(&b, &pi)| b && pi > t).count() as f64 / pos
}

fn a10() -> Outcome {
    let mut rng = rng_from_seed(10);
    let mut violations = 0;
    let mut cases = 0;
    let mut unreachable_floors = 0;
    while cases < 1000 {
        let n = rng.random_range(2..60);
        // Coarse scores so that ties are common.
        let p: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..=20)) / 20.0).collect();
        let y: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        if !y.iter().any(|&b| b) {
            continue;
        }
        let floor = rng.random_range(0.0..=1.0);
        let mut candidates = p.clone();
        candidates.push(0.0);
        let Ok(t) = min_threshold_for_sensitivity(&y, &p, floor) else {
            // Only acceptable when no candidate reaches the floor.
            if candidates.iter().any(|&c| sensitivity(&y, &p, c) >= floor) {
                violations += 1;
            }
            unreachable_floors += 1;
            cases += 1;
            continue;
        };
        let larger_meets = candidates.iter().any(|&c| c > t && sensitivity(&y, &p, c) >= floor);
        if sensitivity(&y, &p, t) < floor || larger_meets {
            violations += 1;
        }
        cases += 1;
    }
    check(violations == 0, format!(
            "{cases} random score/label vectors ({unreachable_floors} with an unreachable floor, correctly rejected): \
             {violations} violations of floor or maximality"
        ))
}

// ----------------------------------------------------------------

fn run(id: &str, title: &str, f: impl FnOnce() -> Outcome) -> bool {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|panic| {
        let msg = panic
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        check(false, format!("panicked: {msg}"))
    });
    let word = match outcome.status {
        Status::Pass => "PASS",
        Status::Fail => "FAIL",
        Status::Unattainable => "UNATTAINABLE",
    };
    println!("{id:<4} {word:<12} {title}: {}", outcome.detail);
    !matches!(outcome.status, Status::Fail)
}

fn main() {
    // `cargo test -- <filter>` passes arguments; accept a filter on criterion ids.
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |id: &str| filter.is_empty() || filter.iter().any(|f| f.eq_ignore_ascii_case(id));
    // Panics are reported on the criterion's line.
    std::panic::set_hook(Box::new(|_| {}));
    let work = tempfile::tempdir().unwrap();
    let (first, second) = (work.path().join("run1"), work.path().join("run2"));

    let mut all_ok = true;
    let mut go = |id: &str, title: &str, f: &dyn Fn() -> Outcome| {
        if wanted(id) {
            all_ok &= run(id, title, f);
        }
    };
    go("A1", "UPM identity", &a1);
    go("A2", "Wilcoxon oracle", &a2);
    go("A3", "end-to-end planted signal", &|| a3(&first));
    go("A4", "determinism", &|| {
        if !first.join("reports/report.json").exists() {
            let _ = run_all(&first);
        }
        a4(&first, &second)
    });
    go("A5", "gradient and tree structure", &a5);
    go("A6", "SVM correctness", &a6);
    go("A7", "LOWESS exactness", &a7);
    go("A8", "calibration odds ratio", &a8);
    go("A9", "ablation trend", &a9);
    go("A10", "threshold floor", &a10);
    if !all_ok {
        std::process::exit(1);
    }
}
