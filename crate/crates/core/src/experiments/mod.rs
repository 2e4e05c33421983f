//! End-to-end study drivers: the full train/threshold/evaluate pipeline, the
//! resampled model comparison and the training-size ablation, plus the
//! output-directory layout they write.
//!
//! Every random draw derives from the config's master seed through named
//! streams, and parallel work is collected by task index, so a config fully
//! determines every number in the report.

mod config;
mod output;

use std::collections::BTreeMap;

use log::{info, warn};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{calibration_csv, calibration_report, CalibrationReport};
use crate::cohort::{ceil_count, generate_synthetic_cohort, load_dataset, split_dataset, Dataset, FeatureSchema, SplitIndices};
use crate::compare::{
    compare_scores, ecdf, ecdf_csv, make_resamples, paired_scores, spearman, ComparisonResult, Contender, ResamplePlan,
};
use crate::error::StageExt;
use crate::metrics::{
    companion_metrics, confusion, default_grid, min_threshold_for_sensitivity, min_threshold_for_specificity, sweep_csv,
    sweep_thresholds, ConfusionMatrix, MetricReport, SweepPoint,
};
use crate::models::{ModelArtifact, ModelConfigs, ModelKind};
use crate::rng::{derive_seed, rng_from_seed, stream};
use crate::{Error, Result};

pub use config::{
    apply_override, AblationConfig, CalibrationConfig, ComparisonConfig, DataSource, ExperimentConfig, SplitConfig,
    ThresholdPolicy,
};
pub use output::{confusion_csv, learning_curve_csv, OutputDir};

pub const REPORT_FORMAT_VERSION: u32 = 1;

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "NONUNION_THREADS";

/// Size the global worker pool from `NONUNION_THREADS` if it is set.
pub fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV}={raw} is not a positive integer")))?;
    if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
        warn!("worker pool already initialised; {THREADS_ENV} ignored");
    }
    Ok(())
}

/// Seeds of every random stream, derived from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub master: u64,
    pub synthetic: u64,
    pub split: u64,
    pub holdout: u64,
    pub resample: u64,
    pub shuffle: u64,
    pub ablation: u64,
    pub platt_folds: u64,
}

impl Seeds {
    pub fn derive(master: u64) -> Self {
        let s = |stream| derive_seed(master, stream, 0);
        Self {
            master,
            synthetic: s(stream::SYNTH),
            split: s(stream::SPLIT),
            holdout: s(stream::HOLDOUT),
            resample: s(stream::RESAMPLE),
            shuffle: s(stream::SHUFFLE),
            ablation: s(stream::ABLATION),
            platt_folds: s(stream::PLATT_FOLDS),
        }
    }
}

/// Model hyperparameters with the seeds that experiment drivers control.
pub fn resolve_models(models: &ModelConfigs, seeds: &Seeds) -> ModelConfigs {
    let mut m = models.clone();
    m.svm.seed = seeds.platt_folds;
    m
}

/// Validate `config`, require a seed and fill in derived seeds.
pub fn resolve(config: &ExperimentConfig) -> Result<(ExperimentConfig, Seeds)> {
    config.validate()?;
    let seeds = Seeds::derive(config.master_seed()?);
    let mut resolved = config.clone();
    resolved.models = resolve_models(&config.models, &seeds);
    Ok((resolved, seeds))
}

pub fn load_data(source: &DataSource, seeds: &Seeds) -> Result<Dataset> {
    match source {
        DataSource::Synthetic { n, generator } => {
            Ok(generate_synthetic_cohort(*n, seeds.synthetic, generator).stage("synthetic cohort")?.0)
        }
        DataSource::Csv { path, schema } => {
            let schema = FeatureSchema::from_json_file(schema).stage("schema")?;
            load_dataset(path, &schema).stage("cohort csv")
        }
    }
}

/// Cohort split into the training and the untouched test set.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub seeds: Seeds,
    pub split: SplitIndices,
    pub train: Dataset,
    pub test: Dataset,
}

pub fn prepare(config: &ExperimentConfig, seeds: &Seeds) -> Result<Prepared> {
    let data = load_data(&config.data, seeds)?;
    let split = split_dataset(&data, config.split.test_fraction, seeds.split, config.split.stratified).stage("split")?;
    let train = data.subset(&split.train);
    let test = data.subset(&split.test);
    info!("cohort: {} rows, {} train, {} test", data.len(), train.len(), test.len());
    Ok(Prepared { seeds: *seeds, split, train, test })
}

pub fn choose_threshold(policy: ThresholdPolicy, y: &[bool], p: &[f64]) -> Result<f64> {
    Ok(match policy {
        ThresholdPolicy::Fixed(t) => t,
        ThresholdPolicy::SensitivityFloor(target) => min_threshold_for_sensitivity(y, p, target)?,
        ThresholdPolicy::SpecificityFloor(target) => min_threshold_for_specificity(y, p, target)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub rows: usize,
    pub train_rows: usize,
    /// Training rows used for fitting (training set minus the holdout).
    pub fit_rows: usize,
    pub holdout_rows: usize,
    pub test_rows: usize,
    pub train_incidence: f64,
    pub test_incidence: f64,
    pub missing_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResult {
    pub model: ModelKind,
    /// Threshold chosen on the holdout according to the policy.
    pub threshold: f64,
    pub holdout_confusion: ConfusionMatrix,
    pub holdout_metrics: MetricReport,
    pub test_confusion: ConfusionMatrix,
    pub test_metrics: MetricReport,
    pub default_threshold: f64,
    pub test_confusion_default: ConfusionMatrix,
    pub test_metrics_default: MetricReport,
    /// `None` when the mean prediction or incidence is 0 or 1.
    pub calibration_odds_ratio: Option<f64>,
    pub unseen_categories: usize,
}

/// All-majority-class predictor evaluated on the test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub predicted_positive: bool,
    pub test_confusion: ConfusionMatrix,
    pub test_metrics: MetricReport,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub dataset: DatasetSummary,
    pub results: Vec<ModelResult>,
    pub baseline: BaselineResult,
    pub artifacts: Vec<ModelArtifact>,
    pub sweeps: Vec<Vec<SweepPoint>>,
    pub calibrations: Vec<Option<CalibrationReport>>,
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;

fn evaluate_at(y: &[bool], p: &[f64], threshold: f64) -> Result<(ConfusionMatrix, MetricReport)> {
    let cm = confusion(y, p, threshold)?;
    Ok((cm, companion_metrics(&cm)?))
}

/// Split off the holdout, train the three models on the rest of the training
/// set, choose thresholds on the holdout and evaluate on the test set.
pub fn run_full_pipeline(config: &ExperimentConfig, prepared: &Prepared) -> Result<PipelineOutput> {
    let train = &prepared.train;
    let test = &prepared.test;
    let hold = split_dataset(train, config.split.holdout_fraction, prepared.seeds.holdout, config.split.stratified)
        .stage("holdout split")?;
    let fit = train.subset(&hold.train);
    let holdout = train.subset(&hold.test);
    let models = resolve_models(&config.models, &prepared.seeds);

    let trained: Vec<Result<(ModelArtifact, ModelResult, Vec<SweepPoint>, Option<CalibrationReport>)>> = ModelKind::STUDY
        .par_iter()
        .map(|&kind| {
            let stage = format!("{kind} model");
            let artifact = ModelArtifact::fit(&fit, kind, &models).stage(&stage)?;
            let p_hold = artifact.predict_proba(&holdout).stage(&stage)?;
            let threshold = choose_threshold(config.threshold_policy, holdout.outcomes(), &p_hold)
                .map_err(|e| e.in_stage(format!("{kind} threshold")))?;
            let (holdout_confusion, holdout_metrics) = evaluate_at(holdout.outcomes(), &p_hold, threshold)?;
            let x_test = artifact.transformer.transform(test).stage(&stage)?;
            let p_test = artifact.classifier.predict_proba(&x_test.values).stage(&stage)?;
            let y = test.outcomes();
            let (test_confusion, test_metrics) = evaluate_at(y, &p_test, threshold)?;
            let (test_confusion_default, test_metrics_default) = evaluate_at(y, &p_test, DEFAULT_THRESHOLD)?;
            let sweep = sweep_thresholds(y, &p_test, &default_grid())?;
            let calibration = match calibration_report(y, &p_test, config.calibration.frac, config.calibration.robust_iters) {
                Ok(r) => Some(r),
                Err(e) => {
                    warn!("{kind}: calibration unavailable: {e}");
                    None
                }
            };
            let result = ModelResult {
                model: kind,
                threshold,
                holdout_confusion,
                holdout_metrics,
                test_confusion,
                test_metrics,
                default_threshold: DEFAULT_THRESHOLD,
                test_confusion_default,
                test_metrics_default,
                calibration_odds_ratio: calibration.as_ref().map(|c| c.odds_ratio),
                unseen_categories: x_test.unseen_categories,
            };
            Ok((artifact, result, sweep, calibration))
        })
        .collect();

    let mut out = PipelineOutput {
        dataset: DatasetSummary {
            rows: train.len() + test.len(),
            train_rows: train.len(),
            fit_rows: fit.len(),
            holdout_rows: holdout.len(),
            test_rows: test.len(),
            train_incidence: train.incidence(),
            test_incidence: test.incidence(),
            missing_fraction: (train.missing_fraction() * train.len() as f64
                + test.missing_fraction() * test.len() as f64)
                / (train.len() + test.len()) as f64,
        },
        results: Vec::new(),
        baseline: baseline(train, test)?,
        artifacts: Vec::new(),
        sweeps: Vec::new(),
        calibrations: Vec::new(),
    };
    for t in trained {
        let (artifact, result, sweep, calibration) = t?;
        info!("{}: threshold {:.4}, test UPM {:?}", result.model, result.threshold, result.test_metrics.upm);
        out.artifacts.push(artifact);
        out.results.push(result);
        out.sweeps.push(sweep);
        out.calibrations.push(calibration);
    }
    Ok(out)
}

/// Predict the training majority class for every test row.
pub fn baseline(train: &Dataset, test: &Dataset) -> Result<BaselineResult> {
    let predicted_positive = 2 * train.positives() > train.len();
    let p = vec![if predicted_positive { 1.0 } else { 0.0 }; test.len()];
    let (test_confusion, test_metrics) = evaluate_at(test.outcomes(), &p, DEFAULT_THRESHOLD)?;
    Ok(BaselineResult { predicted_positive, test_confusion, test_metrics })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub plan: ResamplePlan,
    pub subset_size: usize,
    pub threshold: f64,
    pub alpha: f64,
    /// Number of pairwise tests sharing the Bonferroni correction.
    pub tests: usize,
    /// Per-contender UPM on the test set, in resample order; `None` marks a
    /// failed training or an undefined UPM.
    pub scores: BTreeMap<String, Vec<Option<f64>>>,
    pub pairwise: Vec<ComparisonResult>,
    /// Genuine model against its label-shuffled twin, judged at the same corrected level.
    pub control: Option<ComparisonResult>,
}

pub fn run_comparison(config: &ExperimentConfig, prepared: &Prepared) -> Result<ComparisonReport> {
    let c = &config.comparison;
    let models = resolve_models(&config.models, &prepared.seeds);
    let resamples = make_resamples(prepared.train.len(), &c.resamples, prepared.seeds.resample).stage("resamples")?;
    let mut contenders: Vec<Contender> = c.models.iter().map(|&k| Contender::genuine(k)).collect();
    contenders.dedup();
    if let Some(kind) = c.shuffled_control {
        if !contenders.iter().any(|x| x.kind == kind && !x.shuffled_labels) {
            contenders.push(Contender::genuine(kind));
        }
        contenders.push(Contender::shuffled(kind));
    }
    let mut scores = BTreeMap::new();
    for contender in &contenders {
        info!("comparison: training {} x {}", resamples.len(), contender.name);
        let s = paired_scores(
            &resamples,
            &prepared.train,
            &prepared.test,
            contender,
            &models,
            c.threshold,
            prepared.seeds.shuffle,
        );
        let failed = s.iter().filter(|v| v.is_none()).count();
        if failed > 0 {
            warn!("{}: {failed} of {} resamples without a score", contender.name, s.len());
        }
        scores.insert(contender.name.clone(), s);
    }
    let pairs: Vec<(usize, usize)> =
        (0..c.models.len()).flat_map(|i| (i + 1..c.models.len()).map(move |j| (i, j))).collect();
    let k = pairs.len().max(1);
    let mut pairwise = Vec::with_capacity(pairs.len());
    for (i, j) in pairs {
        let (a, b) = (c.models[i].name(), c.models[j].name());
        pairwise.push(compare_scores(a, &scores[a], b, &scores[b], c.alpha, k).stage("comparison")?);
    }
    let control = match c.shuffled_control {
        Some(kind) => {
            let (a, b) = (Contender::genuine(kind).name, Contender::shuffled(kind).name);
            Some(compare_scores(&a, &scores[&a], &b, &scores[&b], c.alpha, k).stage("control comparison")?)
        }
        None => None,
    };
    Ok(ComparisonReport {
        plan: c.resamples.clone(),
        subset_size: c.resamples.subset_size(prepared.train.len()),
        threshold: c.threshold,
        alpha: c.alpha,
        tests: k,
        scores,
        pairwise,
        control,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub fraction: f64,
    pub repeat: usize,
    pub rows: usize,
    pub upm: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub fraction: f64,
    pub rows: usize,
    /// Repeats contributing to each mean.
    pub valid_repeats: usize,
    pub mean_upm: Option<f64>,
    pub mean_sensitivity: Option<f64>,
    pub mean_specificity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedFraction {
    pub fraction: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub model: ModelKind,
    pub threshold: f64,
    pub repeats: usize,
    pub rows: Vec<AblationRow>,
    pub summary: Vec<AblationSummary>,
    pub skipped: Vec<SkippedFraction>,
    /// Spearman correlation between fraction and mean UPM.
    pub spearman_fraction_upm: Option<f64>,
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// For each fraction `f` and repeat, draw `ceil(f · |train|)` training rows
/// with replacement, fit transformer and model, and score the whole test set.
pub fn run_ablation(config: &ExperimentConfig, prepared: &Prepared) -> Result<AblationReport> {
    let a = &config.ablation;
    let models = resolve_models(&config.models, &prepared.seeds);
    let n = prepared.train.len();
    let mut tasks = Vec::new();
    let mut skipped = Vec::new();
    for (fi, &fraction) in a.fractions.iter().enumerate() {
        let rows = ceil_count(fraction, n);
        if rows < a.min_rows {
            skipped.push(SkippedFraction { fraction, reason: format!("{rows} rows is below the minimum of {}", a.min_rows) });
            continue;
        }
        tasks.extend((0..a.repeats).map(|r| (fi, fraction, rows, r)));
    }
    let results: Vec<AblationRow> = tasks
        .par_iter()
        .map(|&(fi, fraction, rows, repeat)| {
            let mut rng = rng_from_seed(derive_seed(prepared.seeds.ablation, fi as u64, repeat as u64));
            let idx: Vec<usize> = (0..rows).map(|_| rng.random_range(0..n)).collect();
            let draw = prepared.train.subset(&idx);
            let scored = ModelArtifact::fit(&draw, a.model, &models)
                .and_then(|m| m.predict_proba(&prepared.test))
                .map_err(Error::from)
                .and_then(|p| evaluate_at(prepared.test.outcomes(), &p, a.threshold));
            match scored {
                Ok((_, m)) => AblationRow {
                    fraction,
                    repeat,
                    rows,
                    upm: m.upm,
                    sensitivity: m.sensitivity,
                    specificity: m.specificity,
                    error: None,
                },
                Err(e) => AblationRow {
                    fraction,
                    repeat,
                    rows,
                    upm: None,
                    sensitivity: None,
                    specificity: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let mut summary = Vec::new();
    for &fraction in &a.fractions {
        let rows: Vec<&AblationRow> = results.iter().filter(|r| r.fraction == fraction).collect();
        if rows.is_empty() {
            continue;
        }
        summary.push(AblationSummary {
            fraction,
            rows: rows[0].rows,
            valid_repeats: rows.iter().filter(|r| r.error.is_none()).count(),
            mean_upm: mean_defined(rows.iter().map(|r| r.upm)),
            mean_sensitivity: mean_defined(rows.iter().map(|r| r.sensitivity)),
            mean_specificity: mean_defined(rows.iter().map(|r| r.specificity)),
        });
    }
    let (fx, uy): (Vec<f64>, Vec<f64>) =
        summary.iter().filter_map(|s| Some((s.fraction, s.mean_upm?))).unzip();
    let spearman_fraction_upm = if fx.len() >= 2 { spearman(&fx, &uy) } else { None };
    Ok(AblationReport {
        model: a.model,
        threshold: a.threshold,
        repeats: a.repeats,
        rows: results,
        summary,
        skipped,
        spearman_fraction_upm,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub config_sha256: String,
    pub seeds: Seeds,
    pub started_at: String,
    pub finished_at: String,
    pub protocol: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format_version: u32,
    pub provenance: Provenance,
    pub dataset: Option<DatasetSummary>,
    pub models: Vec<ModelResult>,
    pub baseline: Option<BaselineResult>,
    pub comparison: Option<ComparisonReport>,
    pub ablation: Option<AblationReport>,
}

/// Which parts of the study to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stages {
    pub pipeline: bool,
    pub comparison: bool,
    pub ablation: bool,
}

impl Stages {
    pub const ALL: Stages = Stages { pipeline: true, comparison: true, ablation: true };
    pub const PIPELINE: Stages = Stages { pipeline: true, comparison: false, ablation: false };
    pub const COMPARISON: Stages = Stages { pipeline: false, comparison: true, ablation: false };
    pub const ABLATION: Stages = Stages { pipeline: false, comparison: false, ablation: true };
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn protocol_notes(config: &ExperimentConfig) -> Vec<String> {
    vec![
        "a sample is predicted positive iff its probability is strictly above the threshold".into(),
        format!(
            "thresholds chosen on the intermediate holdout ({} of the training set); the test set is used only for final metrics",
            config.split.holdout_fraction
        ),
        "resample scores are UPM values on the held-out test set".into(),
        "zero paired differences are discarded before ranking; effect size r = |Z|/sqrt(N) with N the number of pairs with both scores defined, zeros included".into(),
        format!(
            "exact signed-rank p-values with at most {} non-zero differences, normal approximation with tie and continuity correction otherwise",
            crate::compare::EXACT_MAX_N
        ),
        "ablation draws ceil(fraction * |train|) rows with replacement and refits the transformer per draw".into(),
        "class-weight ratios are computed on each training set actually used for fitting".into(),
    ]
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports always serialize");
    s.push('\n');
    s
}

/// Run the requested stages and write their outputs under `out`.
pub fn run(config: &ExperimentConfig, stages: Stages, out: &OutputDir) -> Result<RunReport> {
    let started_at = now();
    let (resolved, seeds) = resolve(config)?;
    out.write("config.json", &json(&resolved))?;
    let prepared = prepare(&resolved, &seeds)?;

    let mut report = RunReport {
        format_version: REPORT_FORMAT_VERSION,
        provenance: Provenance {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: resolved.sha256(),
            seeds,
            started_at,
            finished_at: String::new(),
            protocol: protocol_notes(&resolved),
        },
        dataset: None,
        models: Vec::new(),
        baseline: None,
        comparison: None,
        ablation: None,
    };

    if stages.pipeline {
        let p = run_full_pipeline(&resolved, &prepared)?;
        for (i, artifact) in p.artifacts.iter().enumerate() {
            let name = p.results[i].model.name();
            out.write(&format!("models/{name}.json"), &artifact.to_json())?;
            out.write(&format!("plots/upm_vs_threshold_{name}.csv"), &sweep_csv(&p.sweeps[i]))?;
            let r = &p.results[i];
            out.write(
                &format!("plots/confusion_{name}.csv"),
                &confusion_csv(&[("selected", r.test_confusion), ("default", r.test_confusion_default)]),
            )?;
            if let Some(cal) = &p.calibrations[i] {
                out.write(&format!("plots/calibration_{name}.csv"), &calibration_csv(cal))?;
            }
        }
        out.write("plots/confusion_baseline.csv", &confusion_csv(&[("majority", p.baseline.test_confusion)]))?;
        report.dataset = Some(p.dataset);
        report.models = p.results;
        report.baseline = Some(p.baseline);
    }
    if stages.comparison {
        let c = run_comparison(&resolved, &prepared)?;
        for (name, scores) in &c.scores {
            let defined: Vec<f64> = scores.iter().flatten().copied().collect();
            if let Ok(steps) = ecdf(&defined) {
                out.write(&format!("plots/ecdf_{name}.csv"), &ecdf_csv(&steps))?;
            }
        }
        report.comparison = Some(c);
    }
    if stages.ablation {
        let a = run_ablation(&resolved, &prepared)?;
        out.write("plots/learning_curve.csv", &learning_curve_csv(&a.rows))?;
        report.ablation = Some(a);
    }
    report.provenance.finished_at = now();
    out.write("reports/report.json", &json(&report))?;
    Ok(report)
}

pub fn run_all(config: &ExperimentConfig, out: &OutputDir) -> Result<RunReport> {
    run(config, Stages::ALL, out)
}
