//! The `nonunion` command line: one subcommand per study step, all driven by a
//! single JSON experiment config with dotted `--set key=value` overrides.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Parser, Subcommand};
use log::info;
use serde::Serialize;

use crate::calibration::{calibration_csv, calibration_report};
use crate::cohort::{generate_synthetic_cohort, load_dataset, split_dataset, write_dataset, FeatureSchema, SyntheticConfig};
use crate::error::StageExt;
use crate::experiments::{self, resolve_models, DataSource, ExperimentConfig, OutputDir, Seeds, Stages};
use crate::metrics::{companion_metrics, confusion, default_grid, sweep_csv, sweep_thresholds, ConfusionMatrix, MetricReport};
use crate::models::{ModelArtifact, ModelKind};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "nonunion", version, about = "Failed-healing risk models: training, evaluation, comparison and calibration")]
pub struct Cli {
    /// Experiment config (JSON). Defaults apply to everything it leaves out.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override a config entry, e.g. `--set models.gbt.max_depth=3`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory (default: the config's `output_dir`, else `out`).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Master seed; replaces the config's `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort (cohort.csv + schema.json).
    Synth {
        /// Number of patients (default: the config's synthetic cohort size).
        #[arg(long)]
        n: Option<usize>,
    },
    /// Split a cohort CSV into train.csv and test.csv.
    Split {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        /// Test share (default: the config's `split.test_fraction`).
        #[arg(long)]
        test_fraction: Option<f64>,
    },
    /// Train models. With `--data`, fit on that CSV; otherwise run the
    /// split/holdout/threshold pipeline on the config's data source.
    Train {
        #[arg(long, requires = "schema")]
        data: Option<PathBuf>,
        #[arg(long)]
        schema: Option<PathBuf>,
        /// Model kinds to train (default: logistic, svm and gbt).
        #[arg(long = "model", value_parser = parse_kind)]
        models: Vec<ModelKind>,
    },
    /// Print the confusion matrix and metrics of a saved model on a CSV.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Write metrics over the threshold grid 0.00..1.00.
    Sweep {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Resampled pairwise comparison of the models.
    Compare,
    /// LOWESS calibration curve and calibration odds ratio of a saved model.
    Calibrate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Smoothing fraction (default: the config's `calibration.frac`).
        #[arg(long)]
        frac: Option<f64>,
        /// Robust iterations (default: the config's `calibration.robust_iters`).
        #[arg(long)]
        iters: Option<usize>,
    },
    /// Training-size ablation (learning curve).
    Ablate,
    /// Pipeline, comparison and ablation with the full output layout.
    RunAll,
}

fn parse_kind(s: &str) -> std::result::Result<ModelKind, String> {
    s.parse().map_err(|e: crate::models::ModelError| e.to_string())
}

impl Command {
    /// Subcommands that draw random numbers and therefore need a seed.
    fn needs_seed(&self) -> bool {
        !matches!(self, Command::Evaluate { .. } | Command::Sweep { .. } | Command::Calibrate { .. })
    }
}

/// Parse `args`, run the subcommand and return the process exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_logging(cli.verbose);
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let code = e.exit_code();
            let mut stderr = std::io::stderr();
            let _ = writeln!(stderr, "error: {e}");
            code
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .try_init();
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("outputs always serialize");
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{text}").map_err(|e| Error::io("<stdout>", e))
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(cli.config.as_deref(), &cli.overrides)?;
    if cli.seed.is_some() {
        config.seed = cli.seed;
    }
    config.validate()?;
    if cli.command.needs_seed() {
        config.master_seed()?;
    }
    Ok(config)
}

fn output_dir(cli: &Cli, config: &ExperimentConfig) -> Result<OutputDir> {
    let root = cli.out.clone().or_else(|| config.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    OutputDir::create(root)
}

fn write_config(out: &OutputDir, config: &ExperimentConfig) -> Result<()> {
    out.write("config.json", &format!("{}\n", config.to_json_pretty()))?;
    Ok(())
}

fn load_artifact_and_data(model: &Path, data: &Path) -> Result<(ModelArtifact, crate::cohort::Dataset)> {
    let artifact = ModelArtifact::load(model).stage("model")?;
    let dataset = load_dataset(data, &artifact.transformer.schema).stage("data")?;
    Ok((artifact, dataset))
}

#[derive(Debug, Serialize)]
struct Evaluation {
    model: ModelKind,
    rows: usize,
    threshold: f64,
    confusion: ConfusionMatrix,
    metrics: MetricReport,
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    experiments::configure_threads()?;
    let mut config = load_config(cli)?;
    match &cli.command {
        Command::Synth { n } => {
            let seeds = Seeds::derive(config.master_seed()?);
            let (size, generator) = match &config.data {
                DataSource::Synthetic { n: cfg_n, generator } => (n.unwrap_or(*cfg_n), generator.clone()),
                DataSource::Csv { .. } => (n.unwrap_or(797), SyntheticConfig::default()),
            };
            config.data = DataSource::Synthetic { n: size, generator: generator.clone() };
            let out = output_dir(cli, &config)?;
            write_config(&out, &config)?;
            let (data, _) = generate_synthetic_cohort(size, seeds.synthetic, &generator)?;
            write_dataset(&out.path("cohort.csv"), &data)?;
            out.write("schema.json", &format!("{}\n", data.schema().to_json_pretty()))?;
            info!("wrote {} patients to {}", data.len(), out.root().display());
        }
        Command::Split { data, schema, test_fraction } => {
            if let Some(f) = test_fraction {
                config.split.test_fraction = *f;
                config.validate()?;
            }
            let seeds = Seeds::derive(config.master_seed()?);
            config.data = DataSource::Csv { path: data.clone(), schema: schema.clone() };
            let out = output_dir(cli, &config)?;
            write_config(&out, &config)?;
            let schema = FeatureSchema::from_json_file(schema).stage("schema")?;
            let dataset = load_dataset(data, &schema).stage("data")?;
            let split = split_dataset(&dataset, config.split.test_fraction, seeds.split, config.split.stratified)?;
            write_dataset(&out.path("train.csv"), &dataset.subset(&split.train))?;
            write_dataset(&out.path("test.csv"), &dataset.subset(&split.test))?;
            out.write("split.json", &format!("{}\n", serde_json::to_string_pretty(&split).expect("serializable")))?;
        }
        Command::Train { data: Some(data), schema, models } => {
            let seeds = Seeds::derive(config.master_seed()?);
            let schema = schema.as_ref().expect("clap enforces --schema with --data");
            config.data = DataSource::Csv { path: data.clone(), schema: schema.clone() };
            config.models = resolve_models(&config.models, &seeds);
            let out = output_dir(cli, &config)?;
            write_config(&out, &config)?;
            let schema = FeatureSchema::from_json_file(schema).stage("schema")?;
            let dataset = load_dataset(data, &schema).stage("data")?;
            let kinds = if models.is_empty() { ModelKind::STUDY.to_vec() } else { models.clone() };
            for kind in kinds {
                let artifact = ModelArtifact::fit(&dataset, kind, &config.models).stage(&format!("{kind} model"))?;
                artifact.save(&out.path(&format!("models/{kind}.json")))?;
                info!("trained {kind} on {} rows", dataset.len());
            }
        }
        Command::Train { data: None, .. } => {
            let out = output_dir(cli, &config)?;
            experiments::run(&config, Stages::PIPELINE, &out)?;
        }
        Command::Evaluate { model, data, threshold } => {
            let out = output_dir(cli, &config)?;
            write_config(&out, &config)?;
            let (artifact, dataset) = load_artifact_and_data(model, data)?;
            let p = artifact.predict_proba(&dataset)?;
            let cm = confusion(dataset.outcomes(), &p, *threshold)?;
            let evaluation = Evaluation {
                model: artifact.kind,
                rows: dataset.len(),
                threshold: *threshold,
                confusion: cm,
                metrics: companion_metrics(&cm)?,
            };
            out.write("reports/evaluation.json", &format!("{}\n", serde_json::to_string_pretty(&evaluation).expect("serializable")))?;
            print_json(&evaluation)?;
        }
        Command::Sweep { model, data } => {
            let out = output_dir(cli, &config)?;
            write_config(&out, &config)?;
            let (artifact, dataset) = load_artifact_and_data(model, data)?;
            let p = artifact.predict_proba(&dataset)?;
            let points = sweep_thresholds(dataset.outcomes(), &p, &default_grid())?;
            out.write(&format!("plots/upm_vs_threshold_{}.csv", artifact.kind), &sweep_csv(&points))?;
        }
        Command::Calibrate { model, data, frac, iters } => {
            if let Some(f) = frac {
                config.calibration.frac = *f;
            }
            if let Some(i) = iters {
                config.calibration.robust_iters = *i;
            }
            config.validate()?;
            let out = output_dir(cli, &config)?;
            write_config(&out, &config)?;
            let (artifact, dataset) = load_artifact_and_data(model, data)?;
            let p = artifact.predict_proba(&dataset)?;
            let report = calibration_report(dataset.outcomes(), &p, config.calibration.frac, config.calibration.robust_iters)?;
            out.write(&format!("plots/calibration_{}.csv", artifact.kind), &calibration_csv(&report))?;
            print_json(&serde_json::json!({
                "model": artifact.kind,
                "rows": dataset.len(),
                "calibration_odds_ratio": report.odds_ratio,
                "frac": report.frac,
                "robust_iters": report.robust_iters,
            }))?;
        }
        Command::Compare => {
            let out = output_dir(cli, &config)?;
            let report = experiments::run(&config, Stages::COMPARISON, &out)?;
            let c = report.comparison.expect("comparison stage ran");
            print_json(&serde_json::json!({ "pairwise": c.pairwise, "control": c.control, "tests": c.tests }))?;
        }
        Command::Ablate => {
            let out = output_dir(cli, &config)?;
            experiments::run(&config, Stages::ABLATION, &out)?;
        }
        Command::RunAll => {
            let out = output_dir(cli, &config)?;
            experiments::run_all(&config, &out)?;
            info!("report written to {}", out.path("reports/report.json").display());
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_global_flags_after_subcommand() {
        let cli = Cli::try_parse_from(["nonunion", "synth", "--n", "50", "--seed", "3", "--set", "a.b=1", "-vv"]).unwrap();
        assert_eq!(cli.seed, Some(3));
        assert_eq!(cli.verbose, 2);
        assert_eq!(cli.overrides, vec!["a.b=1".to_string()]);
        assert!(matches!(cli.command, Command::Synth { n: Some(50) }));
    }

    #[test]
    fn usage_errors_exit_with_one() {
        assert_eq!(run_from_args(["nonunion", "frobnicate"]), 1);
        assert_eq!(run_from_args(["nonunion", "synth", "--bogus"]), 1);
        assert_eq!(run_from_args(["nonunion", "train", "--model", "forest"]), 1);
    }

    #[test]
    fn seed_requirement() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        assert_eq!(run_from_args(["nonunion", "synth", "--n", "40", "--out", out]), 1);
        assert_eq!(run_from_args(["nonunion", "synth", "--n", "40", "--seed", "1", "--out", out]), 0);
        assert!(dir.path().join("cohort.csv").exists());
    }
}
