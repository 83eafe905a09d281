//! Config files and the multi-strategy experiment runner.
//!
//! An experiment runs every configured strategy for every repetition.
//! Repetition `k` derives one master seed shared by all strategies, so the
//! strategies see the same data, partition, initialization and cohorts and
//! differ only in how they aggregate.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::StrategyConfig;
use crate::data::PartitionMode;
use crate::error::{Error, Result};
use crate::federation::{run_training, DataSource, ModelArch, RoundRecord, RunConfig, TrainingOutcome};
use crate::metrics::{self, ExperimentSummary};
use crate::seed::{self, purpose};
use crate::trainer::TrainerConfig;

pub const PLOT_HEADER: &str = "strategy,repetition,round,accuracy,mean,ci95";
pub const INCOMPLETE_MARKER: &str = "INCOMPLETE";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_true")]
    pub emit_plot_data: bool,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_one")]
    pub repetitions: usize,
    #[serde(default)]
    pub federation: FederationSection,
    #[serde(default)]
    pub trainer: TrainerSection,
    #[serde(default)]
    pub model: ModelArch,
    #[serde(default)]
    pub data: DataSource,
    #[serde(default)]
    pub partition: PartitionSection,
    #[serde(rename = "strategy", default = "default_strategies")]
    pub strategies: Vec<StrategyConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationSection {
    #[serde(default = "default_clients")]
    pub clients: usize,
    #[serde(default = "default_participation")]
    pub participation: f64,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default = "default_one")]
    pub local_epochs: usize,
    #[serde(default = "default_eval_fraction")]
    pub eval_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerSection {
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub base_lr: f64,
    #[serde(default = "default_decay")]
    pub lr_decay: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionKind {
    #[default]
    Iid,
    NonIid,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSection {
    #[serde(default)]
    pub mode: PartitionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels_per_client: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cardinalities: Option<Vec<usize>>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}
fn default_threshold() -> f64 {
    0.6
}
fn default_true() -> bool {
    true
}
fn default_one() -> usize {
    1
}
fn default_clients() -> usize {
    100
}
fn default_participation() -> f64 {
    1.0
}
fn default_rounds() -> usize {
    100
}
fn default_eval_fraction() -> f64 {
    0.1
}
fn default_batch() -> usize {
    64
}
fn default_lr() -> f64 {
    1e-3
}
fn default_decay() -> f64 {
    0.99
}

/// FedAvg, FedCostWAvg and FedControl with `lambda` 1 and 0.8, all with
/// `alpha = beta = 1/3`.
pub fn default_strategies() -> Vec<StrategyConfig> {
    let third = 1.0 / 3.0;
    vec![
        StrategyConfig::fedavg(),
        StrategyConfig::fed_cost_w_avg(third, third),
        StrategyConfig::fedcontrol(third, third, 1.0),
        StrategyConfig::fedcontrol(third, third, 0.8),
    ]
}

impl Default for FederationSection {
    fn default() -> Self {
        FederationSection {
            clients: default_clients(),
            participation: default_participation(),
            rounds: default_rounds(),
            local_epochs: 1,
            eval_fraction: default_eval_fraction(),
        }
    }
}

impl Default for TrainerSection {
    fn default() -> Self {
        TrainerSection {
            batch_size: default_batch(),
            base_lr: default_lr(),
            lr_decay: default_decay(),
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            output_dir: default_output_dir(),
            threshold: default_threshold(),
            emit_plot_data: true,
            master_seed: 0,
            repetitions: 1,
            federation: FederationSection::default(),
            trainer: TrainerSection::default(),
            model: ModelArch::default(),
            data: DataSource::default(),
            partition: PartitionSection::default(),
            strategies: default_strategies(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::ConfigSyntax {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment config serializes to TOML")
    }

    pub fn partition_mode(&self) -> Result<PartitionMode> {
        match (self.partition.mode, self.partition.labels_per_client) {
            (PartitionKind::Iid, None) => Ok(PartitionMode::Iid),
            (PartitionKind::Iid, Some(_)) => Err(Error::config(
                "partition.labels_per_client",
                "only valid with mode = \"noniid\"",
            )),
            (PartitionKind::NonIid, Some(labels_per_client)) => {
                Ok(PartitionMode::NonIid { labels_per_client })
            }
            (PartitionKind::NonIid, None) => Err(Error::config(
                "partition.labels_per_client",
                "required with mode = \"noniid\"",
            )),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.strategies.is_empty() {
            return Err(Error::config("strategy", "at least one strategy is required"));
        }
        if self.repetitions < 1 {
            return Err(Error::config("repetitions", "must be >= 1"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::config("threshold", "must lie in (0, 1)"));
        }
        if self.federation.rounds < 1 {
            return Err(Error::config("federation.rounds", "must be >= 1"));
        }
        let mut labels = BTreeSet::new();
        for (i, strategy) in self.strategies.iter().enumerate() {
            strategy.validate().map_err(|e| match e {
                Error::InvalidConfig { field, message } => {
                    Error::config(field.replacen("strategy", &format!("strategy[{i}]"), 1), message)
                }
                other => other,
            })?;
            if !labels.insert(strategy.label()) {
                return Err(Error::config(
                    format!("strategy[{i}]"),
                    format!("duplicate strategy {}", strategy.label()),
                ));
            }
        }
        if let PartitionMode::NonIid { labels_per_client: 0 } = self.partition_mode()? {
            return Err(Error::config("partition.labels_per_client", "must be >= 1"));
        }
        self.run_config(&self.strategies[0], 0)?.validate()
    }

    pub fn repetition_seed(&self, repetition: usize) -> u64 {
        seed::derive_seed(self.master_seed, &[purpose::REPETITION, repetition as u64])
    }

    pub fn run_config(&self, strategy: &StrategyConfig, repetition: usize) -> Result<RunConfig> {
        Ok(RunConfig {
            num_clients: self.federation.clients,
            participation: self.federation.participation,
            rounds: self.federation.rounds,
            trainer: TrainerConfig {
                local_epochs: self.federation.local_epochs,
                batch_size: self.trainer.batch_size,
                base_lr: self.trainer.base_lr,
                lr_decay: self.trainer.lr_decay,
                shuffle_seed: 0,
            },
            strategy: *strategy,
            model: self.model.clone(),
            data: self.data.clone(),
            partition: self.partition_mode()?,
            cardinalities: self.partition.cardinalities.clone(),
            eval_fraction: self.federation.eval_fraction,
            master_seed: self.repetition_seed(repetition),
        })
    }
}

/// One finished run of the experiment grid.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub strategy: String,
    pub repetition: usize,
    pub outcome: TrainingOutcome,
}

#[derive(Debug, Clone, Serialize)]
pub struct StrategyReport {
    pub strategy: String,
    pub config: StrategyConfig,
    pub summary: ExperimentSummary,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub runs: Vec<RunResult>,
    pub strategies: Vec<StrategyReport>,
    pub files: Vec<PathBuf>,
}

/// Fixed-width float formatting (17 significant digits).
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

pub fn run_csv_path(dir: &Path, strategy: &str, repetition: usize) -> PathBuf {
    dir.join("runs").join(format!("{strategy}_rep{repetition}.csv"))
}

pub fn summary_path(dir: &Path, strategy: &str) -> PathBuf {
    dir.join(format!("summary_{strategy}.json"))
}

pub fn write_run_csv(path: &Path, records: &[RoundRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "round",
        "accuracy",
        "loss",
        "cohort_size",
        "mean_client_loss",
        "min_weight",
        "max_weight",
        "cohort",
    ])?;
    for r in records {
        let mean_loss = metrics::mean(&r.client_losses)?;
        let ws = r.weights.weights();
        let min_w = ws.iter().copied().fold(f64::INFINITY, f64::min);
        let max_w = ws.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let cohort = r.cohort.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
        w.write_record([
            r.round.to_string(),
            fmt_f64(r.accuracy),
            fmt_f64(r.loss),
            r.cohort.len().to_string(),
            fmt_f64(mean_loss),
            fmt_f64(min_w),
            fmt_f64(max_w),
            cohort,
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Long-format accuracy table, one row per (strategy, repetition, round).
/// `mean` and `ci95` are taken across the strategy's repetitions at that
/// round; `ci95` is empty when a strategy has a single repetition.
pub fn emit_plot_data(runs: &[RunResult], out_path: &Path) -> Result<()> {
    if runs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut order: Vec<&str> = Vec::new();
    for run in runs {
        if !order.contains(&run.strategy.as_str()) {
            order.push(&run.strategy);
        }
    }
    let mut w = csv::Writer::from_path(out_path)?;
    w.write_record(PLOT_HEADER.split(','))?;
    for name in order {
        let mut group: Vec<&RunResult> = runs.iter().filter(|r| r.strategy == name).collect();
        group.sort_by_key(|r| r.repetition);
        let curves: Vec<Vec<f64>> = group.iter().map(|r| r.outcome.accuracy_curve()).collect();
        let rounds = curves[0].len();
        let mut stats = Vec::with_capacity(rounds);
        for round in 0..rounds {
            let column: Vec<f64> = curves.iter().map(|c| c[round]).collect();
            let mean = metrics::mean(&column)?;
            let ci = if column.len() >= 2 {
                Some(metrics::mean_ci95(&column)?.1)
            } else {
                None
            };
            stats.push((mean, ci));
        }
        for (run, curve) in group.iter().zip(&curves) {
            for (round, &acc) in curve.iter().enumerate() {
                let (mean, ci) = stats[round];
                w.write_record([
                    name.to_string(),
                    run.repetition.to_string(),
                    (round + 1).to_string(),
                    fmt_f64(acc),
                    fmt_f64(mean),
                    fmt_opt(ci),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(out_path, e))
}

fn write_comparison(path: &Path, reports: &[StrategyReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "strategy",
        "repetitions",
        "final_mean_accuracy",
        "final_ci95",
        "r_threshold_mean",
        "r_threshold_ci95",
        "reached",
    ])?;
    for report in reports {
        let s = &report.summary;
        w.write_record([
            report.strategy.clone(),
            s.repetitions.to_string(),
            fmt_f64(s.final_mean_accuracy),
            fmt_opt(s.final_ci95_accuracy),
            fmt_opt(s.r_threshold_mean),
            fmt_opt(s.r_threshold_ci95),
            s.r_threshold.iter().flatten().count().to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Run the strategy x repetition grid and write its artifacts under
/// `cfg.output_dir`:
///
/// * `runs/<strategy>_rep<k>.csv` per run,
/// * `summary_<strategy>.json` per strategy,
/// * `comparison.csv`,
/// * `plot_data.csv` when `emit_plot_data` is set.
///
/// An `INCOMPLETE` marker (holding the error text on failure) sits in the
/// output directory until every file has been written.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let dir = &cfg.output_dir;
    let runs_dir = dir.join("runs");
    fs::create_dir_all(&runs_dir).map_err(|e| Error::io(&runs_dir, e))?;
    let marker = dir.join(INCOMPLETE_MARKER);
    fs::write(&marker, "running\n").map_err(|e| Error::io(&marker, e))?;

    match write_artifacts(cfg, dir) {
        Ok(report) => {
            fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
            Ok(report)
        }
        Err(err) => {
            // Best effort: the marker already flags the directory.
            let _ = fs::write(&marker, format!("{err}\n"));
            Err(err)
        }
    }
}

fn write_artifacts(cfg: &ExperimentConfig, dir: &Path) -> Result<ExperimentReport> {
    let jobs: Vec<(usize, usize)> = (0..cfg.strategies.len())
        .flat_map(|s| (0..cfg.repetitions).map(move |k| (s, k)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(s, k)| {
            let strategy = &cfg.strategies[s];
            let outcome = run_training(&cfg.run_config(strategy, k)?)?;
            Ok(RunResult {
                strategy: strategy.label(),
                repetition: k,
                outcome,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut files = Vec::new();
    for run in &runs {
        let path = run_csv_path(dir, &run.strategy, run.repetition);
        write_run_csv(&path, &run.outcome.records)?;
        files.push(path);
    }

    let mut reports = Vec::with_capacity(cfg.strategies.len());
    for strategy in &cfg.strategies {
        let label = strategy.label();
        let curves: Vec<Vec<f64>> = runs
            .iter()
            .filter(|r| r.strategy == label)
            .map(|r| r.outcome.accuracy_curve())
            .collect();
        let report = StrategyReport {
            strategy: label.clone(),
            config: *strategy,
            summary: ExperimentSummary::from_curves(&curves, cfg.threshold)?,
        };
        let path = summary_path(dir, &label);
        let json = serde_json::to_string_pretty(&report)?;
        fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
        files.push(path);
        reports.push(report);
    }

    let comparison = dir.join("comparison.csv");
    write_comparison(&comparison, &reports)?;
    files.push(comparison);

    if cfg.emit_plot_data {
        let plot = dir.join("plot_data.csv");
        emit_plot_data(&runs, &plot)?;
        files.push(plot);
    }

    Ok(ExperimentReport {
        runs,
        strategies: reports,
        files,
    })
}
