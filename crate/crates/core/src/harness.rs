//! Config-driven experiment runner.
//!
//! A run trains one task model per seed, optionally with gradient
//! adjustment, streams one JSON object per step to a per-seed JSONL file and
//! reports test metrics in original target units. Seeds are independent:
//! each owns its split, initialization, shuffling and adjuster streams, and
//! a failing seed does not stop its siblings.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{
    load_csv_dataset, make_synthetic, split, standardize, Dataset, SyntheticTask, Task, ToyProblem,
};
use crate::error::{GalError, Result};
use crate::gal::{
    gal_train_step, vanilla_train_step, AdjustmentSource, Branch, GalConfig, GalStepper,
    StepDiagnostics, UpdatePolicy,
};
use crate::linalg::{Matrix, SeededRng};
use crate::loss::{loss_value, FeatureLoss, LossKind, Targets};
use crate::mlp::{MlpArchitecture, MlpModel};
use crate::optim::{Optimizer, OptimizerSpec};
use crate::stats::{classification_error, mean, regression_metrics, sample_std, two_sample_t_test};

// Independent random streams derived from each run seed.
const STREAM_SPLIT: u64 = 1;
const STREAM_INIT: u64 = 2;
const STREAM_SHUFFLE: u64 = 3;
const STREAM_ADJUSTER: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Csv {
        path: PathBuf,
        target_columns: Vec<String>,
        task: Task,
    },
    Blobs {
        classes: usize,
        dim: usize,
        n: usize,
        spread: f64,
        /// Seed of the generator; the data is shared by all run seeds.
        #[serde(default)]
        data_seed: u64,
    },
    LinearRegression {
        dim: usize,
        n: usize,
        noise: f64,
        #[serde(default)]
        data_seed: u64,
    },
}

fn default_split() -> f64 {
    0.8
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub source: DatasetSource,
    #[serde(default = "default_split")]
    pub split_fraction: f64,
    #[serde(default = "default_true")]
    pub standardize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden widths, e.g. `"(100-50)"`.
    pub arch: String,
    /// Defaults to mean squared error for regression and softmax
    /// cross-entropy for classification.
    #[serde(default)]
    pub loss: Option<LossKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GalSection {
    pub enabled: bool,
    pub alpha: f64,
    pub beta: f64,
    pub policy: UpdatePolicy,
    pub adjuster_arch: String,
    pub adjustment_source: AdjustmentSource,
    pub noise_scaled: bool,
    /// Defaults to a fresh copy of the task optimizer's spec.
    pub adjuster_optimizer: Option<OptimizerSpec>,
}

impl Default for GalSection {
    fn default() -> Self {
        Self {
            enabled: false,
            alpha: 1e-3,
            beta: 1e-3,
            policy: UpdatePolicy::default(),
            adjuster_arch: "(16-4)".into(),
            adjustment_source: AdjustmentSource::Learned,
            noise_scaled: true,
            adjuster_optimizer: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Directory receiving `seed-<s>.jsonl` step logs and `seed-<s>.json`
    /// run records.
    pub log_path: Option<PathBuf>,
    /// CSV summary table.
    pub summary_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub gal: GalSection,
    pub optimizer: OptimizerSpec,
    pub train: TrainConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.train.seeds.is_empty() {
            return Err(GalError::InvalidConfig(
                "at least one seed is required".into(),
            ));
        }
        if self.train.epochs == 0 || self.train.batch_size == 0 {
            return Err(GalError::InvalidConfig(
                "epochs and batch size must be positive".into(),
            ));
        }
        if !(self.dataset.split_fraction > 0.0 && self.dataset.split_fraction < 1.0) {
            return Err(GalError::InvalidConfig(format!(
                "split fraction must be in (0, 1), got {}",
                self.dataset.split_fraction
            )));
        }
        self.optimizer.validate()?;
        self.model.arch.parse::<crate::mlp::HiddenWidths>()?;
        if self.gal.enabled {
            self.gal.adjuster_arch.parse::<crate::mlp::HiddenWidths>()?;
            if let Some(spec) = &self.gal.adjuster_optimizer {
                spec.validate()?;
            }
        }
        Ok(())
    }

    /// The same experiment with adjustment switched off.
    pub fn baseline(&self) -> Self {
        let mut c = self.clone();
        c.gal.enabled = false;
        c
    }

    fn gal_config(&self, feature_dim: usize) -> Result<GalConfig> {
        let arch = MlpArchitecture::parse(&self.gal.adjuster_arch, feature_dim, feature_dim)?;
        let adjuster_opt = self
            .gal
            .adjuster_optimizer
            .clone()
            .unwrap_or_else(|| self.optimizer.clone());
        let mut config = GalConfig::new(self.gal.alpha, self.gal.beta, arch, adjuster_opt);
        config.policy = self.gal.policy;
        config.adjustment_source = self.gal.adjustment_source;
        config.noise_scaled = self.gal.noise_scaled;
        Ok(config)
    }
}

pub fn load_dataset(config: &DatasetConfig) -> Result<Dataset> {
    match &config.source {
        DatasetSource::Csv {
            path,
            target_columns,
            task,
        } => load_csv_dataset(path, target_columns, *task),
        DatasetSource::Blobs {
            classes,
            dim,
            n,
            spread,
            data_seed,
        } => Ok(make_synthetic(
            SyntheticTask::Blobs {
                classes: *classes,
                dim: *dim,
                n: *n,
                spread: *spread,
            },
            &mut SeededRng::new(*data_seed),
        )?
        .dataset),
        DatasetSource::LinearRegression {
            dim,
            n,
            noise,
            data_seed,
        } => Ok(make_synthetic(
            SyntheticTask::LinearRegression {
                dim: *dim,
                n: *n,
                noise: *noise,
            },
            &mut SeededRng::new(*data_seed),
        )?
        .dataset),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FinalMetrics {
    Regression { mae: f64, mse: f64, r2: f64 },
    Classification { error: f64, accuracy: f64 },
}

impl FinalMetrics {
    pub fn values(&self) -> BTreeMap<String, f64> {
        match *self {
            FinalMetrics::Regression { mae, mse, r2 } => [("mae", mae), ("mse", mse), ("r2", r2)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            FinalMetrics::Classification { error, accuracy } => {
                [("error", error), ("accuracy", accuracy)]
                    .into_iter()
                    .map(|(k, v)| (k.to_string(), v))
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_metrics: FinalMetrics,
    pub adjusted_steps: usize,
    pub vanilla_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub seed: u64,
    pub config: ExperimentConfig,
    pub status: RunStatus,
    #[serde(skip)]
    pub steps: Vec<StepDiagnostics>,
    pub epochs: Vec<EpochSummary>,
    pub final_metrics: Option<FinalMetrics>,
    pub final_params: Vec<f64>,
    pub wall_ms: f64,
}

impl RunLog {
    pub fn completed(&self) -> bool {
        self.status == RunStatus::Completed
    }
}

struct Prepared {
    train: Dataset,
    test: Dataset,
    /// Test targets in original units.
    test_targets: Targets,
    stats: Option<crate::data::StandardizationStats>,
    loss: LossKind,
}

fn prepare(config: &ExperimentConfig, dataset: &Dataset, seed: u64) -> Result<Prepared> {
    let root = SeededRng::new(seed);
    let (train, test) = split(
        dataset,
        config.dataset.split_fraction,
        &mut root.fork(STREAM_SPLIT),
    )?;
    let test_targets = test.y.clone();
    let (stats, train, test) = if config.dataset.standardize {
        let (s, a, b) = standardize(&train, &test)?;
        (Some(s), a, b)
    } else {
        (None, train, test)
    };
    let loss = config.model.loss.unwrap_or(match dataset.task() {
        Task::Regression => LossKind::MeanSquaredError,
        Task::Classification => LossKind::SoftmaxCrossEntropy,
    });
    Ok(Prepared {
        train,
        test,
        test_targets,
        stats,
        loss,
    })
}

fn evaluate(model: &MlpModel, p: &Prepared) -> Result<(f64, FinalMetrics)> {
    let z = model.predict(&p.test.x)?;
    let test_loss = loss_value(&z, &p.test.y, p.loss)?;
    let metrics = match &p.test_targets {
        Targets::Real(y) => {
            let pred = match &p.stats {
                Some(s) => s.inverse_targets(&z)?,
                None => z,
            };
            let m = regression_metrics(y.as_slice(), pred.as_slice())?;
            FinalMetrics::Regression {
                mae: m.mae,
                mse: m.mse,
                r2: m.r2,
            }
        }
        Targets::Classes(labels) => {
            let error = classification_error(&z, labels)?;
            FinalMetrics::Classification {
                error,
                accuracy: 1.0 - error,
            }
        }
    };
    Ok((test_loss, metrics))
}

fn open_log(config: &ExperimentConfig, seed: u64) -> Result<Option<BufWriter<File>>> {
    match &config.output.log_path {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            Ok(Some(BufWriter::new(File::create(
                dir.join(format!("seed-{seed}.jsonl")),
            )?)))
        }
        None => Ok(None),
    }
}

/// Trains one seed. Errors during training are recorded in the returned
/// log's status rather than propagated.
pub fn run_seed(config: &ExperimentConfig, dataset: &Dataset, seed: u64) -> RunLog {
    let start = Instant::now();
    let mut log = RunLog {
        seed,
        config: config.clone(),
        status: RunStatus::Completed,
        steps: Vec::new(),
        epochs: Vec::new(),
        final_metrics: None,
        final_params: Vec::new(),
        wall_ms: 0.0,
    };
    if let Err(e) = train_seed(config, dataset, seed, &mut log) {
        log.status = RunStatus::Failed {
            error: e.to_string(),
        };
    }
    log.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    if let Some(dir) = &config.output.log_path {
        let record = serde_json::to_string_pretty(&log).map_err(GalError::from);
        let written = record.and_then(|r| {
            std::fs::write(dir.join(format!("seed-{seed}.json")), r).map_err(GalError::from)
        });
        if let (Err(e), RunStatus::Completed) = (written, &log.status) {
            log.status = RunStatus::Failed {
                error: e.to_string(),
            };
        }
    }
    log
}

fn train_seed(
    config: &ExperimentConfig,
    dataset: &Dataset,
    seed: u64,
    log: &mut RunLog,
) -> Result<()> {
    let p = prepare(config, dataset, seed)?;
    let root = SeededRng::new(seed);
    let output_dim = dataset.output_dim();
    let arch = MlpArchitecture::parse(&config.model.arch, p.train.x.cols(), output_dim)?;
    let mut model = MlpModel::init(&arch, &mut root.fork(STREAM_INIT))?;
    let mut optimizer = Optimizer::new(config.optimizer.clone())?;
    let mut stepper = if config.gal.enabled {
        Some(GalStepper::new(
            config.gal_config(output_dim)?,
            output_dim,
            root.fork(STREAM_ADJUSTER),
        )?)
    } else {
        None
    };
    let mut shuffle_rng = root.fork(STREAM_SHUFFLE);
    let mut sink = open_log(config, seed)?;

    let n = p.train.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0;
    for epoch in 0..config.train.epochs {
        shuffle_rng.shuffle(&mut order);
        let (mut loss_sum, mut batches, mut adjusted) = (0.0, 0, 0);
        for chunk in order.chunks(config.train.batch_size) {
            let x = p.train.x.select_rows(chunk);
            let y = p.train.y.select_rows(chunk);
            let diag = match stepper.as_mut() {
                Some(s) => {
                    gal_train_step(&mut model, s, &mut optimizer, &x, &y, p.loss, epoch, step)?
                }
                None => {
                    vanilla_train_step(&mut model, &mut optimizer, &x, &y, p.loss, epoch, step)?
                }
            };
            if let Some(w) = sink.as_mut() {
                serde_json::to_writer(&mut *w, &diag)?;
                w.write_all(b"\n")?;
            }
            loss_sum += diag.loss;
            batches += 1;
            if diag.branch == Branch::Adjusted {
                adjusted += 1;
            }
            log.steps.push(diag);
            step += 1;
        }
        if !model.flat_params().iter().all(|v| v.is_finite()) {
            return Err(GalError::NonFinite(format!(
                "parameters after epoch {epoch}"
            )));
        }
        let (test_loss, test_metrics) = evaluate(&model, &p)?;
        log.epochs.push(EpochSummary {
            epoch,
            train_loss: loss_sum / batches as f64,
            test_loss,
            test_metrics,
            adjusted_steps: adjusted,
            vanilla_steps: batches - adjusted,
        });
    }
    if let Some(w) = sink.as_mut() {
        w.flush()?;
    }
    log.final_metrics = log.epochs.last().map(|e| e.test_metrics);
    log.final_params = model.flat_params();
    Ok(())
}

/// Runs every seed of `config` on threads and returns logs in seed order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<RunLog>> {
    config.validate()?;
    let dataset = load_dataset(&config.dataset)?;
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut logs = Vec::with_capacity(config.train.seeds.len());
    for seeds in config.train.seeds.chunks(workers) {
        if seeds.len() == 1 {
            logs.push(run_seed(config, &dataset, seeds[0]));
            continue;
        }
        let batch: Vec<RunLog> = std::thread::scope(|scope| {
            let handles: Vec<_> = seeds
                .iter()
                .map(|&seed| {
                    let dataset = &dataset;
                    scope.spawn(move || run_seed(config, dataset, seed))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("run thread panicked"))
                .collect()
        });
        logs.extend(batch);
    }
    Ok(logs)
}

/// Reads a JSONL step log.
pub fn read_step_log(path: impl AsRef<Path>) -> Result<Vec<StepDiagnostics>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Steps that took the adjusted branch although the policy forbids it for
/// their logged losses.
pub fn safeguard_violations(steps: &[StepDiagnostics], policy: UpdatePolicy) -> usize {
    steps
        .iter()
        .filter(|s| {
            s.branch == Branch::Adjusted
                && match policy {
                    UpdatePolicy::ConditionalLe => s.tentative_loss > s.loss,
                    UpdatePolicy::ConditionalLt => s.tentative_loss >= s.loss,
                    UpdatePolicy::AlwaysAdjusted => false,
                    UpdatePolicy::AlwaysVanilla => true,
                }
        })
        .count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BranchCount {
    pub epoch: usize,
    pub adjusted: usize,
    pub vanilla: usize,
}

/// Adjusted and vanilla update counts per epoch, from a step log alone.
pub fn branch_counts_per_epoch(steps: &[StepDiagnostics]) -> Vec<BranchCount> {
    let mut out: Vec<BranchCount> = Vec::new();
    for s in steps {
        if out.last().is_none_or(|c| c.epoch != s.epoch) {
            out.push(BranchCount {
                epoch: s.epoch,
                adjusted: 0,
                vanilla: 0,
            });
        }
        let c = out.last_mut().expect("pushed above");
        match s.branch {
            Branch::Adjusted => c.adjusted += 1,
            Branch::Vanilla => c.vanilla += 1,
        }
    }
    out
}

/// A step log serialized without its wall-clock field, for replay
/// comparisons.
pub fn strip_wall_clock(steps: &[StepDiagnostics]) -> Vec<StepDiagnostics> {
    steps
        .iter()
        .map(|s| StepDiagnostics {
            wall_ms: 0.0,
            ..s.clone()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub metric: String,
    pub baseline_mean: f64,
    pub baseline_std: f64,
    pub proposed_mean: Option<f64>,
    pub proposed_std: Option<f64>,
    pub t_stat: Option<f64>,
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
    pub baseline_runs: usize,
    pub proposed_runs: usize,
    pub failed_runs: usize,
}

fn metric_table(logs: &[RunLog]) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut table: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut keys: Option<Vec<String>> = None;
    for log in logs.iter().filter(|l| l.completed()) {
        let values = log.final_metrics.map(|m| m.values()).unwrap_or_default();
        let these: Vec<String> = values.keys().cloned().collect();
        match &keys {
            Some(k) if *k != these => {
                return Err(GalError::InvalidConfig(format!(
                    "mismatched metric sets {k:?} and {these:?}"
                )));
            }
            _ => keys = Some(these),
        }
        for (k, v) in values {
            table.entry(k).or_default().push(v);
        }
    }
    Ok(table)
}

/// Mean ± standard deviation per metric over completed runs, with a pooled
/// t-test of `baseline` against `proposed` when both arms have two or more
/// completed runs.
pub fn summarize(baseline: &[RunLog], proposed: Option<&[RunLog]>) -> Result<Summary> {
    let base = metric_table(baseline)?;
    let prop = proposed.map(metric_table).transpose()?;
    if let Some(p) = &prop {
        if !base.is_empty() && !p.is_empty() && !base.keys().eq(p.keys()) {
            return Err(GalError::InvalidConfig(
                "baseline and proposed runs report different metrics".into(),
            ));
        }
    }
    let mut rows = Vec::new();
    for (metric, a) in &base {
        let b = prop.as_ref().and_then(|p| p.get(metric));
        let test = match b {
            Some(b) if a.len() >= 2 && b.len() >= 2 => two_sample_t_test(a, b).ok(),
            _ => None,
        };
        rows.push(SummaryRow {
            metric: metric.clone(),
            baseline_mean: mean(a)?,
            baseline_std: sample_std(a)?,
            proposed_mean: b.map(|b| mean(b)).transpose()?,
            proposed_std: b.map(|b| sample_std(b)).transpose()?,
            t_stat: test.map(|t| t.t_stat),
            p_value: test.map(|t| t.p_value),
        });
    }
    let failed = baseline
        .iter()
        .chain(proposed.unwrap_or_default())
        .filter(|l| !l.completed())
        .count();
    Ok(Summary {
        rows,
        baseline_runs: baseline.iter().filter(|l| l.completed()).count(),
        proposed_runs: proposed
            .unwrap_or_default()
            .iter()
            .filter(|l| l.completed())
            .count(),
        failed_runs: failed,
    })
}

fn opt_cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v}"))
}

pub fn write_summary_csv(summary: &Summary, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "metric",
        "baseline_mean",
        "baseline_std",
        "proposed_mean",
        "proposed_std",
        "t_stat",
        "p_value",
        "baseline_runs",
        "proposed_runs",
        "failed_runs",
    ])?;
    for r in &summary.rows {
        w.write_record([
            r.metric.clone(),
            format!("{}", r.baseline_mean),
            format!("{}", r.baseline_std),
            opt_cell(r.proposed_mean),
            opt_cell(r.proposed_std),
            opt_cell(r.t_stat),
            opt_cell(r.p_value),
            summary.baseline_runs.to_string(),
            summary.proposed_runs.to_string(),
            summary.failed_runs.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Baseline and adjusted arms of the same experiment, and their summary.
pub fn run_comparison(config: &ExperimentConfig) -> Result<(Vec<RunLog>, Vec<RunLog>, Summary)> {
    let mut base_cfg = config.baseline();
    let mut gal_cfg = config.clone();
    gal_cfg.gal.enabled = true;
    if let Some(dir) = &config.output.log_path {
        base_cfg.output.log_path = Some(dir.join("baseline"));
        gal_cfg.output.log_path = Some(dir.join("gal"));
    }
    let baseline = run_experiment(&base_cfg)?;
    let proposed = run_experiment(&gal_cfg)?;
    let summary = summarize(&baseline, Some(&proposed))?;
    Ok((baseline, proposed, summary))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sweep {
    Policy,
    Noise,
    Alpha,
    Beta,
    Arch,
}

impl Sweep {
    pub fn from_name(name: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(name.to_ascii_lowercase()))
            .map_err(|_| GalError::InvalidConfig(format!("unknown sweep {name:?}")))
    }
}

/// The labelled variants a sweep runs, starting with the plain baseline.
pub fn sweep_variants(config: &ExperimentConfig, sweep: Sweep) -> Vec<(String, ExperimentConfig)> {
    let mut out = vec![("baseline".to_string(), config.baseline())];
    let mut with = |label: String, f: &dyn Fn(&mut GalSection)| {
        let mut c = config.clone();
        c.gal.enabled = true;
        f(&mut c.gal);
        out.push((label, c));
    };
    match sweep {
        Sweep::Policy => {
            for policy in UpdatePolicy::ALL {
                with(policy.name().into(), &|g| g.policy = policy);
            }
        }
        Sweep::Noise => {
            with("learned".into(), &|g| {
                g.adjustment_source = AdjustmentSource::Learned
            });
            for (name, source) in [
                ("uniform", AdjustmentSource::NoiseUniform),
                ("normal", AdjustmentSource::NoiseNormal),
            ] {
                for scaled in [true, false] {
                    let label = format!("{name}_{}", if scaled { "scaled" } else { "unscaled" });
                    with(label, &|g| {
                        g.adjustment_source = source;
                        g.noise_scaled = scaled;
                    });
                }
            }
        }
        Sweep::Alpha => {
            for alpha in [0.0, 1e-3, 1e-2, 0.1, 0.5, 1.0] {
                with(format!("alpha={alpha}"), &|g| g.alpha = alpha);
            }
        }
        Sweep::Beta => {
            for beta in [1e-3, 1e-2, 0.1, 1.0, 10.0] {
                with(format!("beta={beta}"), &|g| g.beta = beta);
            }
        }
        Sweep::Arch => {
            for arch in ["()", "(4)", "(16-4)", "(64-16)", "(128-4)"] {
                with(format!("arch={arch}"), &|g| g.adjuster_arch = arch.into());
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub label: String,
    pub completed_runs: usize,
    pub failed_runs: usize,
    pub metrics: BTreeMap<String, (f64, f64)>,
    pub adjusted_fraction: f64,
    pub mean_abs_remainder: f64,
}

pub fn ablate(config: &ExperimentConfig, sweep: Sweep) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for (label, mut variant) in sweep_variants(config, sweep) {
        if let Some(dir) = &config.output.log_path {
            let safe: String = label
                .chars()
                .map(|c| {
                    if c.is_ascii_alphanumeric() || c == '.' {
                        c
                    } else {
                        '_'
                    }
                })
                .collect();
            variant.output.log_path = Some(dir.join(safe));
        }
        let logs = run_experiment(&variant)?;
        let table = metric_table(&logs)?;
        let mut metrics = BTreeMap::new();
        for (k, v) in table {
            metrics.insert(k, (mean(&v)?, sample_std(&v)?));
        }
        let steps: Vec<&StepDiagnostics> = logs
            .iter()
            .filter(|l| l.completed())
            .flat_map(|l| &l.steps)
            .collect();
        let count = steps.len().max(1) as f64;
        rows.push(AblationRow {
            label,
            completed_runs: logs.iter().filter(|l| l.completed()).count(),
            failed_runs: logs.iter().filter(|l| !l.completed()).count(),
            metrics,
            adjusted_fraction: steps
                .iter()
                .filter(|s| s.branch == Branch::Adjusted)
                .count() as f64
                / count,
            mean_abs_remainder: steps.iter().map(|s| s.abs_remainder).sum::<f64>() / count,
        });
    }
    Ok(rows)
}

pub fn write_ablation_csv(rows: &[AblationRow], path: impl AsRef<Path>) -> Result<()> {
    let metric_names: Vec<String> = rows
        .iter()
        .flat_map(|r| r.metrics.keys().cloned())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![
        "label".to_string(),
        "completed_runs".into(),
        "failed_runs".into(),
    ];
    for m in &metric_names {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_std"));
    }
    header.push("adjusted_fraction".into());
    header.push("mean_abs_remainder".into());
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.label.clone(),
            r.completed_runs.to_string(),
            r.failed_runs.to_string(),
        ];
        for m in &metric_names {
            match r.metrics.get(m) {
                Some((mu, sd)) => {
                    rec.push(format!("{mu}"));
                    rec.push(format!("{sd}"));
                }
                None => rec.extend([String::new(), String::new()]),
            }
        }
        rec.push(format!("{}", r.adjusted_fraction));
        rec.push(format!("{}", r.mean_abs_remainder));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Adjustment settings for a toy trajectory. The optimization variable is
/// itself the feature vector `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyGal {
    pub alpha: f64,
    pub beta: f64,
    pub adjuster_hidden: String,
    pub policy: UpdatePolicy,
}

impl Default for ToyGal {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            beta: 1.0,
            adjuster_hidden: "(8)".into(),
            policy: UpdatePolicy::ConditionalLe,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyStep {
    pub step: usize,
    pub x: f64,
    pub y: f64,
    pub loss: f64,
    pub adjusted: bool,
}

/// Loss and position before the first update and after each update.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToyTrace {
    pub arm: String,
    pub steps: Vec<ToyStep>,
}

impl ToyTrace {
    pub fn final_loss(&self) -> f64 {
        self.steps.last().map_or(f64::NAN, |s| s.loss)
    }
}

/// One trajectory from the problem's start point, vanilla when `gal` is
/// `None`.
pub fn run_toy_arm(
    problem: &ToyProblem,
    optimizer: &OptimizerSpec,
    gal: Option<&ToyGal>,
    steps: usize,
    seed: u64,
) -> Result<ToyTrace> {
    if steps == 0 {
        return Err(GalError::InvalidConfig(
            "toy runs need at least one step".into(),
        ));
    }
    let mut z = Matrix::row_vector(&problem.start);
    let mut opt = Optimizer::new(optimizer.clone())?;
    let mut stepper = match gal {
        Some(g) => {
            let arch = MlpArchitecture::parse(&g.adjuster_hidden, 2, 2)?;
            let mut config = GalConfig::new(g.alpha, g.beta, arch, optimizer.clone());
            config.policy = g.policy;
            Some(GalStepper::new(
                config,
                2,
                SeededRng::new(seed).fork(STREAM_ADJUSTER),
            )?)
        }
        None => None,
    };
    let record = |z: &Matrix, step, adjusted| -> Result<ToyStep> {
        Ok(ToyStep {
            step,
            x: z.get(0, 0),
            y: z.get(0, 1),
            loss: problem.value(z)?,
            adjusted,
        })
    };
    let mut trace = vec![record(&z, 0, false)?];
    for step in 1..=steps {
        let before = z.clone();
        let adjusted = match stepper.as_mut() {
            Some(s) => {
                let proposal = s.propose(&before, problem, opt.learning_rate())?;
                opt.apply_update(z.as_mut_slice(), proposal.update_gradient().as_slice())?;
                s.learn(&before, problem, &proposal)?;
                proposal.branch == Branch::Adjusted
            }
            None => {
                let (_, g) = problem.value_and_grad(&before)?;
                opt.apply_update(z.as_mut_slice(), g.as_slice())?;
                false
            }
        };
        trace.push(record(&z, step, adjusted)?);
    }
    Ok(ToyTrace {
        arm: if gal.is_some() { "gal" } else { "vanilla" }.into(),
        steps: trace,
    })
}

/// Vanilla and adjusted trajectories from the same start point.
pub fn run_toy(
    problem: &ToyProblem,
    optimizer: &OptimizerSpec,
    gal: &ToyGal,
    steps: usize,
    seed: u64,
) -> Result<(ToyTrace, ToyTrace)> {
    Ok((
        run_toy_arm(problem, optimizer, None, steps, seed)?,
        run_toy_arm(problem, optimizer, Some(gal), steps, seed)?,
    ))
}

pub fn write_toy_csv(traces: &[&ToyTrace], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["arm", "step", "x", "y", "loss", "adjusted"])?;
    for t in traces {
        for s in &t.steps {
            w.write_record([
                t.arm.clone(),
                s.step.to_string(),
                format!("{}", s.x),
                format!("{}", s.y),
                format!("{}", s.loss),
                s.adjusted.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
