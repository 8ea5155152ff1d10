//! `gal`: train, ablate and inspect gradient adjustment learning runs.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use gal_core::data::{ToyKind, ToyProblem};
use gal_core::gradcheck::finite_diff_gradcheck;
use gal_core::harness::{
    ablate, run_comparison, run_experiment, run_toy_arm, summarize, write_ablation_csv,
    write_summary_csv, write_toy_csv, ExperimentConfig, RunLog, Summary, Sweep, ToyGal,
};
use gal_core::linalg::{Matrix, SeededRng};
use gal_core::loss::{LossKind, Targets};
use gal_core::mlp::{MlpArchitecture, MlpModel};
use gal_core::optim::{OptimizerKind, OptimizerSpec};
use gal_core::stats::{t_test_from_summary, two_sample_t_test};
use gal_core::theory::{generalization_bound, quadratic_sweep, BoundInputs, DEFAULT_TAU_GRID};

#[derive(Parser)]
#[command(
    name = "gal",
    version,
    about = "Gradient adjustment learning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of a config; with adjustment enabled, also train the
    /// plain baseline and compare the two.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Skip the baseline arm when adjustment is enabled.
        #[arg(long)]
        no_baseline: bool,
    },
    /// Trace an optimizer on a two-dimensional test function.
    Toy(ToyArgs),
    /// Sweep one adjustment setting over a config.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        sweep: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generalization bound calculator, or the remainder bound sweep.
    Bounds(BoundsArgs),
    /// Compare backprop against central differences on a random MLP.
    Gradcheck {
        #[arg(long, default_value = "(8-6)")]
        arch: String,
        #[arg(long, default_value_t = 3)]
        inputs: usize,
        #[arg(long, default_value_t = 4)]
        outputs: usize,
        #[arg(long, default_value_t = 5)]
        batch: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Pooled two-sample t-test from two sample files or summary statistics.
    Ttest {
        /// Files with one number per line (or comma separated).
        #[arg(long, num_args = 2, value_names = ["A", "B"], conflicts_with = "summary")]
        files: Option<Vec<PathBuf>>,
        /// mean_a sd_a n_a mean_b sd_b n_b
        #[arg(long, num_args = 6, allow_negative_numbers = true)]
        summary: Option<Vec<f64>>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GalArm {
    On,
    Off,
    Both,
}

#[derive(Args)]
struct ToyArgs {
    #[arg(long)]
    problem: String,
    /// sgd, rmsprop, adam, adamw, adabound or lookahead (around SGD).
    #[arg(long)]
    optimizer: String,
    #[arg(long, value_enum, default_value = "both")]
    gal: GalArm,
    #[arg(long)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Defaults to the problem's own step size.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, default_value_t = ToyGal::default().alpha)]
    alpha: f64,
    #[arg(long, default_value_t = ToyGal::default().beta)]
    beta: f64,
    #[arg(long, default_value_t = ToyGal::default().adjuster_hidden)]
    adjuster: String,
}

#[derive(Args)]
struct BoundsArgs {
    /// Run the remainder bound check on random positive definite quadratics.
    #[arg(long)]
    check_remainder: bool,
    #[arg(long, default_value_t = 1000)]
    cases: usize,
    #[arg(long, default_value_t = DEFAULT_TAU_GRID)]
    tau_grid: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV of per-case results.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    hypotheses: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long, num_args = 2, allow_negative_numbers = true, value_names = ["A", "B"])]
    range: Option<Vec<f64>>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
}

fn print_summary(summary: &Summary) {
    println!(
        "{:<10} {:>24} {:>24} {:>22}",
        "metric", "baseline", "proposed", "(t, p)"
    );
    for r in &summary.rows {
        let proposed = match (r.proposed_mean, r.proposed_std) {
            (Some(m), Some(s)) => format!("{m:.4}±{s:.4}"),
            _ => "-".into(),
        };
        let test = match (r.t_stat, r.p_value) {
            (Some(t), Some(p)) => format!("({t:.2}, {p:.2e})"),
            _ => "-".into(),
        };
        println!(
            "{:<10} {:>24} {:>24} {:>22}",
            r.metric,
            format!("{:.4}±{:.4}", r.baseline_mean, r.baseline_std),
            proposed,
            test
        );
    }
    println!(
        "completed runs: baseline {}, proposed {}; failed runs: {}",
        summary.baseline_runs, summary.proposed_runs, summary.failed_runs
    );
}

fn report_failures(logs: &[RunLog]) -> bool {
    let mut ok = true;
    for log in logs {
        if let gal_core::harness::RunStatus::Failed { error } = &log.status {
            eprintln!("seed {} failed: {error}", log.seed);
            ok = false;
        }
    }
    ok
}

fn train(config: PathBuf, no_baseline: bool) -> Result<bool> {
    let config = ExperimentConfig::from_file(&config)
        .with_context(|| format!("loading {}", config.display()))?;
    let (logs, summary) = if config.gal.enabled && !no_baseline {
        let (base, prop, summary) = run_comparison(&config)?;
        let logs: Vec<RunLog> = base.into_iter().chain(prop).collect();
        (logs, summary)
    } else {
        let logs = run_experiment(&config)?;
        let summary = summarize(&logs, None)?;
        (logs, summary)
    };
    print_summary(&summary);
    if let Some(path) = &config.output.summary_path {
        write_summary_csv(&summary, path)?;
    }
    Ok(report_failures(&logs))
}

fn toy_optimizer(name: &str, lr: f64) -> Result<OptimizerSpec> {
    let lower = name.to_ascii_lowercase();
    if lower == "lookahead" || lower == "lookahead(sgd)" {
        return Ok(OptimizerSpec::sgd(lr).with_lookahead(5, 0.5));
    }
    let kind = OptimizerKind::from_name(&lower)?;
    let mut spec = OptimizerSpec::new(kind, lr);
    if kind == OptimizerKind::Adabound {
        spec.final_lr = lr;
    }
    Ok(spec)
}

fn toy(args: ToyArgs) -> Result<bool> {
    let problem = ToyProblem::new(ToyKind::from_name(&args.problem)?);
    let spec = toy_optimizer(
        &args.optimizer,
        args.lr.unwrap_or_else(|| problem.default_learning_rate()),
    )?;
    let gal = ToyGal {
        alpha: args.alpha,
        beta: args.beta,
        adjuster_hidden: args.adjuster,
        ..ToyGal::default()
    };
    let mut traces = Vec::new();
    if args.gal != GalArm::On {
        traces.push(run_toy_arm(&problem, &spec, None, args.steps, args.seed)?);
    }
    if args.gal != GalArm::Off {
        traces.push(run_toy_arm(
            &problem,
            &spec,
            Some(&gal),
            args.steps,
            args.seed,
        )?);
    }
    for t in &traces {
        let last = t.steps.last().expect("at least the start point");
        println!(
            "{:<8} final loss {:.6e} at ({:.6}, {:.6})",
            t.arm, last.loss, last.x, last.y
        );
    }
    if let Some(out) = &args.out {
        write_toy_csv(&traces.iter().collect::<Vec<_>>(), out)?;
    }
    Ok(true)
}

fn bounds(args: BoundsArgs) -> Result<bool> {
    if args.check_remainder {
        let (summary, rows) = quadratic_sweep(
            args.cases,
            args.tau_grid,
            1e-9,
            &mut SeededRng::new(args.seed),
        )?;
        let ratio: f64 = rows
            .iter()
            .map(|r| r.rhs_revisited / r.rhs_conventional)
            .sum::<f64>()
            / rows.len().max(1) as f64;
        println!(
            "cases {}, violations {}, ordering violations {}, mean tightening ratio {ratio:.4}",
            summary.trials, summary.violations, summary.ordering_violations
        );
        if let Some(out) = &args.out {
            let mut w = csv::Writer::from_path(out)?;
            for r in &rows {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        return Ok(summary.violations == 0 && summary.ordering_violations == 0);
    }
    let (Some(hypotheses), Some(delta), Some(dim), Some(range), Some(p), Some(samples)) = (
        args.hypotheses,
        args.delta,
        args.dim,
        args.range,
        args.p,
        args.samples,
    ) else {
        bail!("give --check-remainder, or all of --hypotheses --delta --dim --range --p --samples");
    };
    let inputs = BoundInputs {
        hypothesis_count: hypotheses,
        delta,
        dim,
        a: range[0],
        b: range[1],
        p,
        sample_count: samples,
    };
    println!("{}", generalization_bound(&inputs)?);
    Ok(true)
}

fn gradcheck(arch: &str, inputs: usize, outputs: usize, batch: usize, seed: u64) -> Result<bool> {
    let mut rng = SeededRng::new(seed);
    let arch = MlpArchitecture::parse(arch, inputs, outputs)?;
    let model = MlpModel::init(&arch, &mut rng)?;
    let x = Matrix::new(
        batch,
        inputs,
        (0..batch * inputs)
            .map(|_| rng.uniform(-1.0, 1.0))
            .collect(),
    )?;
    let real = Targets::Real(Matrix::new(
        batch,
        outputs,
        (0..batch * outputs)
            .map(|_| rng.uniform(-1.0, 1.0))
            .collect(),
    )?);
    let classes = Targets::Classes((0..batch).map(|_| rng.below(outputs)).collect());
    let mut ok = true;
    for (kind, y) in [
        (LossKind::MeanSquaredError, &real),
        (LossKind::SoftmaxCrossEntropy, &classes),
    ] {
        let err = finite_diff_gradcheck(&model, &x, y, kind)?;
        let pass = err < 1e-5;
        ok &= pass;
        println!(
            "{kind:?}: max relative error {err:.3e} {}",
            if pass { "ok" } else { "FAIL" }
        );
    }
    Ok(ok)
}

fn read_samples(path: &PathBuf) -> Result<Vec<f64>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .with_context(|| format!("bad number {s:?} in {}", path.display()))
        })
        .collect()
}

fn ttest(files: Option<Vec<PathBuf>>, summary: Option<Vec<f64>>) -> Result<bool> {
    let result = match (files, summary) {
        (Some(f), None) => two_sample_t_test(&read_samples(&f[0])?, &read_samples(&f[1])?)?,
        (None, Some(s)) => {
            let count = |v: f64| -> Result<usize> {
                if v < 0.0 || v.fract() != 0.0 {
                    bail!("sample counts must be whole numbers, got {v}");
                }
                Ok(v as usize)
            };
            t_test_from_summary(s[0], s[1], count(s[2])?, s[3], s[4], count(s[5])?)?
        }
        _ => bail!("give either --files A B or --summary mean_a sd_a n_a mean_b sd_b n_b"),
    };
    println!(
        "t = {:.4}, p = {:.4e}, df = {}",
        result.t_stat, result.p_value, result.df
    );
    Ok(true)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train {
            config,
            no_baseline,
        } => train(config, no_baseline),
        Command::Toy(args) => toy(args),
        Command::Ablate { config, sweep, out } => {
            let config = ExperimentConfig::from_file(&config)?;
            let rows = ablate(&config, Sweep::from_name(&sweep)?)?;
            for r in &rows {
                let metrics: Vec<String> = r
                    .metrics
                    .iter()
                    .map(|(k, (m, s))| format!("{k} {m:.4}±{s:.4}"))
                    .collect();
                println!(
                    "{:<18} {}  adjusted {:.3}  |r| {:.3e}",
                    r.label,
                    metrics.join("  "),
                    r.adjusted_fraction,
                    r.mean_abs_remainder
                );
            }
            if let Some(out) = out {
                write_ablation_csv(&rows, out)?;
            }
            Ok(rows.iter().all(|r| r.failed_runs == 0))
        }
        Command::Bounds(args) => bounds(args),
        Command::Gradcheck {
            arch,
            inputs,
            outputs,
            batch,
            seed,
        } => gradcheck(&arch, inputs, outputs, batch, seed),
        Command::Ttest { files, summary } => ttest(files, summary),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
