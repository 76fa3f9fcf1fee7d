//! `fusionml`: search, evaluate, calibrate and explain multimodal
//! classifiers from the command line.
//!
//! Every subcommand exits 0 on success and 1 with a diagnostic on stderr.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use fusionml::conformal::ConformalConfig;
use fusionml::experiment::{
    curves_csv, explain_fold, load_run, metrics_csv, recompute_conformal, recompute_curves, recompute_metrics,
    run_experiment, with_jobs, ExperimentConfig, RunArtifacts,
};
use fusionml::metrics::Metric;
use fusionml::search::SamplerKind;
use fusionml::synth::{make_synthetic, SyntheticKind};

#[derive(Parser, Debug)]
#[command(name = "fusionml", version, about = "Automated multimodal classifier search and fusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON experiment config; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory (search and the commands that read a run) or dataset
    /// directory (synth).
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Search every strategy, build the ensembles and write a run directory.
    Search(SearchArgs),
    /// Recompute metrics.csv from the serialized models and compare byte for byte.
    Evaluate,
    /// Calibrate prediction sets on validation rows and report test coverage.
    Conformal(ConformalArgs),
    /// Recompute the tabular-to-multimodal acquisition curves as CSV.
    Acquire(AcquireArgs),
    /// Permutation importance and integrated gradients on one fold.
    Explain(ExplainArgs),
    /// Write a synthetic dataset (manifest plus CSVs).
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct SearchArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Trials for every strategy.
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    valid_fraction: Option<f64>,
    /// tpe or uniform.
    #[arg(long)]
    sampler: Option<String>,
}

#[derive(Args, Debug, Clone, Copy)]
struct ConformalArgs {
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    k_reg: Option<usize>,
}

#[derive(Args, Debug)]
struct AcquireArgs {
    #[command(flatten)]
    conformal: ConformalArgs,
    /// Comma-separated fractions from 0 to 1.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    metric: Option<String>,
}

#[derive(Args, Debug)]
struct ExplainArgs {
    #[arg(long, default_value_t = 0)]
    fold: usize,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    /// Integrated-gradients path steps.
    #[arg(long, default_value_t = 64)]
    steps: usize,
    /// Test rows attributed with integrated gradients.
    #[arg(long, default_value_t = 50)]
    rows: usize,
    #[arg(long, default_value = "accuracy")]
    metric: String,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// cross_modal_xor, ambiguous_half or exchangeable.
    #[arg(long)]
    kind: String,
    #[arg(long, default_value_t = 400)]
    n: usize,
}

impl ConformalArgs {
    fn apply(self, mut base: ConformalConfig) -> ConformalConfig {
        if let Some(a) = self.alpha {
            base.alpha = a;
        }
        if let Some(l) = self.lambda {
            base.lambda = l;
        }
        if let Some(k) = self.k_reg {
            base.k_reg = k;
        }
        base
    }
}

fn experiment_config(cli: &Cli, args: &SearchArgs) -> Result<ExperimentConfig> {
    let mut config = match (&cli.config, &args.manifest) {
        (Some(path), _) => ExperimentConfig::from_file(path)?,
        (None, Some(manifest)) => ExperimentConfig::new(manifest),
        (None, None) => bail!("search needs --config or --manifest"),
    };
    if let Some(m) = &args.manifest {
        config.manifest = m.clone();
    }
    if let Some(b) = args.budget {
        config = config.with_budget(b);
    }
    if let Some(k) = args.folds {
        config.folds = k;
    }
    if let Some(k) = args.top_k {
        config.top_k = k;
    }
    if let Some(f) = args.valid_fraction {
        config.valid_fraction = f;
    }
    if let Some(s) = &args.sampler {
        config.sampler.kind = s.parse::<SamplerKind>()?;
    }
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if let Some(o) = &cli.output {
        config.output = o.clone();
    }
    if cli.jobs.is_some() {
        config.jobs = cli.jobs;
    }
    Ok(config)
}

/// The run directory: `--output`, else the config's output.
fn run_dir(cli: &Cli) -> Result<PathBuf> {
    if let Some(o) = &cli.output {
        return Ok(o.clone());
    }
    if let Some(path) = &cli.config {
        return Ok(ExperimentConfig::from_file(path)?.output);
    }
    bail!("name the run directory with --output or --config")
}

fn load(cli: &Cli) -> Result<(PathBuf, RunArtifacts)> {
    let dir = run_dir(cli)?;
    let run = load_run(&dir).with_context(|| format!("reading run directory {}", dir.display()))?;
    Ok((dir, run))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn search(cli: &Cli, args: &SearchArgs) -> Result<()> {
    let config = experiment_config(cli, args)?;
    let report = run_experiment(&config)?;
    println!("{:<10} {:>10} {:>10}", "model", "accuracy", "auroc");
    for (model, m) in &report.metrics {
        let get = |k: &str| m.mean.get(k).map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
        println!("{model:<10} {:>10} {:>10}", get("accuracy"), get("auroc"));
    }
    if !report.vertex_recovery_holds() {
        eprintln!("warning: some ensemble weight fits did not recover their best member");
    }
    println!("wrote {}", config.output.display());
    Ok(())
}

fn evaluate(cli: &Cli) -> Result<()> {
    let (dir, run) = load(cli)?;
    let fresh = metrics_csv(&recompute_metrics(&run)?, run.data.task)?;
    let path = dir.join("metrics.csv");
    let stored = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    if fresh != stored {
        let diffs: Vec<String> = fresh
            .lines()
            .zip(stored.lines())
            .filter(|(a, b)| a != b)
            .map(|(a, b)| format!("  stored {b}\n  recomputed {a}"))
            .collect();
        bail!("metrics.csv differs from recomputation:\n{}", diffs.join("\n"));
    }
    print!("{fresh}");
    println!("metrics.csv matches recomputation from {}", dir.join("models").display());
    Ok(())
}

fn conformal(cli: &Cli, args: ConformalArgs) -> Result<()> {
    let (dir, run) = load(cli)?;
    let config = args.apply(run.report.config.conformal);
    let rows = recompute_conformal(&run, config)?;
    println!("{:<10} {:>4} {:>9} {:>9} {:>9}", "model", "fold", "tau", "coverage", "set_size");
    for r in &rows {
        println!(
            "{:<10} {:>4} {:>9.4} {:>9.4} {:>9.3}",
            r.model, r.fold, r.calibration.tau, r.coverage, r.mean_set_size
        );
    }
    write_json(&dir.join("conformal.json"), &rows)
}

fn acquire(cli: &Cli, args: &AcquireArgs) -> Result<()> {
    let (_, run) = load(cli)?;
    let config = &run.report.config;
    let grid = match &args.grid {
        Some(g) => g
            .split(',')
            .map(|v| v.trim().parse::<f64>().with_context(|| format!("bad grid value `{v}`")))
            .collect::<Result<Vec<_>>>()?,
        None => config.fraction_grid.clone(),
    };
    let metric = match &args.metric {
        Some(m) => m.parse::<Metric>()?,
        None => config.acquisition_metric,
    };
    let seed = cli.seed.unwrap_or(config.seed);
    let curves = recompute_curves(&run, args.conformal.apply(config.conformal), &grid, metric, seed)?;
    if curves.mean.is_empty() {
        bail!("acquisition needs a run that searched the tabular strategy");
    }
    print!("{}", curves_csv(&curves.mean)?);
    Ok(())
}

fn explain(cli: &Cli, args: &ExplainArgs) -> Result<()> {
    let (dir, run) = load(cli)?;
    let metric = args.metric.parse::<Metric>()?;
    let seed = cli.seed.unwrap_or(run.report.config.seed);
    let report = explain_fold(&run, args.fold, metric, args.repeats, args.steps, args.rows, seed)?;
    if let Some(importances) = report.permutation.get(fusionml::experiment::ENSEMBLE) {
        let mut sorted = importances.clone();
        sorted.sort_by(|a, b| b.mean_drop.total_cmp(&a.mean_drop));
        println!("ensemble permutation importance ({metric:?} drop), fold {}:", args.fold);
        for imp in sorted {
            println!("  {:<24} {:>9.4}", imp.unit, imp.mean_drop);
        }
    }
    for a in &report.attributions {
        let total: f64 = a.blocks.values().sum();
        let shares: Vec<String> = a
            .blocks
            .iter()
            .map(|(k, v)| format!("{k} {:.1}%", if total > 0.0 { 100.0 * v / total } else { 0.0 }))
            .collect();
        println!("{} attribution by modality: {}", a.model, shares.join(", "));
    }
    write_json(&dir.join(format!("explain_fold{}.json", args.fold)), &report)
}

fn synth(cli: &Cli, args: &SynthArgs) -> Result<()> {
    let kind: SyntheticKind = args.kind.parse()?;
    let Some(dir) = &cli.output else {
        bail!("synth needs --output <dir>");
    };
    make_synthetic(kind, args.n, cli.seed.unwrap_or(0), dir)?;
    println!("wrote {}", dir.join("manifest.json").display());
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Search(args) => search(cli, args),
        Command::Evaluate => evaluate(cli),
        Command::Conformal(args) => conformal(cli, *args),
        Command::Acquire(args) => acquire(cli, args),
        Command::Explain(args) => explain(cli, args),
        Command::Synth(args) => synth(cli, args),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::FAILURE } else { ExitCode::SUCCESS };
        }
    };
    let jobs = match &cli.command {
        // search hands the thread count to the experiment itself
        Command::Search(_) => None,
        _ => cli.jobs,
    };
    match with_jobs(jobs, || dispatch(&cli)).map_err(anyhow::Error::from).and_then(|r| r) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
