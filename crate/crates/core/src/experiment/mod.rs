//! Cross-validated experiments end to end: configuration, the search and
//! ensemble build, and the files written to the output directory.
//!
//! The layout of an output directory is fixed:
//!
//! ```text
//! report.json   metrics.csv   trials.csv   curves.csv
//! models/folds.json
//! models/fold{f}/{tabular,imaging,late,early,joint,ensemble}.json
//! ```
//!
//! A run that fails after creating its directory leaves a `FAILED` file
//! holding the error message.

mod audit;
mod output;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use audit::{
    explain_fold, load_run, recompute_conformal, recompute_curves, recompute_metrics, ExplainReport,
    ModalityAttribution, RunArtifacts,
};
pub use output::{curves_csv, metrics_csv, trials_csv};

use crate::conformal::{
    acquisition_curve, calibrate_predictions, check_grid, coverage, predict_sets, AcquisitionCurve,
    AcquisitionPolicy, ConformalCalibration, ConformalConfig,
};
use crate::dataset::{load_manifest, make_folds, FoldSplit, MultimodalDataset, Task};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, Metric, MetricReport};
use crate::prob::ProbabilityMatrix;
use crate::rng::derive_seed;
use crate::search::{build_fusion_ensemble, EnsembleConfig, Leaderboard, SamplerConfig, Strategy, VertexCheck};

/// Model name of the outer ensemble in reports and file names.
pub const ENSEMBLE: &str = "ensemble";

fn default_folds() -> usize {
    5
}

fn default_valid_fraction() -> f64 {
    0.2
}

fn default_budgets() -> BTreeMap<Strategy, usize> {
    Strategy::ALL.iter().map(|&s| (s, 10)).collect()
}

fn default_top_k() -> usize {
    3
}

fn default_weight_budget() -> usize {
    64
}

fn default_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

fn default_output() -> PathBuf {
    PathBuf::from("output")
}

fn default_metric() -> Metric {
    Metric::Accuracy
}

/// Everything a run depends on. Unset keys take their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub manifest: PathBuf,
    /// Must agree with the manifest when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<Task>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_valid_fraction")]
    pub valid_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    /// Trials per strategy; 0 skips a strategy.
    #[serde(default = "default_budgets")]
    pub budgets: BTreeMap<Strategy, usize>,
    /// Members per strategy ensemble.
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default = "default_weight_budget")]
    pub weight_budget: usize,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub conformal: ConformalConfig,
    #[serde(default = "default_grid")]
    pub fraction_grid: Vec<f64>,
    /// Metric traced by the acquisition curves.
    #[serde(default = "default_metric")]
    pub acquisition_metric: Metric,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    /// Worker threads; unset uses every core. Results do not depend on it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
}

impl ExperimentConfig {
    /// Defaults for everything but the manifest.
    pub fn new(manifest: impl Into<PathBuf>) -> Self {
        serde_json::from_value(serde_json::json!({ "manifest": manifest.into() })).expect("defaults deserialize")
    }

    /// Reads a JSON config. A relative manifest path resolves against the
    /// config file's directory; the output directory stays as written.
    pub fn from_file(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let mut config: Self = serde_json::from_str(&fs::read_to_string(path)?)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        if config.manifest.is_relative() {
            config.manifest = path.parent().unwrap_or_else(|| Path::new(".")).join(&config.manifest);
        }
        Ok(config)
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.budgets = Strategy::ALL.iter().map(|&s| (s, budget)).collect();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.folds < 2 {
            return fail(format!("folds must be at least 2, got {}", self.folds));
        }
        if !(self.valid_fraction > 0.0 && self.valid_fraction < 1.0) {
            return fail(format!("valid_fraction must lie in (0, 1), got {}", self.valid_fraction));
        }
        if self.top_k == 0 || self.weight_budget == 0 {
            return fail("top_k and weight_budget must be at least 1".into());
        }
        if self.budgets.values().all(|&b| b == 0) {
            return fail("every strategy budget is zero".into());
        }
        if self.jobs == Some(0) {
            return fail("jobs must be at least 1".into());
        }
        self.conformal.validate()?;
        check_grid(&self.fraction_grid)
    }

    pub fn ensemble_config(&self) -> EnsembleConfig {
        EnsembleConfig {
            budgets: self.budgets.clone(),
            top_k: self.top_k,
            weight_budget: self.weight_budget,
            sampler: self.sampler,
            spaces: BTreeMap::new(),
        }
    }

    /// Loads the manifest and dataset, checking the configured task.
    pub fn load_dataset(&self) -> Result<MultimodalDataset> {
        let manifest = load_manifest(&self.manifest)?;
        if let Some(task) = self.task {
            if task != manifest.task {
                return Err(Error::InvalidConfig(format!(
                    "config task {task:?} disagrees with manifest task {:?}",
                    manifest.task
                )));
            }
        }
        MultimodalDataset::load(&manifest)
    }
}

/// Runs `f` on a pool of `jobs` threads, or on the global pool.
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidConfig(format!("cannot start {n} worker threads: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// One row of metrics.csv.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub model: String,
    pub fold: usize,
    pub values: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n_rows: usize,
    pub task: Task,
    pub class_names: Vec<String>,
    pub tabular_width: usize,
    pub embedding_widths: BTreeMap<String, usize>,
}

impl DatasetSummary {
    pub fn of(data: &MultimodalDataset) -> Self {
        Self {
            n_rows: data.n_rows(),
            task: data.task,
            class_names: data.class_names.clone(),
            tabular_width: data.tabular.ncols(),
            embedding_widths: data.embeddings.iter().map(|(k, v)| (k.clone(), v.ncols())).collect(),
        }
    }
}

/// Ensemble weights fitted in one fold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldWeights {
    pub fold: usize,
    /// Member weights of each strategy ensemble, in leaderboard order.
    pub strategies: BTreeMap<String, Vec<f64>>,
    pub outer: BTreeMap<String, f64>,
}

/// Conformal calibration of one model in one fold, evaluated on test rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldConformal {
    pub model: String,
    pub fold: usize,
    pub calibration: ConformalCalibration,
    pub coverage: f64,
    pub mean_set_size: f64,
}

/// Acquisition curves per fold and averaged over folds.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CurveReport {
    pub per_fold: Vec<Vec<AcquisitionCurve>>,
    pub mean: Vec<AcquisitionCurve>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub dataset: DatasetSummary,
    pub folds: FoldSplit,
    /// Test metrics per strategy ensemble and for the outer ensemble.
    pub metrics: BTreeMap<String, MetricReport>,
    pub leaderboards: BTreeMap<String, Leaderboard>,
    /// Trial ids of each strategy ensemble's members.
    pub members: BTreeMap<String, Vec<usize>>,
    pub dropped: Vec<String>,
    pub weights: Vec<FoldWeights>,
    pub vertex_checks: Vec<VertexCheck>,
    pub conformal: Vec<FoldConformal>,
    pub curves: CurveReport,
    pub version: String,
}

impl RunReport {
    pub fn vertex_recovery_holds(&self) -> bool {
        self.vertex_checks.iter().all(|c| c.passed)
    }
}

/// Test predictions of every model in every fold, keyed by model name.
pub(crate) type FoldPredictions = Vec<BTreeMap<String, ProbabilityMatrix>>;

/// Model names in report order: searched strategies, then the ensemble.
pub(crate) fn model_order(included: &[String]) -> Vec<String> {
    let mut names: Vec<String> = Strategy::ALL
        .iter()
        .map(|s| s.name().to_string())
        .filter(|n| included.contains(n))
        .collect();
    names.push(ENSEMBLE.to_string());
    names
}

pub(crate) fn metric_rows(
    data: &MultimodalDataset,
    folds: &FoldSplit,
    test: &FoldPredictions,
    models: &[String],
) -> Result<Vec<MetricRow>> {
    let mut rows = Vec::new();
    for model in models {
        for (f, fold) in folds.folds.iter().enumerate() {
            let probs = test[f]
                .get(model)
                .ok_or_else(|| Error::InvalidConfig(format!("fold {f} has no `{model}` predictions")))?;
            rows.push(MetricRow {
                model: model.clone(),
                fold: f,
                values: evaluate(probs, &data.labels_at(&fold.test), data.task)?,
            });
        }
    }
    Ok(rows)
}

pub(crate) fn conformal_rows(
    data: &MultimodalDataset,
    folds: &FoldSplit,
    valid: &FoldPredictions,
    test: &FoldPredictions,
    models: &[String],
    config: ConformalConfig,
) -> Result<Vec<FoldConformal>> {
    let mut out = Vec::new();
    for model in models {
        for (f, fold) in folds.folds.iter().enumerate() {
            let calibration = calibrate_predictions(&valid[f][model], &data.labels_at(&fold.valid), config)?;
            let sets = predict_sets(&test[f][model], &calibration)?;
            out.push(FoldConformal {
                model: model.clone(),
                fold: f,
                calibration,
                coverage: coverage(&sets, &data.labels_at(&fold.test))?,
                mean_set_size: sets.iter().map(Vec::len).sum::<usize>() as f64 / sets.len() as f64,
            });
        }
    }
    Ok(out)
}

/// Tabular-to-ensemble acquisition curves, calibrated on each fold's
/// validation rows. Empty when the tabular strategy was not searched.
#[allow(clippy::too_many_arguments)]
pub(crate) fn curve_report(
    data: &MultimodalDataset,
    folds: &FoldSplit,
    valid: &FoldPredictions,
    test: &FoldPredictions,
    conformal: ConformalConfig,
    grid: &[f64],
    metric: Metric,
    seed: u64,
) -> Result<CurveReport> {
    let tabular = Strategy::Tabular.name();
    if valid.iter().any(|v| !v.contains_key(tabular)) {
        return Ok(CurveReport::default());
    }
    let policies = [AcquisitionPolicy::Uncertainty, AcquisitionPolicy::Random];
    let mut per_fold = Vec::new();
    for (f, fold) in folds.folds.iter().enumerate() {
        let calibration = calibrate_predictions(&valid[f][tabular], &data.labels_at(&fold.valid), conformal)?;
        let y = data.labels_at(&fold.test);
        let curves = policies
            .iter()
            .map(|&policy| {
                acquisition_curve(
                    &test[f][tabular],
                    &test[f][ENSEMBLE],
                    &y,
                    &calibration,
                    grid,
                    policy,
                    derive_seed(seed, &[0xACC, f as u64]),
                    |p, y| metric.compute(p, y),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        per_fold.push(curves);
    }
    let mean = policies
        .iter()
        .enumerate()
        .map(|(p, &policy)| AcquisitionCurve {
            policy,
            points: grid
                .iter()
                .enumerate()
                .map(|(g, &u)| (u, per_fold.iter().map(|c| c[p].points[g].1).sum::<f64>() / per_fold.len() as f64))
                .collect(),
        })
        .collect();
    Ok(CurveReport { per_fold, mean })
}

/// Searches every strategy, builds the ensembles, evaluates them on each
/// fold's test rows and writes the output directory.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunReport> {
    config.validate()?;
    let data = config.load_dataset()?;
    fs::create_dir_all(&config.output)?;
    let failed = config.output.join("FAILED");
    match run_loaded(config, &data) {
        Ok(report) => {
            if failed.exists() {
                fs::remove_file(&failed)?;
            }
            Ok(report)
        }
        Err(e) => {
            fs::write(&failed, format!("{e}\n"))?;
            Err(e)
        }
    }
}

fn run_loaded(config: &ExperimentConfig, data: &MultimodalDataset) -> Result<RunReport> {
    let folds = make_folds(&data.labels, &data.groups, config.folds, config.valid_fraction, config.seed)?;
    let ensemble = with_jobs(config.jobs, || {
        build_fusion_ensemble(data, &folds, &config.ensemble_config(), config.seed)
    })??;
    let checks = ensemble.vertex_checks();
    for c in checks.iter().filter(|c| !c.passed) {
        log::warn!("vertex recovery failed for {} in fold {} (gap {:e})", c.level, c.fold, c.gap);
    }

    let included: Vec<String> = ensemble.included().iter().map(|s| s.name().to_string()).collect();
    let models = model_order(&included);
    let mut valid: FoldPredictions = Vec::new();
    let mut test: FoldPredictions = Vec::new();
    let mut weights = Vec::new();
    let models_dir = config.output.join("models");
    fs::create_dir_all(&models_dir)?;
    output::write_json(&models_dir.join("folds.json"), &folds)?;
    for (f, fold) in ensemble.folds.iter().enumerate() {
        let dir = models_dir.join(format!("fold{f}"));
        fs::create_dir_all(&dir)?;
        let mut v = BTreeMap::new();
        let mut t = BTreeMap::new();
        for (strategy, artifact) in &fold.strategies {
            fs::write(dir.join(format!("{}.json", strategy.name())), artifact.predictor.to_json()?)?;
            v.insert(strategy.name().to_string(), artifact.valid.clone());
            t.insert(strategy.name().to_string(), artifact.test.clone());
        }
        fs::write(dir.join(format!("{ENSEMBLE}.json")), fold.ensemble.predictor.to_json()?)?;
        v.insert(ENSEMBLE.to_string(), fold.ensemble.valid.clone());
        t.insert(ENSEMBLE.to_string(), fold.ensemble.test.clone());
        valid.push(v);
        test.push(t);
        weights.push(FoldWeights {
            fold: f,
            strategies: fold
                .strategy_fits
                .iter()
                .map(|(s, fit)| (s.name().to_string(), fit.weights.clone()))
                .collect(),
            outer: fold
                .strategies
                .keys()
                .zip(&fold.outer_fit.weights)
                .map(|(s, &w)| (s.name().to_string(), w))
                .collect(),
        });
    }

    let rows = metric_rows(data, &folds, &test, &models)?;
    let conformal = conformal_rows(data, &folds, &valid, &test, &models, config.conformal)?;
    let curves = curve_report(
        data,
        &folds,
        &valid,
        &test,
        config.conformal,
        &config.fraction_grid,
        config.acquisition_metric,
        config.seed,
    )?;
    let metrics = models
        .iter()
        .map(|m| {
            let per_fold = rows.iter().filter(|r| &r.model == m).map(|r| r.values.clone()).collect();
            (m.clone(), MetricReport::from_folds(per_fold))
        })
        .collect();
    let report = RunReport {
        config: ExperimentConfig {
            manifest: fs::canonicalize(&config.manifest)?,
            jobs: None,
            ..config.clone()
        },
        dataset: DatasetSummary::of(data),
        folds,
        metrics,
        leaderboards: ensemble
            .leaderboards
            .iter()
            .map(|(s, l)| (s.name().to_string(), l.clone()))
            .collect(),
        members: ensemble
            .members
            .iter()
            .map(|(s, m)| (s.name().to_string(), m.clone()))
            .collect(),
        dropped: ensemble.dropped.iter().map(|s| s.name().to_string()).collect(),
        weights,
        vertex_checks: checks,
        conformal,
        curves,
        version: env!("CARGO_PKG_VERSION").to_string(),
    };

    fs::write(config.output.join("metrics.csv"), metrics_csv(&rows, data.task)?)?;
    fs::write(config.output.join("trials.csv"), trials_csv(&report.leaderboards)?)?;
    fs::write(config.output.join("curves.csv"), curves_csv(&report.curves.mean)?)?;
    output::write_json(&config.output.join("report.json"), &report)?;
    Ok(report)
}
