//! Reloading a finished run and recomputing its numbers from the serialized
//! models and the dataset.

use std::collections::BTreeMap;
use std::fs;
use std::ops::Range;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{
    conformal_rows, curve_report, metric_rows, model_order, CurveReport, DatasetSummary, FoldConformal,
    FoldPredictions, MetricRow, RunReport,
};
use crate::conformal::ConformalConfig;
use crate::dataset::{Fold, MultimodalDataset};
use crate::error::{Error, Result};
use crate::fusion::{EarlyFusionModel, FittedPredictor, JointFusionModel, RepresentationSpec};
use crate::metrics::{permutation_importance, Importance, ImportanceUnit, Metric};
use crate::nn::{integrated_gradients, Differentiable};

/// A finished run: its report, the dataset it read and every fold's models.
#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub report: RunReport,
    pub data: MultimodalDataset,
    /// Per fold, model name to predictor.
    pub models: Vec<BTreeMap<String, FittedPredictor>>,
}

/// Reads `report.json` and `models/` from an output directory and reloads
/// the dataset named in the recorded config.
pub fn load_run(dir: &Path) -> Result<RunArtifacts> {
    let report_path = dir.join("report.json");
    if !report_path.is_file() {
        return Err(Error::MissingFile(report_path));
    }
    let report: RunReport = serde_json::from_str(&fs::read_to_string(&report_path)?)?;
    let data = report.config.load_dataset()?;
    if DatasetSummary::of(&data) != report.dataset {
        return Err(Error::InvalidConfig(format!(
            "dataset at {} no longer matches the one the run used",
            report.config.manifest.display()
        )));
    }
    let names = model_order(&report.members.keys().cloned().collect::<Vec<_>>());
    let models = (0..report.folds.k())
        .map(|f| {
            names
                .iter()
                .map(|name| {
                    let path = dir.join("models").join(format!("fold{f}")).join(format!("{name}.json"));
                    if !path.is_file() {
                        return Err(Error::MissingFile(path));
                    }
                    Ok((name.clone(), FittedPredictor::from_json(&fs::read_to_string(&path)?)?))
                })
                .collect::<Result<BTreeMap<_, _>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RunArtifacts { report, data, models })
}

impl RunArtifacts {
    /// Searched strategies in report order, then the ensemble.
    pub fn model_names(&self) -> Vec<String> {
        model_order(&self.report.members.keys().cloned().collect::<Vec<_>>())
    }

    fn predictions(&self, rows: impl Fn(&Fold) -> &[usize]) -> Result<FoldPredictions> {
        self.report
            .folds
            .folds
            .iter()
            .zip(&self.models)
            .map(|(fold, models)| {
                let batch = self.data.batch(rows(fold));
                models
                    .iter()
                    .map(|(name, m)| Ok((name.clone(), m.predict_proba(&batch)?)))
                    .collect()
            })
            .collect()
    }
}

/// Test metrics of every model in every fold, predicted afresh.
pub fn recompute_metrics(run: &RunArtifacts) -> Result<Vec<MetricRow>> {
    let test = run.predictions(|f| &f.test)?;
    metric_rows(&run.data, &run.report.folds, &test, &run.model_names())
}

/// Calibrates every model on each fold's validation rows under `config`.
pub fn recompute_conformal(run: &RunArtifacts, config: ConformalConfig) -> Result<Vec<FoldConformal>> {
    let valid = run.predictions(|f| &f.valid)?;
    let test = run.predictions(|f| &f.test)?;
    conformal_rows(&run.data, &run.report.folds, &valid, &test, &run.model_names(), config)
}

/// Tabular-to-ensemble acquisition curves under new settings.
pub fn recompute_curves(
    run: &RunArtifacts,
    config: ConformalConfig,
    grid: &[f64],
    metric: Metric,
    seed: u64,
) -> Result<CurveReport> {
    crate::conformal::check_grid(grid)?;
    let valid = run.predictions(|f| &f.valid)?;
    let test = run.predictions(|f| &f.test)?;
    curve_report(&run.data, &run.report.folds, &valid, &test, config, grid, metric, seed)
}

/// Integrated-gradients summary for one differentiable model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalityAttribution {
    /// Strategy whose highest-weight member was attributed.
    pub model: String,
    pub member: usize,
    pub n_rows: usize,
    /// Mean over rows of the summed absolute attribution of each block.
    pub blocks: BTreeMap<String, f64>,
    /// Mean absolute attribution of each input feature.
    pub features: Vec<(String, f64)>,
    pub max_completeness_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplainReport {
    pub fold: usize,
    pub metric: Metric,
    /// Permutation importance of tabular variables and embedding blocks.
    pub permutation: BTreeMap<String, Vec<Importance>>,
    pub attributions: Vec<ModalityAttribution>,
}

fn block_name(spec: &RepresentationSpec) -> String {
    match spec {
        RepresentationSpec::Embedding { name } => name.clone(),
        _ => "tabular".to_string(),
    }
}

fn block_features(spec: &RepresentationSpec, width: usize, tabular_names: &[String]) -> Vec<String> {
    match spec {
        RepresentationSpec::TabularRaw => tabular_names.to_vec(),
        other => (0..width).map(|j| format!("{}[{j}]", block_name(other))).collect(),
    }
}

fn attribute<M: Differentiable>(
    model: &M,
    raw: &Array2<f64>,
    baseline: &[f64],
    blocks: &[(String, Range<usize>)],
    steps: usize,
) -> Result<(BTreeMap<String, f64>, Vec<f64>, f64)> {
    let n = raw.nrows().max(1) as f64;
    let mut per_block: BTreeMap<String, f64> = blocks.iter().map(|(name, _)| (name.clone(), 0.0)).collect();
    let mut per_feature = vec![0.0; baseline.len()];
    let mut max_gap: f64 = 0.0;
    for row in raw.outer_iter() {
        let a = integrated_gradients(model, &row.to_vec(), baseline, None, steps)?;
        max_gap = max_gap.max(a.completeness_gap());
        for (name, range) in blocks {
            *per_block.get_mut(name).expect("block registered") +=
                a.values[range.clone()].iter().map(|v| v.abs()).sum::<f64>() / n;
        }
        for (p, v) in per_feature.iter_mut().zip(&a.values) {
            *p += v.abs() / n;
        }
    }
    Ok((per_block, per_feature, max_gap))
}

fn early_attribution(
    model: &EarlyFusionModel,
    batch: &crate::dataset::ModalBatch,
    names: &[String],
    steps: usize,
) -> Result<(BTreeMap<String, f64>, Vec<(String, f64)>, f64)> {
    let blocks: Vec<(String, Range<usize>)> = model
        .representations
        .iter()
        .zip(model.blocks())
        .map(|(r, range)| (block_name(&r.spec), range))
        .collect();
    let labels: Vec<String> = model
        .representations
        .iter()
        .flat_map(|r| block_features(&r.spec, r.width, names))
        .collect();
    let (b, f, gap) = attribute(model, &model.raw_features(batch)?, &model.default_baseline(), &blocks, steps)?;
    Ok((b, labels.into_iter().zip(f).collect(), gap))
}

fn joint_attribution(
    model: &JointFusionModel,
    batch: &crate::dataset::ModalBatch,
    names: &[String],
    steps: usize,
) -> Result<(BTreeMap<String, f64>, Vec<(String, f64)>, f64)> {
    let mut start = 0;
    let mut blocks = Vec::new();
    let mut labels = Vec::new();
    for (b, w) in model.branches.iter().zip(model.input_widths()) {
        blocks.push((block_name(&b.representation.spec), start..start + w));
        labels.extend(block_features(&b.representation.spec, w, names));
        start += w;
    }
    let (b, f, gap) = attribute(model, &model.raw_features(batch)?, &model.default_baseline(), &blocks, steps)?;
    Ok((b, labels.into_iter().zip(f).collect(), gap))
}

/// Permutation importance of every model on one fold's test rows, plus
/// integrated gradients of the leading member of each differentiable
/// strategy on at most `max_rows` of those rows.
pub fn explain_fold(
    run: &RunArtifacts,
    fold: usize,
    metric: Metric,
    repeats: usize,
    ig_steps: usize,
    max_rows: usize,
    seed: u64,
) -> Result<ExplainReport> {
    let folds = &run.report.folds.folds;
    let spec = folds
        .get(fold)
        .ok_or_else(|| Error::InvalidConfig(format!("fold {fold} out of range (run has {})", folds.len())))?;
    let data = &run.data;
    let batch = data.batch(&spec.test);
    let y = data.labels_at(&spec.test);

    let sources = data.schema.feature_sources();
    let mut units: Vec<ImportanceUnit> = data
        .schema
        .names()
        .into_iter()
        .enumerate()
        .map(|(j, name)| ImportanceUnit::Tabular {
            name,
            columns: (0..sources.len()).filter(|&c| sources[c] == j).collect(),
        })
        .filter(|u| matches!(u, ImportanceUnit::Tabular { columns, .. } if !columns.is_empty()))
        .collect();
    units.extend(data.embedding_names().into_iter().map(|name| ImportanceUnit::Embedding { name, columns: None }));

    let mut permutation = BTreeMap::new();
    for (name, model) in &run.models[fold] {
        let importances =
            permutation_importance(|b| model.predict_proba(b), &batch, &y, &units, metric, repeats, seed)?;
        permutation.insert(name.clone(), importances);
    }

    let rows: Vec<usize> = spec.test.iter().copied().take(max_rows).collect();
    let ig_batch = data.batch(&rows);
    let mut attributions = Vec::new();
    for (name, model) in &run.models[fold] {
        let FittedPredictor::Weighted { model: ensemble } = model else {
            continue;
        };
        let lead = (0..ensemble.weights.len())
            .max_by(|&a, &b| ensemble.weights[a].total_cmp(&ensemble.weights[b]).then(b.cmp(&a)))
            .expect("ensembles have members");
        let result = match &ensemble.members[lead] {
            FittedPredictor::Imaging { model } | FittedPredictor::Early { model } => {
                early_attribution(model, &ig_batch, &data.feature_names, ig_steps)?
            }
            FittedPredictor::Joint { model } => joint_attribution(model, &ig_batch, &data.feature_names, ig_steps)?,
            _ => continue,
        };
        attributions.push(ModalityAttribution {
            model: name.clone(),
            member: lead,
            n_rows: rows.len(),
            blocks: result.0,
            features: result.1,
            max_completeness_gap: result.2,
        });
    }
    Ok(ExplainReport {
        fold,
        metric,
        permutation,
        attributions,
    })
}
