//! CSV and JSON writers for the output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;

use super::MetricRow;
use crate::conformal::{AcquisitionCurve, AcquisitionPolicy};
use crate::dataset::Task;
use crate::error::{Error, Result};
use crate::search::{Leaderboard, Strategy, TrialStatus};

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn metric_names(task: Task) -> [&'static str; 4] {
    match task {
        Task::Binary => ["accuracy", "auroc", "f1", "mcc"],
        Task::Multiclass => ["accuracy", "auroc", "balanced_accuracy", "macro_f1"],
    }
}

fn finish(writer: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = writer.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// One row per (model, fold); an undefined metric is an empty cell.
/// Floats use the shortest representation that parses back exactly.
pub fn metrics_csv(rows: &[MetricRow], task: Task) -> Result<String> {
    let names = metric_names(task);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["model", "fold"];
    header.extend(names);
    w.write_record(&header)?;
    for row in rows {
        let mut record = vec![row.model.clone(), row.fold.to_string()];
        record.extend(names.iter().map(|n| row.values.get(*n).map(|v| v.to_string()).unwrap_or_default()));
        w.write_record(&record)?;
    }
    finish(w)
}

/// Every trial of every strategy in evaluation order.
pub fn trials_csv(leaderboards: &BTreeMap<String, Leaderboard>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["strategy", "trial", "config", "fold_scores", "mean_score", "status", "message"])?;
    for strategy in Strategy::ALL {
        let Some(board) = leaderboards.get(strategy.name()) else {
            continue;
        };
        for trial in board.history() {
            let (status, message, mean) = match &trial.status {
                TrialStatus::Ok => ("ok", String::new(), trial.mean_score.to_string()),
                TrialStatus::Failed { message } => ("failed", message.clone(), String::new()),
            };
            let scores: Vec<String> = trial.fold_scores.iter().map(f64::to_string).collect();
            w.write_record([
                strategy.name().to_string(),
                trial.id.to_string(),
                serde_json::to_string(&trial.config)?,
                scores.join(";"),
                mean,
                status.to_string(),
                message,
            ])?;
        }
    }
    finish(w)
}

/// Long format: one row per (policy, fraction).
pub fn curves_csv(curves: &[AcquisitionCurve]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["policy", "fraction", "metric"])?;
    for curve in curves {
        let policy = match curve.policy {
            AcquisitionPolicy::Uncertainty => "uncertainty",
            AcquisitionPolicy::Random => "random",
        };
        for (u, m) in &curve.points {
            w.write_record([policy.to_string(), u.to_string(), m.to_string()])?;
        }
    }
    finish(w)
}
