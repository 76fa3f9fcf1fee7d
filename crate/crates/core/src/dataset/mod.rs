//! Multimodal dataset ingestion and patient-grouped cross-validation splits.

mod manifest;
mod schema;
mod split;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

pub use manifest::{load_manifest, DatasetManifest, Task};
pub use schema::{encode_tabular, ColumnKind, ColumnSchema, RawTable, TabularSchema, UNKNOWN_CATEGORY};
pub use split::{grouped_stratified_kfold, make_folds, split_train_valid, Fold, FoldSplit};

use crate::error::{Error, Result};

/// Aligned tabular features, named embedding matrices, labels and patient groups.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultimodalDataset {
    /// One-hot encoded features; NaN marks a missing numeric value.
    pub tabular: Array2<f64>,
    pub feature_names: Vec<String>,
    pub schema: TabularSchema,
    pub embeddings: BTreeMap<String, Array2<f64>>,
    pub labels: Vec<usize>,
    pub groups: Vec<String>,
    pub ids: Vec<String>,
    pub class_names: Vec<String>,
    pub task: Task,
}

/// The model-facing rows of a dataset (no labels).
#[derive(Clone, Debug, PartialEq)]
pub struct ModalBatch {
    pub tabular: Array2<f64>,
    pub embeddings: BTreeMap<String, Array2<f64>>,
}

impl ModalBatch {
    pub fn n_rows(&self) -> usize {
        self.tabular.nrows()
    }

    pub fn embedding(&self, name: &str) -> Result<&Array2<f64>> {
        self.embeddings
            .get(name)
            .ok_or_else(|| Error::Schema(format!("no embedding source named `{name}`")))
    }
}

impl MultimodalDataset {
    /// Assembles a dataset, checking row counts and finiteness.
    pub fn new(
        tabular: Array2<f64>,
        schema: TabularSchema,
        embeddings: BTreeMap<String, Array2<f64>>,
        labels: Vec<usize>,
        groups: Vec<String>,
        ids: Vec<String>,
        class_names: Vec<String>,
        task: Task,
    ) -> Result<Self> {
        let n = tabular.nrows();
        for (what, len) in [("labels", labels.len()), ("groups", groups.len()), ("ids", ids.len())] {
            if len != n {
                return Err(Error::shape(format!("{n} {what}"), len));
            }
        }
        if schema.width() != tabular.ncols() {
            return Err(Error::shape(schema.width(), tabular.ncols()));
        }
        for (name, e) in &embeddings {
            if e.nrows() != n {
                return Err(Error::shape(format!("{n} rows in `{name}`"), e.nrows()));
            }
            if e.iter().any(|v| !v.is_finite()) {
                return Err(Error::Schema(format!("non-finite value in embedding `{name}`")));
            }
        }
        if tabular.iter().any(|v| v.is_infinite()) {
            return Err(Error::Schema("infinite tabular value".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= class_names.len()) {
            return Err(Error::Schema(format!("label {bad} outside [0, {})", class_names.len())));
        }
        if task == Task::Binary && class_names.len() != 2 {
            return Err(Error::Schema(format!(
                "binary task needs exactly 2 classes, found {}",
                class_names.len()
            )));
        }
        Ok(Self {
            feature_names: schema.feature_names(),
            tabular,
            schema,
            embeddings,
            labels,
            groups,
            ids,
            class_names,
            task,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn embedding_names(&self) -> Vec<String> {
        self.embeddings.keys().cloned().collect()
    }

    pub fn batch(&self, rows: &[usize]) -> ModalBatch {
        ModalBatch {
            tabular: self.tabular.select(Axis(0), rows),
            embeddings: self
                .embeddings
                .iter()
                .map(|(k, v)| (k.clone(), v.select(Axis(0), rows)))
                .collect(),
        }
    }

    pub fn full_batch(&self) -> ModalBatch {
        ModalBatch {
            tabular: self.tabular.clone(),
            embeddings: self.embeddings.clone(),
        }
    }

    pub fn labels_at(&self, rows: &[usize]) -> Vec<usize> {
        rows.iter().map(|&i| self.labels[i]).collect()
    }

    /// Loads every file named by `manifest`, aligning embedding rows to the
    /// tabular row order by sample id.
    pub fn load(manifest: &DatasetManifest) -> Result<Self> {
        let table = read_csv_table(&manifest.tabular_path)?;
        let mut embeddings = BTreeMap::new();
        for (name, path) in &manifest.embedding_paths {
            embeddings.insert(name.clone(), read_embedding_csv(path)?);
        }
        Self::from_tables(manifest, &table, embeddings)
    }

    /// Builds a dataset from an in-memory tabular file and embedding files
    /// (`name → (ids, matrix)`), using the column roles of `manifest`.
    pub fn from_tables(
        manifest: &DatasetManifest,
        table: &RawTable,
        embedding_files: BTreeMap<String, (Vec<String>, Array2<f64>)>,
    ) -> Result<Self> {
        let col = |name: &str| -> Result<Vec<String>> {
            Ok(table
                .column(name)
                .ok_or_else(|| Error::Schema(format!("column `{name}` missing")))?
                .into_iter()
                .map(|s| s.trim().to_string())
                .collect())
        };
        let ids = col(&manifest.id_column)?;
        let groups = col(&manifest.group_column)?;
        let raw_labels = col(&manifest.label_column)?;

        let mut seen = BTreeSet::new();
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::Schema(format!("duplicate sample id `{dup}`")));
        }
        if let Some(i) = raw_labels.iter().position(|l| l.is_empty()) {
            return Err(Error::Schema(format!("sample `{}` has no label", ids[i])));
        }

        let class_names: Vec<String> = raw_labels
            .iter()
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let labels = raw_labels
            .iter()
            .map(|l| class_names.iter().position(|c| c == l).unwrap())
            .collect();

        let reserved = [
            &manifest.id_column,
            &manifest.group_column,
            &manifest.label_column,
        ];
        let feature_cols: Vec<String> = table
            .header
            .iter()
            .filter(|h| !reserved.contains(h))
            .cloned()
            .collect();
        let features = table.project(&feature_cols)?;
        let mut schema = TabularSchema::infer(&features);
        for (column, level) in &manifest.reference_levels {
            schema = schema.with_reference(column, level)?;
        }
        let tabular = encode_tabular(&features, &schema)?;

        let mut embeddings = BTreeMap::new();
        for (name, (emb_ids, matrix)) in embedding_files {
            let aligned = align_embeddings(&name, &ids, &emb_ids, matrix)?;
            embeddings.insert(name, aligned);
        }

        Self::new(
            tabular,
            schema,
            embeddings,
            labels,
            groups,
            ids,
            class_names,
            manifest.task,
        )
    }
}

fn align_embeddings(
    name: &str,
    ids: &[String],
    emb_ids: &[String],
    matrix: Array2<f64>,
) -> Result<Array2<f64>> {
    let position: HashMap<&str, usize> = emb_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    if position.len() != emb_ids.len() {
        return Err(Error::Schema(format!("duplicate ids in embedding `{name}`")));
    }
    let tab: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
    let missing: Vec<&str> = ids
        .iter()
        .map(String::as_str)
        .filter(|id| !position.contains_key(id))
        .collect();
    let extra: Vec<&str> = emb_ids
        .iter()
        .map(String::as_str)
        .filter(|id| !tab.contains(id))
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        let mut msg = format!("embedding `{name}`:");
        if !missing.is_empty() {
            msg.push_str(&format!(" missing ids [{}]", missing.join(", ")));
        }
        if !extra.is_empty() {
            msg.push_str(&format!(" unexpected ids [{}]", extra.join(", ")));
        }
        return Err(Error::IdMismatch(msg));
    }
    let rows: Vec<usize> = ids.iter().map(|id| position[id.as_str()]).collect();
    Ok(matrix.select(Axis(0), &rows))
}

/// Reads a UTF-8 CSV with a header row into string cells.
pub fn read_csv_table(path: &Path) -> Result<RawTable> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::Reader::from_path(path)?;
    let header = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let rows = reader
        .records()
        .map(|r| r.map(|rec| rec.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<Vec<Vec<String>>, _>>()?;
    RawTable::new(header, rows)
}

/// Reads an embedding file with header `id,e0,...,e{d-1}`.
pub fn read_embedding_csv(path: &Path) -> Result<(Vec<String>, Array2<f64>)> {
    let table = read_csv_table(path)?;
    let d = table.header.len().saturating_sub(1);
    let expected: Vec<String> = std::iter::once("id".to_string())
        .chain((0..d).map(|j| format!("e{j}")))
        .collect();
    if table.header != expected || d == 0 {
        return Err(Error::Schema(format!(
            "{}: embedding header must be `id,e0,...,e{{d-1}}`",
            path.display()
        )));
    }
    let mut ids = Vec::with_capacity(table.rows.len());
    let mut values = Vec::with_capacity(table.rows.len() * d);
    for row in &table.rows {
        ids.push(row[0].trim().to_string());
        for cell in &row[1..] {
            match cell.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => values.push(v),
                _ => {
                    return Err(Error::Schema(format!(
                        "{}: `{cell}` is not a finite float",
                        path.display()
                    )))
                }
            }
        }
    }
    let matrix = Array2::from_shape_vec((ids.len(), d), values).expect("row-major fill");
    Ok((ids, matrix))
}

/// Writes an embedding matrix in the `id,e0,...` format.
pub fn write_embedding_csv(path: &Path, ids: &[String], matrix: &Array2<f64>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_string()];
    header.extend((0..matrix.ncols()).map(|j| format!("e{j}")));
    w.write_record(&header)?;
    for (id, row) in ids.iter().zip(matrix.outer_iter()) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(emb: &str) -> (tempfile::TempDir, DatasetManifest) {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("tab.csv"),
            "id,patient,age,itch,dx\na,p1,40,yes,bcc\nb,p1,,unknown,mel\nc,p2,61,no,bcc\n",
        )
        .unwrap();
        fs::write(dir.path().join("emb.csv"), emb).unwrap();
        fs::write(
            dir.path().join("m.json"),
            r#"{"tabular_path":"tab.csv","embedding_paths":{"img":"emb.csv"},
               "label_column":"dx","group_column":"patient","id_column":"id","task":"binary"}"#,
        )
        .unwrap();
        let m = load_manifest(&dir.path().join("m.json")).unwrap();
        (dir, m)
    }

    #[test]
    fn embeddings_align_to_tabular_order() {
        let (_dir, m) = setup("id,e0,e1\nc,5,6\na,1,2\nb,3,4\n");
        let ds = MultimodalDataset::load(&m).unwrap();
        assert_eq!(ds.ids, vec!["a", "b", "c"]);
        assert_eq!(ds.embeddings["img"].row(0).to_vec(), vec![1.0, 2.0]);
        assert_eq!(ds.embeddings["img"].row(2).to_vec(), vec![5.0, 6.0]);
        assert_eq!(ds.class_names, vec!["bcc", "mel"]);
        assert_eq!(ds.labels, vec![0, 1, 0]);
        // age + itch{no, yes, unknown}
        assert_eq!(ds.tabular.ncols(), 4);
        assert!(ds.tabular[[1, 0]].is_nan());
    }

    #[test]
    fn mismatched_ids_are_named() {
        let (_dir, m) = setup("id,e0\na,1\nb,2\nzz,3\n");
        let err = MultimodalDataset::load(&m).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("zz") && msg.contains('c'), "{msg}");
    }

    #[test]
    fn embedding_header_is_checked() {
        let (_dir, m) = setup("id,x0\na,1\nb,2\nc,3\n");
        assert!(matches!(MultimodalDataset::load(&m), Err(Error::Schema(_))));
    }

    #[test]
    fn embedding_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        let m = ndarray::array![[0.1, -2.5e-7], [3.0, 1.0 / 3.0]];
        let ids = vec!["x".to_string(), "y".to_string()];
        write_embedding_csv(&p, &ids, &m).unwrap();
        let (ids2, m2) = read_embedding_csv(&p).unwrap();
        assert_eq!(ids2, ids);
        assert_eq!(m2, m);
    }
}
