use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Multiclass,
    Binary,
}

/// Where a dataset lives on disk. Relative paths resolve against the
/// manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub tabular_path: PathBuf,
    pub embedding_paths: BTreeMap<String, PathBuf>,
    pub label_column: String,
    pub group_column: String,
    pub id_column: String,
    pub task: Task,
    /// Optional per-column reference level (encoded as the all-zero block).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub reference_levels: BTreeMap<String, String>,
}

const REQUIRED_KEYS: [&str; 6] = [
    "tabular_path",
    "embedding_paths",
    "label_column",
    "group_column",
    "id_column",
    "task",
];

/// Reads and validates a manifest: required keys present, referenced files
/// exist, and the tabular header carries the id, label and group columns.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::Schema(format!("manifest is not valid JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::Schema("manifest must be a JSON object".into()))?;
    if let Some(key) = REQUIRED_KEYS.iter().find(|k| !obj.contains_key(**k)) {
        return Err(Error::Schema(format!("manifest lacks required key `{key}`")));
    }
    let mut manifest: DatasetManifest =
        serde_json::from_value(value).map_err(|e| Error::Schema(e.to_string()))?;

    let base = path.parent().unwrap_or_else(|| Path::new("."));
    manifest.tabular_path = base.join(&manifest.tabular_path);
    for p in manifest.embedding_paths.values_mut() {
        *p = base.join(&*p);
    }
    for p in std::iter::once(&manifest.tabular_path).chain(manifest.embedding_paths.values()) {
        if !p.is_file() {
            return Err(Error::MissingFile(p.clone()));
        }
    }

    let mut reader = csv::Reader::from_path(&manifest.tabular_path)?;
    let header = reader.headers()?;
    for col in [
        &manifest.label_column,
        &manifest.id_column,
        &manifest.group_column,
    ] {
        if !header.iter().any(|h| h == col) {
            return Err(Error::Schema(format!(
                "column `{col}` not found in {}",
                manifest.tabular_path.display()
            )));
        }
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    fn fixture(dir: &Path) {
        write(dir, "tab.csv", "id,patient,age,dx\na,p1,40,x\nb,p2,50,y\n");
        write(dir, "emb.csv", "id,e0,e1\na,0.1,0.2\nb,0.3,0.4\n");
    }

    #[test]
    fn valid_manifest_resolves_paths() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path());
        let m = write(
            dir.path(),
            "m.json",
            r#"{"tabular_path":"tab.csv","embedding_paths":{"img":"emb.csv"},
               "label_column":"dx","group_column":"patient","id_column":"id","task":"binary"}"#,
        );
        let manifest = load_manifest(&m).unwrap();
        assert_eq!(manifest.embedding_paths.len(), 1);
        assert!(manifest.tabular_path.is_absolute() || manifest.tabular_path.exists());
        assert_eq!(manifest.task, Task::Binary);
    }

    #[test]
    fn missing_label_column_key_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path());
        let m = write(
            dir.path(),
            "m.json",
            r#"{"tabular_path":"tab.csv","embedding_paths":{"img":"emb.csv"},
               "group_column":"patient","id_column":"id","task":"binary"}"#,
        );
        assert!(matches!(load_manifest(&m), Err(Error::Schema(s)) if s.contains("label_column")));
    }

    #[test]
    fn missing_embedding_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path());
        let m = write(
            dir.path(),
            "m.json",
            r#"{"tabular_path":"tab.csv","embedding_paths":{"img":"nope.csv"},
               "label_column":"dx","group_column":"patient","id_column":"id","task":"binary"}"#,
        );
        assert!(matches!(load_manifest(&m), Err(Error::MissingFile(p)) if p.ends_with("nope.csv")));
    }

    #[test]
    fn label_column_must_exist_in_table() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path());
        let m = write(
            dir.path(),
            "m.json",
            r#"{"tabular_path":"tab.csv","embedding_paths":{},
               "label_column":"diagnosis","group_column":"patient","id_column":"id","task":"binary"}"#,
        );
        assert!(matches!(load_manifest(&m), Err(Error::Schema(_))));
    }
}
