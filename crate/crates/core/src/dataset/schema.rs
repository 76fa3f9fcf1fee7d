//! Tabular schema inference and one-hot encoding.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The literal category recorded when a respondent did not know the answer.
pub const UNKNOWN_CATEGORY: &str = "unknown";

/// String cells keyed by a header row, as read from CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn new(header: Vec<String>, rows: Vec<Vec<String>>) -> Result<Self> {
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != header.len()) {
            return Err(Error::Schema(format!(
                "row {i} has {} cells, header has {}",
                r.len(),
                header.len()
            )));
        }
        Ok(Self { header, rows })
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let j = self.column_index(name)?;
        Some(self.rows.iter().map(|r| r[j].as_str()).collect())
    }

    /// Keeps only the named columns, in the given order.
    pub fn project(&self, names: &[String]) -> Result<Self> {
        let idx = names
            .iter()
            .map(|n| {
                self.column_index(n)
                    .ok_or_else(|| Error::Schema(format!("column `{n}` missing from table")))
            })
            .collect::<Result<Vec<_>>>()?;
        let rows = self
            .rows
            .iter()
            .map(|r| idx.iter().map(|&j| r[j].clone()).collect())
            .collect();
        Ok(Self {
            header: names.to_vec(),
            rows,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    /// `reference`, when set, names a level encoded as the all-zero block
    /// instead of getting an indicator column of its own.
    Categorical {
        categories: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reference: Option<String>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TabularSchema {
    pub columns: Vec<ColumnSchema>,
}

fn is_missing(cell: &str) -> bool {
    cell.trim().is_empty()
}

impl TabularSchema {
    pub fn numeric(name: &str) -> ColumnSchema {
        ColumnSchema {
            name: name.to_string(),
            kind: ColumnKind::Numeric,
        }
    }

    /// Builds a categorical column; categories are deduplicated in first-seen order.
    pub fn categorical<S: AsRef<str>>(name: &str, categories: &[S]) -> ColumnSchema {
        let mut seen = BTreeSet::new();
        let categories = categories
            .iter()
            .map(|c| c.as_ref().to_string())
            .filter(|c| seen.insert(c.clone()))
            .collect();
        ColumnSchema {
            name: name.to_string(),
            kind: ColumnKind::Categorical {
                categories,
                reference: None,
            },
        }
    }

    /// Infers column kinds from every column of `table`. A column is numeric
    /// when all non-empty cells parse as finite floats. Categories are sorted,
    /// with `unknown` (case-insensitive) moved to the end.
    pub fn infer(table: &RawTable) -> Self {
        let columns = table
            .header
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let cells: Vec<&str> = table.rows.iter().map(|r| r[j].as_str()).collect();
                let numeric = cells
                    .iter()
                    .filter(|c| !is_missing(c))
                    .all(|c| c.trim().parse::<f64>().map(f64::is_finite).unwrap_or(false));
                if numeric {
                    return Self::numeric(name);
                }
                let set: BTreeSet<&str> = cells
                    .iter()
                    .filter(|c| !is_missing(c))
                    .map(|c| c.trim())
                    .collect();
                let (mut known, unknown): (Vec<&str>, Vec<&str>) = set
                    .into_iter()
                    .partition(|c| !c.eq_ignore_ascii_case(UNKNOWN_CATEGORY));
                known.extend(unknown);
                Self::categorical(name, &known)
            })
            .collect();
        Self { columns }
    }

    /// Marks `level` of categorical `column` as the reference (all-zero) level.
    pub fn with_reference(mut self, column: &str, level: &str) -> Result<Self> {
        let col = self
            .columns
            .iter_mut()
            .find(|c| c.name == column)
            .ok_or_else(|| Error::UnknownColumn(column.to_string()))?;
        match &mut col.kind {
            ColumnKind::Categorical {
                categories,
                reference,
            } if categories.iter().any(|c| c == level) => {
                *reference = Some(level.to_string());
                Ok(self)
            }
            _ => Err(Error::Schema(format!(
                "`{level}` is not a category of `{column}`"
            ))),
        }
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    /// Encoded width: one per numeric column plus one per non-reference category.
    pub fn width(&self) -> usize {
        self.columns.iter().map(|c| column_width(&c.kind)).sum()
    }

    /// Names of the encoded columns, `name=level` for indicators.
    pub fn feature_names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.width());
        for c in &self.columns {
            match &c.kind {
                ColumnKind::Numeric => out.push(c.name.clone()),
                kind => out.extend(encoded_levels(kind).iter().map(|l| format!("{}={l}", c.name))),
            }
        }
        out
    }

    /// Maps each encoded feature back to the index of its source column.
    pub fn feature_sources(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.width());
        for (j, c) in self.columns.iter().enumerate() {
            out.extend(std::iter::repeat_n(j, column_width(&c.kind)));
        }
        out
    }
}

fn column_width(kind: &ColumnKind) -> usize {
    match kind {
        ColumnKind::Numeric => 1,
        kind => encoded_levels(kind).len(),
    }
}

fn encoded_levels(kind: &ColumnKind) -> Vec<&str> {
    match kind {
        ColumnKind::Numeric => vec![],
        ColumnKind::Categorical {
            categories,
            reference,
        } => categories
            .iter()
            .map(String::as_str)
            .filter(|c| Some(*c) != reference.as_deref())
            .collect(),
    }
}

/// One-hot encodes `table` under `schema`.
///
/// Numeric cells pass through; empty numeric cells become NaN (imputation is
/// a pipeline stage). Each categorical column expands to one indicator per
/// non-reference category in schema order. Unseen or empty categorical cells
/// produce an all-zero block.
pub fn encode_tabular(table: &RawTable, schema: &TabularSchema) -> Result<Array2<f64>> {
    let positions: BTreeMap<&str, usize> = schema
        .columns
        .iter()
        .enumerate()
        .map(|(j, c)| (c.name.as_str(), j))
        .collect();
    if let Some(extra) = table.header.iter().find(|h| !positions.contains_key(h.as_str())) {
        return Err(Error::UnknownColumn(extra.clone()));
    }
    let source: Vec<usize> = schema
        .columns
        .iter()
        .map(|c| {
            table
                .column_index(&c.name)
                .ok_or_else(|| Error::Schema(format!("column `{}` missing from table", c.name)))
        })
        .collect::<Result<_>>()?;

    let mut out = Array2::zeros((table.rows.len(), schema.width()));
    for (i, row) in table.rows.iter().enumerate() {
        let mut offset = 0;
        for (col, &src) in schema.columns.iter().zip(&source) {
            let cell = row[src].trim();
            match &col.kind {
                ColumnKind::Numeric => {
                    out[[i, offset]] = if is_missing(cell) {
                        f64::NAN
                    } else {
                        match cell.parse::<f64>() {
                            Ok(v) if v.is_finite() => v,
                            _ => {
                                return Err(Error::Schema(format!(
                                    "non-numeric value `{cell}` in numeric column `{}`",
                                    col.name
                                )))
                            }
                        }
                    };
                    offset += 1;
                }
                kind => {
                    let levels = encoded_levels(kind);
                    if let Some(k) = levels.iter().position(|l| *l == cell) {
                        out[[i, offset + k]] = 1.0;
                    }
                    offset += levels.len();
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(header: &[&str], rows: &[&[&str]]) -> RawTable {
        RawTable::new(
            header.iter().map(|s| s.to_string()).collect(),
            rows.iter()
                .map(|r| r.iter().map(|s| s.to_string()).collect())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn one_hot_in_schema_order() {
        let schema = TabularSchema {
            columns: vec![TabularSchema::categorical("itch", &["yes", "no", "unknown"])],
        };
        let x = encode_tabular(&table(&["itch"], &[&["no"]]), &schema).unwrap();
        assert_eq!(x.row(0).to_vec(), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn unseen_category_is_all_zero() {
        let schema = TabularSchema {
            columns: vec![TabularSchema::categorical("itch", &["yes", "no", "unknown"])],
        };
        let x = encode_tabular(&table(&["itch"], &[&["maybe"]]), &schema).unwrap();
        assert_eq!(x.row(0).to_vec(), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn missing_numeric_becomes_nan() {
        let schema = TabularSchema {
            columns: vec![TabularSchema::numeric("age")],
        };
        let x = encode_tabular(&table(&["age"], &[&["41"], &[""]]), &schema).unwrap();
        assert_eq!(x[[0, 0]], 41.0);
        assert!(x[[1, 0]].is_nan());
    }

    #[test]
    fn extra_column_is_rejected() {
        let schema = TabularSchema {
            columns: vec![TabularSchema::numeric("age")],
        };
        let err = encode_tabular(&table(&["age", "hurt"], &[&["3", "no"]]), &schema).unwrap_err();
        assert!(matches!(err, Error::UnknownColumn(c) if c == "hurt"));
    }

    #[test]
    fn inference_orders_unknown_last() {
        let t = table(
            &["age", "grew"],
            &[&["50", "yes"], &["", "unknown"], &["61.5", "no"]],
        );
        let schema = TabularSchema::infer(&t);
        assert_eq!(schema.columns[0].kind, ColumnKind::Numeric);
        assert_eq!(
            schema.columns[1].kind,
            ColumnKind::Categorical {
                categories: vec!["no".into(), "yes".into(), "unknown".into()],
                reference: None
            }
        );
        assert_eq!(schema.width(), 4);
        assert_eq!(schema.feature_names()[3], "grew=unknown");
    }

    /// Eight retained skin-lesion variables: numeric age, 14 body regions and
    /// six yes/no questions that also record "unknown". With "no" as the
    /// reference level each question contributes a `yes` and an `unknown`
    /// indicator: 1 + 14 + 6·2 = 27 encoded clinical features.
    #[test]
    fn lesion_schema_encodes_to_27_columns() {
        let regions = [
            "face", "forearm", "chest", "back", "arm", "nose", "hand", "neck", "thigh", "ear",
            "abdomen", "lip", "scalp", "foot",
        ];
        let questions = ["itch", "grew", "hurt", "changed", "bleed", "elevation"];
        let mut columns = vec![
            TabularSchema::numeric("age"),
            TabularSchema::categorical("region", &regions),
        ];
        columns.extend(
            questions
                .iter()
                .map(|q| TabularSchema::categorical(q, &["no", "yes", UNKNOWN_CATEGORY])),
        );
        let mut schema = TabularSchema { columns };
        for q in questions {
            schema = schema.with_reference(q, "no").unwrap();
        }
        let mut header = vec!["age", "region"];
        header.extend(questions);
        let t = table(
            &header,
            &[
                &["55", "face", "yes", "unknown", "no", "no", "yes", "yes"],
                &["70", "foot", "no", "no", "unknown", "yes", "no", "no"],
            ],
        );
        let x = encode_tabular(&t, &schema).unwrap();
        assert_eq!(x.ncols(), 27);
        assert_eq!(schema.width(), 27);
        assert_eq!(schema.feature_names().len(), 27);
        // age + one region + itch=yes + grew=unknown + bleed=yes + elevation=yes
        assert_eq!(x.row(0).sum(), 55.0 + 5.0);
        assert_eq!(schema.feature_sources().len(), 27);
    }
}
