use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputeStrategy {
    Mean,
    MostFrequent,
    ConstantZero,
}

/// Per-column fill values for NaN entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Imputer {
    pub strategy: ImputeStrategy,
    pub fill: Vec<f64>,
}

pub fn fit_imputer(x: &Array2<f64>, strategy: ImputeStrategy) -> Result<Imputer> {
    let fill = x
        .columns()
        .into_iter()
        .enumerate()
        .map(|(j, col)| {
            let observed: Vec<f64> = col.iter().copied().filter(|v| !v.is_nan()).collect();
            match strategy {
                ImputeStrategy::ConstantZero => Ok(0.0),
                _ if observed.is_empty() => Err(Error::AllMissingColumn(j)),
                ImputeStrategy::Mean => Ok(observed.iter().sum::<f64>() / observed.len() as f64),
                ImputeStrategy::MostFrequent => Ok(mode(observed)),
            }
        })
        .collect::<Result<_>>()?;
    Ok(Imputer { strategy, fill })
}

/// Most frequent value; the smallest value wins ties.
fn mode(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let (mut best, mut best_count) = (values[0], 0);
    let mut i = 0;
    while i < values.len() {
        let mut j = i;
        while j < values.len() && values[j] == values[i] {
            j += 1;
        }
        if j - i > best_count {
            best = values[i];
            best_count = j - i;
        }
        i = j;
    }
    best
}

impl Imputer {
    pub fn transform(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.fill.len() {
            return Err(Error::shape(format!("{} columns", self.fill.len()), x.ncols()));
        }
        let mut out = x.clone();
        for (mut col, &f) in out.columns_mut().into_iter().zip(&self.fill) {
            col.mapv_inplace(|v| if v.is_nan() { f } else { v });
        }
        Ok(out)
    }
}
