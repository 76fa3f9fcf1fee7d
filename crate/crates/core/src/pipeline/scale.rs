use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalerKind {
    None,
    Standard,
    MinMax,
}

/// Affine per-column map `(x − offset) · factor`.
///
/// Standard scaling uses the population standard deviation; constant
/// columns get `factor = 0` and therefore map to zero under both kinds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub kind: ScalerKind,
    pub offset: Vec<f64>,
    pub factor: Vec<f64>,
}

pub fn fit_scaler(x: &Array2<f64>, kind: ScalerKind) -> Scaler {
    let n = x.nrows() as f64;
    let (offset, factor) = x
        .columns()
        .into_iter()
        .map(|col| match kind {
            ScalerKind::None => (0.0, 1.0),
            ScalerKind::Standard => {
                let mean = col.sum() / n;
                let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                let std = var.sqrt();
                (mean, if std > 1e-12 { 1.0 / std } else { 0.0 })
            }
            ScalerKind::MinMax => {
                let lo = col.fold(f64::INFINITY, |a, &b| a.min(b));
                let hi = col.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                (lo, if hi - lo > 1e-12 { 1.0 / (hi - lo) } else { 0.0 })
            }
        })
        .unzip();
    Scaler { kind, offset, factor }
}

impl Scaler {
    pub fn transform(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.offset.len() {
            return Err(Error::shape(format!("{} columns", self.offset.len()), x.ncols()));
        }
        if self.kind == ScalerKind::None {
            return Ok(x.clone());
        }
        let mut out = x.clone();
        for ((mut col, &o), &f) in out.columns_mut().into_iter().zip(&self.offset).zip(&self.factor) {
            col.mapv_inplace(|v| (v - o) * f);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn standard_two_points() {
        let x = array![[0.0], [2.0]];
        let s = fit_scaler(&x, ScalerKind::Standard);
        assert_eq!(s.transform(&x).unwrap(), array![[-1.0], [1.0]]);
    }

    #[test]
    fn constant_column_maps_to_zero() {
        let x = array![[4.0], [4.0], [4.0]];
        let s = fit_scaler(&x, ScalerKind::Standard);
        assert_eq!(s.transform(&x).unwrap(), array![[0.0], [0.0], [0.0]]);
    }

    #[test]
    fn minmax() {
        let x = array![[1.0], [3.0], [5.0]];
        let s = fit_scaler(&x, ScalerKind::MinMax);
        assert_eq!(s.transform(&x).unwrap(), array![[0.0], [0.5], [1.0]]);
    }

    #[test]
    fn standardized_columns_have_unit_population_std() {
        let x = array![[1.0, 10.0], [2.0, -3.0], [7.0, 0.5], [4.0, 2.0]];
        let z = fit_scaler(&x, ScalerKind::Standard).transform(&x).unwrap();
        for col in z.columns() {
            let mean = col.sum() / 4.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        }
    }
}
