use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Principal components of the training rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Array1<f64>,
    /// p × k, orthonormal columns ordered by non-increasing variance.
    pub components: Array2<f64>,
    pub explained_variance: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
}

/// Eigendecomposition of the sample covariance. Requires
/// `1 ≤ n_components ≤ min(n − 1, p)`.
pub fn fit_pca(x: &Array2<f64>, n_components: usize) -> Result<Pca> {
    let (n, p) = x.dim();
    let max = (n.saturating_sub(1)).min(p);
    if n_components == 0 || n_components > max {
        return Err(Error::Rank {
            requested: n_components,
            max,
        });
    }
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let centered = x - &mean;
    let cov = centered.t().dot(&centered) / (n - 1) as f64;
    let eig = SymmetricEigen::new(DMatrix::from_fn(p, p, |i, j| cov[[i, j]]));

    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();

    let mut components = Array2::zeros((p, n_components));
    let mut explained_variance = Vec::with_capacity(n_components);
    for (k, &src) in order.iter().take(n_components).enumerate() {
        let v = eig.eigenvectors.column(src);
        // Deterministic sign: the largest-magnitude loading is positive.
        let pivot = (0..p).fold(0, |b, i| if v[i].abs() > v[b].abs() { i } else { b });
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..p {
            components[[i, k]] = sign * v[i];
        }
        explained_variance.push(eig.eigenvalues[src].max(0.0));
    }
    let explained_variance_ratio = explained_variance
        .iter()
        .map(|v| if total > 0.0 { v / total } else { 0.0 })
        .collect();
    Ok(Pca {
        mean,
        components,
        explained_variance,
        explained_variance_ratio,
    })
}

impl Pca {
    pub fn n_components(&self) -> usize {
        self.components.ncols()
    }

    pub fn transform(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.mean.len() {
            return Err(Error::shape(format!("{} columns", self.mean.len()), x.ncols()));
        }
        Ok((x - &self.mean).dot(&self.components))
    }

    pub fn inverse_transform(&self, z: &Array2<f64>) -> Array2<f64> {
        z.dot(&self.components.t()) + &self.mean
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    #[test]
    fn line_has_one_component() {
        let x = array![[0.0, 0.0], [1.0, 2.0], [2.0, 4.0], [-1.5, -3.0]];
        let pca = fit_pca(&x, 1).unwrap();
        assert!((pca.explained_variance_ratio[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn basis_is_orthonormal() {
        let mut r = crate::rng::rng(11);
        let x = Array2::from_shape_simple_fn((30, 6), || r.random_range(-2.0..2.0));
        let pca = fit_pca(&x, 4).unwrap();
        let gram = pca.components.t().dot(&pca.components);
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((gram[[i, j]] - want).abs() < 1e-9);
            }
        }
        let ev = &pca.explained_variance;
        assert!(ev.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn rank_bounds() {
        let x = Array2::<f64>::zeros((3, 5));
        assert!(matches!(fit_pca(&x, 3), Err(Error::Rank { requested: 3, max: 2 })));
        assert!(matches!(fit_pca(&x, 0), Err(Error::Rank { .. })));
    }

    /// Oracle: an SVD of the centered data gives the same variances, and a
    /// full-rank projection reconstructs the input.
    #[test]
    fn full_rank_matches_svd_and_reconstructs() {
        let mut r = crate::rng::rng(5);
        let x = Array2::from_shape_simple_fn((20, 5), || r.random_range(-1.0..1.0));
        let pca = fit_pca(&x, 5).unwrap();
        let recon = pca.inverse_transform(&pca.transform(&x).unwrap());
        let err = (&recon - &x).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(err <= 1e-8, "reconstruction error {err}");

        let mean = x.mean_axis(Axis(0)).unwrap();
        let c = &x - &mean;
        let svd = DMatrix::from_fn(20, 5, |i, j| c[[i, j]]).svd(false, false);
        let mut sv: Vec<f64> = svd.singular_values.iter().map(|s| s * s / 19.0).collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        for (a, b) in sv.iter().zip(&pca.explained_variance) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
