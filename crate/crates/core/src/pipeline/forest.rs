use ndarray::Array2;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::tree::{build_tree, Gini, Tree, TreeParams};
use crate::nn::check_labels;
use crate::prob::ProbabilityMatrix;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng};

/// Bagged Gini trees with √p features per split. A single-tree forest is
/// grown on the full training set without bootstrap.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<Tree>,
    pub n_features: usize,
    pub n_classes: usize,
}

pub fn fit_random_forest(
    x: &Array2<f64>,
    y: &[usize],
    n_classes: usize,
    n_trees: usize,
    max_depth: Option<usize>,
    min_leaf: usize,
    seed: u64,
) -> Result<RandomForest> {
    check_labels(y, x.nrows(), n_classes)?;
    if n_trees == 0 {
        return Err(Error::InvalidConfig("random forest needs at least one tree".into()));
    }
    let n = x.nrows();
    let criterion = Gini {
        labels: y,
        n_classes,
    };
    let params = TreeParams {
        max_depth,
        min_leaf,
        max_features: Some(((x.ncols() as f64).sqrt().ceil() as usize).max(1)),
    };
    let trees = (0..n_trees)
        .map(|t| {
            let mut r = rng(derive_seed(seed, &[t as u64]));
            let rows = if n_trees == 1 {
                (0..n).collect()
            } else {
                (0..n).map(|_| r.random_range(0..n)).collect()
            };
            build_tree(x, rows, &criterion, params, &mut r)
        })
        .collect();
    Ok(RandomForest {
        trees,
        n_features: x.ncols(),
        n_classes,
    })
}

impl RandomForest {
    /// Mean of the leaf class frequencies over trees.
    pub fn predict_proba(&self, x: &Array2<f64>) -> Result<ProbabilityMatrix> {
        if x.ncols() != self.n_features {
            return Err(Error::shape(format!("{} columns", self.n_features), x.ncols()));
        }
        let mut out = Array2::zeros((x.nrows(), self.n_classes));
        for (i, row) in x.outer_iter().enumerate() {
            for tree in &self.trees {
                for (c, v) in tree.leaf_value(row).iter().enumerate() {
                    out[[i, c]] += v;
                }
            }
        }
        out.mapv_inplace(|v| v / self.trees.len() as f64);
        Ok(ProbabilityMatrix::from_array_unchecked(out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn single_deep_tree_memorizes() {
        let mut r = rng(2);
        let x = Array2::from_shape_simple_fn((60, 4), || r.random_range(-1.0..1.0));
        let y: Vec<usize> = (0..60).map(|_| r.random_range(0..3)).collect();
        let f = fit_random_forest(&x, &y, 3, 1, None, 1, 7).unwrap();
        assert_eq!(f.predict_proba(&x).unwrap().argmax(), y);
    }

    #[test]
    fn probabilities_on_simplex() {
        let mut r = rng(3);
        let x = Array2::from_shape_simple_fn((40, 3), || r.random_range(-1.0..1.0));
        let y: Vec<usize> = (0..40).map(|i| usize::from(x[[i, 0]] > 0.0)).collect();
        let f = fit_random_forest(&x, &y, 2, 15, Some(3), 2, 1).unwrap();
        let p = f.predict_proba(&x).unwrap();
        assert!(ProbabilityMatrix::new(p.into_array()).is_ok());
    }
}
