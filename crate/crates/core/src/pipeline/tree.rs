//! CART trees shared by the random forest (Gini) and gradient boosting
//! (squared error with Newton leaf values).

use ndarray::{Array2, ArrayView1};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        value: Vec<f64>,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    /// Leaf value reached by `row`; `x ≤ threshold` goes left.
    pub fn leaf_value(&self, row: ArrayView1<'_, f64>) -> &[f64] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, at: usize) -> usize {
            match &t.nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
            }
        }
        go(self, 0)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct TreeParams {
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// Features examined per split; the rest are tried only if none of the
    /// sampled ones admits a split.
    pub max_features: Option<usize>,
}

/// Split objective: additive node statistics and a cost to minimize.
pub(crate) trait Criterion {
    type Stats: Clone;
    fn empty(&self) -> Self::Stats;
    fn add(&self, stats: &mut Self::Stats, row: usize);
    fn remove(&self, stats: &mut Self::Stats, row: usize);
    fn cost(&self, stats: &Self::Stats, n: usize) -> f64;
    fn leaf(&self, rows: &[usize]) -> Vec<f64>;
}

/// Gini impurity over class labels; leaves hold class frequencies.
pub(crate) struct Gini<'a> {
    pub labels: &'a [usize],
    pub n_classes: usize,
}

impl Criterion for Gini<'_> {
    type Stats = Vec<usize>;

    fn empty(&self) -> Vec<usize> {
        vec![0; self.n_classes]
    }
    fn add(&self, s: &mut Vec<usize>, row: usize) {
        s[self.labels[row]] += 1;
    }
    fn remove(&self, s: &mut Vec<usize>, row: usize) {
        s[self.labels[row]] -= 1;
    }
    fn cost(&self, s: &Vec<usize>, n: usize) -> f64 {
        if n == 0 {
            return 0.0;
        }
        let sq: f64 = s.iter().map(|&c| (c * c) as f64).sum();
        n as f64 - sq / n as f64
    }
    fn leaf(&self, rows: &[usize]) -> Vec<f64> {
        let mut counts = vec![0.0; self.n_classes];
        for &r in rows {
            counts[self.labels[r]] += 1.0;
        }
        counts.iter().map(|c| c / rows.len() as f64).collect()
    }
}

/// Sum of squared errors of `targets`; leaves come from `leaf_fn`.
pub(crate) struct SquaredError<'a, F: Fn(&[usize]) -> f64> {
    pub targets: &'a [f64],
    pub leaf_fn: F,
}

impl<F: Fn(&[usize]) -> f64> Criterion for SquaredError<'_, F> {
    type Stats = (f64, f64);

    fn empty(&self) -> (f64, f64) {
        (0.0, 0.0)
    }
    fn add(&self, s: &mut (f64, f64), row: usize) {
        s.0 += self.targets[row];
        s.1 += self.targets[row] * self.targets[row];
    }
    fn remove(&self, s: &mut (f64, f64), row: usize) {
        s.0 -= self.targets[row];
        s.1 -= self.targets[row] * self.targets[row];
    }
    fn cost(&self, s: &(f64, f64), n: usize) -> f64 {
        if n == 0 {
            return 0.0;
        }
        (s.1 - s.0 * s.0 / n as f64).max(0.0)
    }
    fn leaf(&self, rows: &[usize]) -> Vec<f64> {
        vec![(self.leaf_fn)(rows)]
    }
}

struct Builder<'a, C: Criterion> {
    x: &'a Array2<f64>,
    criterion: &'a C,
    params: TreeParams,
    rng: &'a mut Rng,
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    cost: f64,
}

impl<C: Criterion> Builder<'_, C> {
    fn best_split_on(&self, rows: &[usize], feature: usize) -> Option<BestSplit> {
        let mut sorted = rows.to_vec();
        sorted.sort_by(|&a, &b| self.x[[a, feature]].total_cmp(&self.x[[b, feature]]).then(a.cmp(&b)));
        let n = sorted.len();
        let mut left = self.criterion.empty();
        let mut right = self.criterion.empty();
        for &r in &sorted {
            self.criterion.add(&mut right, r);
        }
        let min_leaf = self.params.min_leaf.max(1);
        let mut best: Option<BestSplit> = None;
        for i in 0..n - 1 {
            let r = sorted[i];
            self.criterion.add(&mut left, r);
            self.criterion.remove(&mut right, r);
            let (lo, hi) = (self.x[[r, feature]], self.x[[sorted[i + 1], feature]]);
            if lo == hi || i + 1 < min_leaf || n - i - 1 < min_leaf {
                continue;
            }
            let cost = self.criterion.cost(&left, i + 1) + self.criterion.cost(&right, n - i - 1);
            if best.as_ref().is_none_or(|b| cost < b.cost) {
                let mid = lo + (hi - lo) / 2.0;
                // Guard against the midpoint rounding onto the upper value.
                let threshold = if mid < hi { mid } else { lo };
                best = Some(BestSplit {
                    feature,
                    threshold,
                    cost,
                });
            }
        }
        best
    }

    fn find_split(&mut self, rows: &[usize], node_cost: f64) -> Option<BestSplit> {
        let p = self.x.ncols();
        let m = self.params.max_features.unwrap_or(p).clamp(1, p);
        let mut order: Vec<usize> = sample(self.rng, p, p).into_vec();
        if m == p {
            order.sort_unstable();
        }
        let improves = |s: &BestSplit| s.cost < node_cost - 1e-12;
        let pick = |cands: &[usize], this: &Self| {
            cands
                .iter()
                .filter_map(|&f| this.best_split_on(rows, f))
                .filter(improves)
                .fold(None::<BestSplit>, |acc, s| match acc {
                    Some(a) if a.cost <= s.cost => Some(a),
                    _ => Some(s),
                })
        };
        pick(&order[..m], self).or_else(|| pick(&order[m..], self))
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { value: Vec::new() });
        let mut stats = self.criterion.empty();
        for &r in &rows {
            self.criterion.add(&mut stats, r);
        }
        let node_cost = self.criterion.cost(&stats, rows.len());
        let can_split = node_cost > 1e-12
            && rows.len() >= 2 * self.params.min_leaf.max(1)
            && self.params.max_depth.is_none_or(|d| depth < d);
        let split = if can_split { self.find_split(&rows, node_cost) } else { None };
        match split {
            None => {
                self.nodes[id] = Node::Leaf {
                    value: self.criterion.leaf(&rows),
                };
            }
            Some(s) => {
                let (l, r): (Vec<usize>, Vec<usize>) =
                    rows.iter().partition(|&&i| self.x[[i, s.feature]] <= s.threshold);
                let left = self.grow(l, depth + 1);
                let right = self.grow(r, depth + 1);
                self.nodes[id] = Node::Split {
                    feature: s.feature,
                    threshold: s.threshold,
                    left,
                    right,
                };
            }
        }
        id
    }
}

pub(crate) fn build_tree<C: Criterion>(
    x: &Array2<f64>,
    rows: Vec<usize>,
    criterion: &C,
    params: TreeParams,
    rng: &mut Rng,
) -> Tree {
    let mut b = Builder {
        x,
        criterion,
        params,
        rng,
        nodes: Vec::new(),
    };
    b.grow(rows, 0);
    Tree { nodes: b.nodes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn pure_split_on_one_feature() {
        let x = array![[0.0, 5.0], [1.0, 5.0], [2.0, 5.0], [3.0, 5.0]];
        let y = [0, 0, 1, 1];
        let g = Gini {
            labels: &y,
            n_classes: 2,
        };
        let params = TreeParams {
            max_depth: None,
            min_leaf: 1,
            max_features: None,
        };
        let t = build_tree(&x, (0..4).collect(), &g, params, &mut crate::rng::rng(0));
        assert_eq!(t.depth(), 1);
        assert_eq!(t.leaf_value(x.row(0)), &[1.0, 0.0]);
        assert_eq!(t.leaf_value(x.row(3)), &[0.0, 1.0]);
        assert!(matches!(t.nodes[0], Node::Split { feature: 0, threshold, .. } if threshold == 1.5));
    }

    #[test]
    fn min_leaf_limits_growth() {
        let x = array![[0.0], [1.0], [2.0], [3.0]];
        let y = [0, 1, 0, 1];
        let g = Gini {
            labels: &y,
            n_classes: 2,
        };
        let params = TreeParams {
            max_depth: None,
            min_leaf: 2,
            max_features: None,
        };
        let t = build_tree(&x, (0..4).collect(), &g, params, &mut crate::rng::rng(0));
        for n in &t.nodes {
            if let Node::Leaf { value } = n {
                assert_eq!(value.len(), 2);
            }
        }
        assert!(t.depth() <= 1);
    }
}
