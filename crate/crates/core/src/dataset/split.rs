//! Group-disjoint, label-stratified splitting.
//!
//! Groups (patients) are visited largest first, with a seeded shuffle
//! deciding the order among equal sizes. Each group goes to the bin whose
//! per-class counts are furthest below target, measured relative to the
//! target so bins of different sizes fill at the same pace.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub folds: Vec<Fold>,
    pub seed: u64,
}

impl FoldSplit {
    pub fn k(&self) -> usize {
        self.folds.len()
    }
}

struct GroupBlock {
    rows: Vec<usize>,
    class_counts: Vec<usize>,
}

fn collect_groups(rows: &[usize], y: &[usize], groups: &[String], n_classes: usize) -> Vec<GroupBlock> {
    let mut by_group: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for &i in rows {
        by_group.entry(groups[i].as_str()).or_default().push(i);
    }
    by_group
        .into_values()
        .map(|rows| {
            let mut class_counts = vec![0; n_classes];
            for &i in &rows {
                class_counts[y[i]] += 1;
            }
            GroupBlock { rows, class_counts }
        })
        .collect()
}

fn class_totals(rows: &[usize], y: &[usize]) -> Vec<usize> {
    let n_classes = rows.iter().map(|&i| y[i] + 1).max().unwrap_or(0);
    let mut totals = vec![0usize; n_classes];
    for &i in rows {
        totals[y[i]] += 1;
    }
    totals
}

/// Assigns the groups covering `rows` to bins; `targets[b][c]` is the
/// desired count of class `c` in bin `b`.
fn greedy_assign(
    rows: &[usize],
    y: &[usize],
    groups: &[String],
    targets: &[Vec<f64>],
    seed: u64,
) -> Vec<Vec<usize>> {
    let n_bins = targets.len();
    let n_classes = targets.first().map_or(0, Vec::len);
    let mut blocks = collect_groups(rows, y, groups, n_classes);
    blocks.shuffle(&mut rng(seed));
    blocks.sort_by(|a, b| b.rows.len().cmp(&a.rows.len()));

    let size_targets: Vec<f64> = targets.iter().map(|t| t.iter().sum()).collect();
    let mut current = vec![vec![0usize; n_classes]; n_bins];
    let mut sizes = vec![0usize; n_bins];
    let mut bins: Vec<Vec<usize>> = vec![Vec::new(); n_bins];

    for block in blocks {
        let score = |b: usize| -> f64 {
            block
                .class_counts
                .iter()
                .enumerate()
                .filter(|(_, &g)| g > 0)
                .map(|(c, &g)| {
                    let t = targets[b][c];
                    if t > 0.0 {
                        g as f64 * (t - current[b][c] as f64) / t
                    } else {
                        -(g as f64)
                    }
                })
                .sum()
        };
        let fill = |b: usize| sizes[b] as f64 / size_targets[b].max(f64::MIN_POSITIVE);
        let mut best = 0;
        let mut best_score = score(0);
        for b in 1..n_bins {
            let s = score(b);
            if s > best_score + 1e-12 || ((s - best_score).abs() <= 1e-12 && fill(b) < fill(best) - 1e-12) {
                best = b;
                best_score = s;
            }
        }
        for (c, &g) in block.class_counts.iter().enumerate() {
            current[best][c] += g;
        }
        sizes[best] += block.rows.len();
        bins[best].extend(block.rows);
    }
    for bin in &mut bins {
        bin.sort_unstable();
    }
    bins
}

/// Splits samples into `k` group-disjoint, approximately stratified test
/// folds. Each fold's training set is the complement of its test set; the
/// validation carve-out is left empty (see [`split_train_valid`]).
pub fn grouped_stratified_kfold(y: &[usize], groups: &[String], k: usize, seed: u64) -> Result<FoldSplit> {
    if y.len() != groups.len() {
        return Err(Error::LengthMismatch {
            left: y.len(),
            right: groups.len(),
        });
    }
    let distinct = groups.iter().collect::<std::collections::BTreeSet<_>>().len();
    if k < 2 || k > distinct {
        return Err(Error::InvalidK { k, groups: distinct });
    }
    let rows: Vec<usize> = (0..y.len()).collect();
    let share: Vec<f64> = class_totals(&rows, y)
        .iter()
        .map(|&t| t as f64 / k as f64)
        .collect();
    let tests = greedy_assign(&rows, y, groups, &vec![share; k], seed);
    let folds = tests
        .into_iter()
        .map(|test| {
            let mut in_test = vec![false; y.len()];
            for &i in &test {
                in_test[i] = true;
            }
            let train = rows.iter().copied().filter(|&i| !in_test[i]).collect();
            Fold {
                train,
                valid: Vec::new(),
                test,
            }
        })
        .collect();
    Ok(FoldSplit { folds, seed })
}

/// Carves a group-disjoint, stratified validation set of roughly
/// `fraction · |train|` samples out of `train`.
pub fn split_train_valid(
    train: &[usize],
    y: &[usize],
    groups: &[String],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::DegenerateSplit(format!(
            "validation fraction {fraction} must lie in (0, 1)"
        )));
    }
    let totals = class_totals(train, y);
    if let Some((c, _)) = totals
        .iter()
        .enumerate()
        .find(|(_, &n)| n > 0 && (fraction * n as f64).round() as usize >= n)
    {
        return Err(Error::DegenerateSplit(format!(
            "class {c} would vanish from the training set at fraction {fraction}"
        )));
    }
    let valid_targets = apportion(&totals, fraction);
    let train_targets: Vec<f64> = totals
        .iter()
        .zip(&valid_targets)
        .map(|(&t, &v)| (t - v) as f64)
        .collect();
    let valid_targets: Vec<f64> = valid_targets.iter().map(|&v| v as f64).collect();
    let mut bins = greedy_assign(train, y, groups, &[train_targets, valid_targets], seed);
    let valid = bins.pop().unwrap();
    let train = bins.pop().unwrap();
    if valid.is_empty() || train.is_empty() {
        return Err(Error::DegenerateSplit("a side of the split is empty".into()));
    }
    if let Some(c) = (0..totals.len()).find(|&c| totals[c] > 0 && !train.iter().any(|&i| y[i] == c)) {
        return Err(Error::DegenerateSplit(format!(
            "class {c} has no training samples after the split"
        )));
    }
    Ok((train, valid))
}

/// Integer per-class validation counts summing to `round(fraction · n)`,
/// distributed by largest remainder (lower class index first on ties).
fn apportion(totals: &[usize], fraction: f64) -> Vec<usize> {
    let n: usize = totals.iter().sum();
    let wanted = (fraction * n as f64).round() as usize;
    let exact: Vec<f64> = totals.iter().map(|&t| fraction * t as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..totals.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut missing = wanted.saturating_sub(counts.iter().sum());
    for &c in order.iter().cycle().take(order.len() * 2) {
        if missing == 0 {
            break;
        }
        if counts[c] + 1 < totals[c] {
            counts[c] += 1;
            missing -= 1;
        }
    }
    counts
}

/// k-fold split followed by a validation carve-out inside every fold.
pub fn make_folds(
    y: &[usize],
    groups: &[String],
    k: usize,
    valid_fraction: f64,
    seed: u64,
) -> Result<FoldSplit> {
    let mut split = grouped_stratified_kfold(y, groups, k, seed)?;
    for (f, fold) in split.folds.iter_mut().enumerate() {
        let (train, valid) =
            split_train_valid(&fold.train, y, groups, valid_fraction, derive_seed(seed, &[f as u64]))?;
        fold.train = train;
        fold.valid = valid;
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn gids(v: &[usize]) -> Vec<String> {
        v.iter().map(|g| format!("g{g}")).collect()
    }

    #[test]
    fn five_pairs_five_folds() {
        // Each group holds one sample of each class.
        let y = vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1];
        let g = gids(&[0, 0, 1, 1, 2, 2, 3, 3, 4, 4]);
        for seed in 0..20 {
            let split = grouped_stratified_kfold(&y, &g, 5, seed).unwrap();
            let mut seen = BTreeSet::new();
            for fold in &split.folds {
                assert_eq!(fold.test.len(), 2);
                let groups: BTreeSet<_> = fold.test.iter().map(|&i| &g[i]).collect();
                assert_eq!(groups.len(), 1);
                assert!(seen.insert(groups.into_iter().next().unwrap().clone()));
            }
        }
    }

    #[test]
    fn k_bounds() {
        let y = vec![0, 1, 0, 1];
        let g = gids(&[0, 1, 2, 3]);
        assert!(matches!(grouped_stratified_kfold(&y, &g, 1, 0), Err(Error::InvalidK { k: 1, .. })));
        assert!(matches!(grouped_stratified_kfold(&y, &g, 5, 0), Err(Error::InvalidK { .. })));
    }

    #[test]
    fn singleton_groups_give_exact_fraction() {
        let train: Vec<usize> = (0..100).collect();
        let y: Vec<usize> = (0..100).map(|i| i % 3).collect();
        let g = gids(&train);
        let (tr, va) = split_train_valid(&train, &y, &g, 0.2, 3).unwrap();
        assert_eq!(va.len(), 20);
        assert_eq!(tr.len(), 80);
    }

    #[test]
    fn balanced_binary_validation_is_stratified() {
        // Enumerate seeds and group layouts; per-class counts must differ by at most one.
        for seed in 0..50 {
            let train: Vec<usize> = (0..60).collect();
            let y: Vec<usize> = (0..60).map(|i| i % 2).collect();
            let g = gids(&train);
            let (_, va) = split_train_valid(&train, &y, &g, 0.2, seed).unwrap();
            let pos = va.iter().filter(|&&i| y[i] == 1).count();
            let neg = va.len() - pos;
            assert!(pos.abs_diff(neg) <= 1, "seed {seed}: {pos} vs {neg}");
        }
    }

    #[test]
    fn extreme_fraction_is_degenerate() {
        let train: Vec<usize> = (0..10).collect();
        let y: Vec<usize> = (0..10).map(|i| i % 2).collect();
        let g = gids(&train);
        assert!(matches!(
            split_train_valid(&train, &y, &g, 0.999, 0),
            Err(Error::DegenerateSplit(_))
        ));
    }

    fn arb_problem() -> impl Strategy<Value = (Vec<usize>, Vec<String>, usize, u64)> {
        (12usize..80, 2usize..4, 2usize..6, any::<u64>()).prop_flat_map(|(n, c, k, seed)| {
            (
                proptest::collection::vec(0..c, n),
                proptest::collection::vec(0..(n / 2).max(k), n),
                Just(k),
                Just(seed),
            )
                .prop_map(|(y, g, k, s)| (y, gids(&g), k, s))
        })
    }

    proptest! {
        #[test]
        fn folds_partition_and_respect_groups((y, g, k, seed) in arb_problem()) {
            let distinct = g.iter().collect::<BTreeSet<_>>().len();
            prop_assume!(distinct >= k);
            let split = grouped_stratified_kfold(&y, &g, k, seed).unwrap();
            let mut all: Vec<usize> = split.folds.iter().flat_map(|f| f.test.clone()).collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..y.len()).collect::<Vec<_>>());
            for (a, fa) in split.folds.iter().enumerate() {
                prop_assert!(!fa.test.is_empty());
                let ga: BTreeSet<_> = fa.test.iter().map(|&i| &g[i]).collect();
                for fb in split.folds.iter().skip(a + 1) {
                    prop_assert!(fb.test.iter().all(|&i| !ga.contains(&g[i])));
                }
            }
            let again = grouped_stratified_kfold(&y, &g, k, seed).unwrap();
            prop_assert_eq!(split, again);
        }

        #[test]
        fn validation_carve_out_is_group_disjoint((y, g, k, seed) in arb_problem()) {
            let distinct = g.iter().collect::<BTreeSet<_>>().len();
            prop_assume!(distinct >= k);
            if let Ok(split) = make_folds(&y, &g, k, 0.2, seed) {
                for f in &split.folds {
                    let test: BTreeSet<_> = f.test.iter().map(|&i| &g[i]).collect();
                    let valid: BTreeSet<_> = f.valid.iter().map(|&i| &g[i]).collect();
                    prop_assert!(f.train.iter().chain(&f.valid).all(|&i| !test.contains(&g[i])));
                    prop_assert!(f.train.iter().all(|&i| !valid.contains(&g[i])));
                    prop_assert_eq!(f.train.len() + f.valid.len() + f.test.len(), y.len());
                }
            }
        }
    }
}
