use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::space::{sample_config, Config, SamplerConfig, SearchSpace};
use crate::error::{Error, Result};
use crate::rng::derive_seed;

/// Loss recorded for a trial whose fit failed.
pub const FAILED_SCORE: f64 = f64::MAX;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TrialStatus {
    Ok,
    Failed { message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub id: usize,
    pub config: Config,
    pub seed: u64,
    /// Validation log-loss per fold (empty for failed trials).
    pub fold_scores: Vec<f64>,
    pub mean_score: f64,
    #[serde(default)]
    pub aux: BTreeMap<String, f64>,
    #[serde(flatten)]
    pub status: TrialStatus,
}

impl Trial {
    pub fn succeeded(&self) -> bool {
        self.status == TrialStatus::Ok
    }
}

/// Trials ordered by mean validation loss (ties by trial id).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Leaderboard {
    pub entries: Vec<Trial>,
}

impl Leaderboard {
    pub fn insert(&mut self, trial: Trial) {
        let at = self
            .entries
            .partition_point(|t| (t.mean_score, t.id) <= (trial.mean_score, trial.id));
        self.entries.insert(at, trial);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn best(&self) -> Option<&Trial> {
        self.entries.first()
    }

    pub fn best_score(&self) -> f64 {
        self.best().map_or(FAILED_SCORE, |t| t.mean_score)
    }

    /// The best `k` successful trials.
    pub fn top(&self, k: usize) -> Vec<&Trial> {
        self.entries.iter().filter(|t| t.succeeded()).take(k).collect()
    }

    pub fn n_succeeded(&self) -> usize {
        self.entries.iter().filter(|t| t.succeeded()).count()
    }

    /// Trials in evaluation order.
    pub fn history(&self) -> Vec<&Trial> {
        let mut v: Vec<&Trial> = self.entries.iter().collect();
        v.sort_by_key(|t| t.id);
        v
    }
}

/// What an evaluator reports for one configuration.
pub struct Evaluation<A> {
    pub fold_scores: Vec<f64>,
    pub aux: BTreeMap<String, f64>,
    pub artifact: A,
}

/// Scores a configuration on validation data; artifacts (fitted models,
/// predictions) are kept for the best trials.
pub trait TrialEvaluator: Sync {
    type Artifact: Send;
    fn evaluate(&self, config: &Config, seed: u64) -> Result<Evaluation<Self::Artifact>>;
}

pub struct SearchResult<A> {
    pub leaderboard: Leaderboard,
    /// Artifacts of the `keep` best successful trials, by trial id.
    pub artifacts: BTreeMap<usize, A>,
}

/// Evaluates exactly `budget` configurations. Trial `i` is proposed from the
/// first `i` results with seed `derive_seed(seed, [i])`, so a longer search
/// extends a shorter one with the same seed. Failing fits are recorded with
/// [`FAILED_SCORE`] and the search continues.
pub fn run_search<E: TrialEvaluator>(
    space: &SearchSpace,
    evaluator: &E,
    budget: usize,
    seed: u64,
    sampler: &SamplerConfig,
    keep: usize,
) -> Result<SearchResult<E::Artifact>> {
    if budget == 0 {
        return Err(Error::InvalidConfig("search budget must be at least 1".into()));
    }
    space.validate()?;
    let mut leaderboard = Leaderboard::default();
    let mut history: Vec<(Config, f64)> = Vec::with_capacity(budget);
    let mut artifacts = BTreeMap::new();
    for id in 0..budget {
        let config = sample_config(space, &history, derive_seed(seed, &[id as u64, 0]), sampler);
        let trial_seed = derive_seed(seed, &[id as u64, 1]);
        let trial = match evaluator.evaluate(&config, trial_seed) {
            Ok(eval) if eval.fold_scores.iter().all(|s| s.is_finite()) && !eval.fold_scores.is_empty() => {
                let mean = eval.fold_scores.iter().sum::<f64>() / eval.fold_scores.len() as f64;
                artifacts.insert(id, eval.artifact);
                Trial {
                    id,
                    config: config.clone(),
                    seed: trial_seed,
                    fold_scores: eval.fold_scores,
                    mean_score: mean,
                    aux: eval.aux,
                    status: TrialStatus::Ok,
                }
            }
            Ok(_) => failed(id, &config, trial_seed, "non-finite validation score".into()),
            Err(e) => {
                log::debug!("trial {id} failed: {e}");
                failed(id, &config, trial_seed, e.to_string())
            }
        };
        history.push((config, trial.mean_score));
        leaderboard.insert(trial);
        let kept: Vec<usize> = leaderboard.top(keep).iter().map(|t| t.id).collect();
        artifacts.retain(|id, _| kept.contains(id));
    }
    Ok(SearchResult { leaderboard, artifacts })
}

fn failed(id: usize, config: &Config, seed: u64, message: String) -> Trial {
    Trial {
        id,
        config: config.clone(),
        seed,
        fold_scores: Vec::new(),
        mean_score: FAILED_SCORE,
        aux: BTreeMap::new(),
        status: TrialStatus::Failed { message },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search::space::{ConfigExt, SamplerKind};

    struct Quadratic;

    impl TrialEvaluator for Quadratic {
        type Artifact = f64;
        fn evaluate(&self, config: &Config, _seed: u64) -> Result<Evaluation<f64>> {
            let h = config.float("h")?;
            if h < 0.05 {
                return Err(Error::SingleClass);
            }
            Ok(Evaluation {
                fold_scores: vec![(h - 0.7).powi(2), (h - 0.7).powi(2) + 0.1],
                aux: BTreeMap::new(),
                artifact: h,
            })
        }
    }

    fn space() -> SearchSpace {
        SearchSpace::default().float("h", 0.0, 1.0, false)
    }

    #[test]
    fn budget_one_gives_one_entry() {
        let r = run_search(&space(), &Quadratic, 1, 0, &SamplerConfig::default(), 3).unwrap();
        assert_eq!(r.leaderboard.len(), 1);
    }

    #[test]
    fn failures_are_recorded_and_longer_searches_never_do_worse() {
        for seed in 0..5 {
            let short = run_search(&space(), &Quadratic, 10, seed, &SamplerConfig::default(), 2).unwrap();
            let long = run_search(&space(), &Quadratic, 50, seed, &SamplerConfig::default(), 2).unwrap();
            assert!(long.leaderboard.best_score() <= short.leaderboard.best_score());
            assert_eq!(long.leaderboard.history()[..10], short.leaderboard.history()[..]);
            assert!(long.artifacts.len() <= 2);
            assert!(long.leaderboard.entries.windows(2).all(|w| w[0].mean_score <= w[1].mean_score));
        }
        // Configurations below 0.05 fail; uniform sampling hits them eventually.
        let r = run_search(
            &space(),
            &Quadratic,
            200,
            1,
            &SamplerConfig {
                kind: SamplerKind::Uniform,
                ..SamplerConfig::default()
            },
            1,
        )
        .unwrap();
        assert_eq!(r.leaderboard.len(), 200);
        assert!(r.leaderboard.n_succeeded() < 200);
    }
}
