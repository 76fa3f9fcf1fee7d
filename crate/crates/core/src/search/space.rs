//! Search spaces and the configuration sampler.
//!
//! After a warm-up of uniform draws the sampler splits the history at the
//! median loss, fits independent per-dimension Parzen densities `l` (good
//! trials) and `g` (the rest), draws candidates from `l` and keeps the one
//! maximizing `Π l(x)/g(x)`.

use std::collections::BTreeMap;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Domain {
    Float {
        low: f64,
        high: f64,
        #[serde(default)]
        log: bool,
    },
    Int {
        low: i64,
        high: i64,
        #[serde(default)]
        log: bool,
    },
    Categorical {
        choices: Vec<String>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Float(f64),
    Categorical(String),
}

impl std::fmt::Display for ParamValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParamValue::Int(v) => write!(f, "{v}"),
            ParamValue::Float(v) => write!(f, "{v}"),
            ParamValue::Categorical(v) => write!(f, "{v}"),
        }
    }
}

pub type Config = BTreeMap<String, ParamValue>;

/// Named hyperparameter domains, visited in name order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub params: BTreeMap<String, Domain>,
}

impl SearchSpace {
    pub fn with(mut self, name: &str, domain: Domain) -> Self {
        self.params.insert(name.to_string(), domain);
        self
    }

    pub fn float(self, name: &str, low: f64, high: f64, log: bool) -> Self {
        self.with(name, Domain::Float { low, high, log })
    }

    pub fn int(self, name: &str, low: i64, high: i64, log: bool) -> Self {
        self.with(name, Domain::Int { low, high, log })
    }

    pub fn categorical(self, name: &str, choices: &[&str]) -> Self {
        self.with(
            name,
            Domain::Categorical {
                choices: choices.iter().map(|s| s.to_string()).collect(),
            },
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.params.is_empty() {
            return Err(Error::InvalidConfig("empty search space".into()));
        }
        for (name, d) in &self.params {
            let ok = match d {
                Domain::Float { low, high, log } => {
                    low.is_finite() && high.is_finite() && low <= high && (!log || *low > 0.0)
                }
                Domain::Int { low, high, log } => low <= high && (!log || *low > 0),
                Domain::Categorical { choices } => !choices.is_empty(),
            };
            if !ok {
                return Err(Error::InvalidConfig(format!("invalid domain for `{name}`: {d:?}")));
            }
        }
        Ok(())
    }

    pub fn contains(&self, config: &Config) -> bool {
        self.params.len() == config.len()
            && self.params.iter().all(|(name, d)| match (d, config.get(name)) {
                (Domain::Float { low, high, .. }, Some(ParamValue::Float(v))) => low <= v && v <= high,
                (Domain::Int { low, high, .. }, Some(ParamValue::Int(v))) => low <= v && v <= high,
                (Domain::Categorical { choices }, Some(ParamValue::Categorical(v))) => choices.contains(v),
                _ => false,
            })
    }
}

/// Reads typed values out of a configuration.
pub trait ConfigExt {
    fn float(&self, name: &str) -> Result<f64>;
    fn int(&self, name: &str) -> Result<i64>;
    fn choice(&self, name: &str) -> Result<&str>;
}

impl ConfigExt for Config {
    fn float(&self, name: &str) -> Result<f64> {
        match self.get(name) {
            Some(ParamValue::Float(v)) => Ok(*v),
            Some(ParamValue::Int(v)) => Ok(*v as f64),
            other => Err(Error::InvalidConfig(format!("`{name}` is not a number: {other:?}"))),
        }
    }

    fn int(&self, name: &str) -> Result<i64> {
        match self.get(name) {
            Some(ParamValue::Int(v)) => Ok(*v),
            other => Err(Error::InvalidConfig(format!("`{name}` is not an integer: {other:?}"))),
        }
    }

    fn choice(&self, name: &str) -> Result<&str> {
        match self.get(name) {
            Some(ParamValue::Categorical(v)) => Ok(v),
            other => Err(Error::InvalidConfig(format!("`{name}` is not a choice: {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    /// Density-ratio surrogate after the warm-up.
    Tpe,
    /// Uniform random search, kept for ablations.
    Uniform,
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::InvalidConfig(format!("unknown sampler `{s}` (expected tpe or uniform)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    /// Uniform draws before the surrogate takes over.
    pub warmup: usize,
    pub n_candidates: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            kind: SamplerKind::Tpe,
            warmup: 10,
            n_candidates: 24,
        }
    }
}

/// Numeric domains are modelled on the unit interval (after a log map when
/// requested); integers are widened by half a step on each side.
fn unit_bounds(d: &Domain) -> Option<(f64, f64, bool)> {
    match d {
        Domain::Float { low, high, log } => Some((*low, *high, *log)),
        Domain::Int { low, high, log } => {
            let (lo, hi) = (*low as f64 - 0.5, *high as f64 + 0.5);
            if *log {
                Some((lo.max(*low as f64 * 0.5), hi, true))
            } else {
                Some((lo, hi, false))
            }
        }
        Domain::Categorical { .. } => None,
    }
}

fn to_unit(d: &Domain, v: &ParamValue) -> f64 {
    let (lo, hi, log) = unit_bounds(d).expect("numeric domain");
    let x = match v {
        ParamValue::Float(x) => *x,
        ParamValue::Int(x) => *x as f64,
        ParamValue::Categorical(_) => unreachable!("numeric value"),
    };
    let (lo, hi, x) = if log { (lo.ln(), hi.ln(), x.ln()) } else { (lo, hi, x) };
    if hi > lo {
        ((x - lo) / (hi - lo)).clamp(0.0, 1.0)
    } else {
        0.5
    }
}

fn from_unit(d: &Domain, u: f64) -> ParamValue {
    let (lo, hi, log) = unit_bounds(d).expect("numeric domain");
    let x = if log {
        (lo.ln() + u * (hi.ln() - lo.ln())).exp()
    } else {
        lo + u * (hi - lo)
    };
    match d {
        Domain::Float { low, high, .. } => ParamValue::Float(x.clamp(*low, *high)),
        Domain::Int { low, high, .. } => ParamValue::Int((x.round() as i64).clamp(*low, *high)),
        Domain::Categorical { .. } => unreachable!("numeric domain"),
    }
}

fn uniform_value(d: &Domain, r: &mut Rng) -> ParamValue {
    match d {
        Domain::Categorical { choices } => ParamValue::Categorical(choices[r.random_range(0..choices.len())].clone()),
        Domain::Int { low, high, log: false } => ParamValue::Int(r.random_range(*low..=*high)),
        _ => from_unit(d, r.random::<f64>()),
    }
}

pub fn sample_uniform(space: &SearchSpace, r: &mut Rng) -> Config {
    space
        .params
        .iter()
        .map(|(name, d)| (name.clone(), uniform_value(d, r)))
        .collect()
}

/// One-dimensional Parzen density on [0, 1] (or over categories), mixed with
/// a uniform prior of weight `1/(m+1)`.
enum Parzen {
    Numeric { centers: Vec<f64>, sigma: f64 },
    Categorical { probs: Vec<f64> },
}

impl Parzen {
    fn fit(d: &Domain, values: &[&ParamValue]) -> Self {
        match d {
            Domain::Categorical { choices } => {
                let mut counts = vec![1.0 / choices.len() as f64; choices.len()];
                for v in values {
                    if let ParamValue::Categorical(c) = v {
                        if let Some(k) = choices.iter().position(|x| x == c) {
                            counts[k] += 1.0;
                        }
                    }
                }
                let total: f64 = counts.iter().sum();
                Parzen::Categorical {
                    probs: counts.into_iter().map(|c| c / total).collect(),
                }
            }
            _ => {
                let centers: Vec<f64> = values.iter().map(|v| to_unit(d, v)).collect();
                let m = centers.len().max(1) as f64;
                let mean = centers.iter().sum::<f64>() / m;
                let var = centers.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / m;
                let sigma = (1.06 * var.sqrt() * m.powf(-0.2)).clamp(0.05, 0.5);
                Parzen::Numeric { centers, sigma }
            }
        }
    }

    fn prior_weight(&self) -> f64 {
        match self {
            Parzen::Numeric { centers, .. } => 1.0 / (centers.len() + 1) as f64,
            Parzen::Categorical { .. } => 0.0,
        }
    }

    /// Density at unit coordinate `u` (numeric) or category index (categorical).
    fn density(&self, u: f64) -> f64 {
        match self {
            Parzen::Categorical { probs } => probs[u as usize],
            Parzen::Numeric { centers, sigma } => {
                let w = self.prior_weight();
                let norm = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
                let kernel: f64 = centers
                    .iter()
                    .map(|c| norm * (-0.5 * ((u - c) / sigma).powi(2)).exp())
                    .sum::<f64>();
                w + (1.0 - w) * kernel / centers.len().max(1) as f64
            }
        }
    }

    fn sample(&self, r: &mut Rng) -> f64 {
        match self {
            Parzen::Categorical { probs } => {
                let u: f64 = r.random();
                let mut acc = 0.0;
                for (k, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return k as f64;
                    }
                }
                (probs.len() - 1) as f64
            }
            Parzen::Numeric { centers, sigma } => {
                if centers.is_empty() || r.random::<f64>() < self.prior_weight() {
                    return r.random();
                }
                let c = centers[r.random_range(0..centers.len())];
                for _ in 0..100 {
                    let z: f64 = StandardNormal.sample(r);
                    let u = c + sigma * z;
                    if (0.0..=1.0).contains(&u) {
                        return u;
                    }
                }
                c
            }
        }
    }
}

/// Proposes the next configuration given `(config, loss)` history.
pub fn sample_config(space: &SearchSpace, history: &[(Config, f64)], seed: u64, sampler: &SamplerConfig) -> Config {
    let mut r = rng(seed);
    if sampler.kind == SamplerKind::Uniform || history.len() < sampler.warmup.max(2) {
        return sample_uniform(space, &mut r);
    }
    let mut losses: Vec<f64> = history.iter().map(|h| h.1).collect();
    losses.sort_by(f64::total_cmp);
    let median = losses[losses.len() / 2];
    let mut good: Vec<&Config> = history.iter().filter(|h| h.1 < median).map(|h| &h.0).collect();
    let mut bad: Vec<&Config> = history.iter().filter(|h| h.1 >= median).map(|h| &h.0).collect();
    if good.is_empty() {
        let mut order: Vec<usize> = (0..history.len()).collect();
        order.sort_by(|&a, &b| history[a].1.total_cmp(&history[b].1).then(a.cmp(&b)));
        let half = history.len().div_ceil(2);
        good = order[..half].iter().map(|&i| &history[i].0).collect();
        bad = order[half..].iter().map(|&i| &history[i].0).collect();
    }

    let models: Vec<(&String, &Domain, Parzen, Parzen)> = space
        .params
        .iter()
        .map(|(name, d)| {
            let gv: Vec<&ParamValue> = good.iter().filter_map(|c| c.get(name)).collect();
            let bv: Vec<&ParamValue> = bad.iter().filter_map(|c| c.get(name)).collect();
            (name, d, Parzen::fit(d, &gv), Parzen::fit(d, &bv))
        })
        .collect();

    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..sampler.n_candidates.max(1) {
        let point: Vec<f64> = models.iter().map(|(_, _, l, _)| l.sample(&mut r)).collect();
        let score: f64 = models
            .iter()
            .zip(&point)
            .map(|((_, _, l, g), &u)| l.density(u).ln() - g.density(u).ln())
            .sum();
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, point));
        }
    }
    let (_, point) = best.expect("at least one candidate");
    models
        .iter()
        .zip(point)
        .map(|((name, d, _, _), u)| {
            let value = match d {
                Domain::Categorical { choices } => ParamValue::Categorical(choices[u as usize].clone()),
                _ => from_unit(d, u),
            };
            ((*name).clone(), value)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space() -> SearchSpace {
        SearchSpace::default()
            .float("h", 0.0, 1.0, false)
            .float("lr", 1e-4, 1e-1, true)
            .int("depth", 1, 8, false)
            .categorical("kind", &["a", "b", "c"])
    }

    #[test]
    fn uniform_samples_stay_in_bounds() {
        let s = space();
        s.validate().unwrap();
        for seed in 0..200 {
            assert!(s.contains(&sample_config(&s, &[], seed, &SamplerConfig::default())));
        }
    }

    #[test]
    fn fixed_seed_and_history_give_the_same_proposal() {
        let s = space();
        let history: Vec<(Config, f64)> = (0..15)
            .map(|i| {
                let c = sample_uniform(&s, &mut rng(i));
                let loss = c.float("h").unwrap();
                (c, loss)
            })
            .collect();
        let a = sample_config(&s, &history, 99, &SamplerConfig::default());
        assert_eq!(a, sample_config(&s, &history, 99, &SamplerConfig::default()));
        assert!(s.contains(&a));
    }

    #[test]
    fn surrogate_concentrates_on_the_good_region() {
        let s = SearchSpace::default().float("h", 0.0, 1.0, false);
        let history: Vec<(Config, f64)> = (0..20)
            .map(|i| {
                let h = (i as f64 + 0.5) / 20.0;
                let score = if h > 0.9 { 1.0 } else { 0.0 };
                (BTreeMap::from([("h".to_string(), ParamValue::Float(h))]), 1.0 - score)
            })
            .collect();
        let hits = (0..100)
            .filter(|&seed| {
                let c = sample_config(&s, &history, seed, &SamplerConfig::default());
                c.float("h").unwrap() > 0.8
            })
            .count();
        assert!(hits >= 60, "{hits}/100 proposals above 0.8");
    }

    #[test]
    fn config_json_round_trip_keeps_types() {
        let c = sample_uniform(&space(), &mut rng(3));
        let back: Config = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
