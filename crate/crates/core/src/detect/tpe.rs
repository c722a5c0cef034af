//! Tree-structured Parzen estimator with independent per-dimension
//! densities.
//!
//! The first `ceil(budget / 4)` trials are drawn uniformly. After that the
//! trials seen so far are split at the top quarter by objective value; each
//! half gets a kernel density per dimension, 24 candidates are drawn from
//! the good densities and the one with the largest good/bad ratio is run.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SafeError};
use crate::rng::{self, SafeRng};

/// Fraction of past trials treated as good.
pub const GAMMA: f64 = 0.25;
/// Candidates drawn from the good densities per step.
pub const CANDIDATES: usize = 24;
/// Objective value recorded for trials that returned an error.
pub const FAILED_VALUE: f64 = -1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ParamSpec {
    /// Inclusive integer range.
    Int { name: String, low: i64, high: i64 },
    Float { name: String, low: f64, high: f64 },
    Categorical { name: String, choices: Vec<String> },
}

impl ParamSpec {
    pub fn int(name: &str, low: i64, high: i64) -> Self {
        ParamSpec::Int {
            name: name.into(),
            low,
            high,
        }
    }

    pub fn float(name: &str, low: f64, high: f64) -> Self {
        ParamSpec::Float {
            name: name.into(),
            low,
            high,
        }
    }

    pub fn categorical<S: Into<String>>(name: &str, choices: impl IntoIterator<Item = S>) -> Self {
        ParamSpec::Categorical {
            name: name.into(),
            choices: choices.into_iter().map(Into::into).collect(),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            ParamSpec::Int { name, .. } | ParamSpec::Float { name, .. } | ParamSpec::Categorical { name, .. } => name,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            ParamSpec::Int { low, high, .. } => low <= high,
            ParamSpec::Float { low, high, .. } => low.is_finite() && high.is_finite() && low <= high,
            ParamSpec::Categorical { choices, .. } => !choices.is_empty(),
        };
        if ok {
            Ok(())
        } else {
            Err(SafeError::Config(format!("empty search range for `{}`", self.name())))
        }
    }

    fn uniform(&self, rng: &mut SafeRng) -> ParamValue {
        match self {
            ParamSpec::Int { low, high, .. } => ParamValue::Int(rng.random_range(*low..=*high)),
            ParamSpec::Float { low, high, .. } if low == high => ParamValue::Float(*low),
            ParamSpec::Float { low, high, .. } => ParamValue::Float(rng.random_range(*low..*high)),
            ParamSpec::Categorical { choices, .. } => {
                ParamValue::Categorical(choices[rng.random_range(0..choices.len())].clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Float(f64),
    Categorical(String),
}

impl ParamValue {
    pub fn as_i64(&self) -> Option<i64> {
        match self {
            ParamValue::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Int(v) => Some(*v as f64),
            ParamValue::Float(v) => Some(*v),
            ParamValue::Categorical(_) => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            ParamValue::Categorical(s) => Some(s),
            _ => None,
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Int(v) => write!(f, "{v}"),
            ParamValue::Float(v) => write!(f, "{v}"),
            ParamValue::Categorical(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub params: Vec<ParamSpec>,
    /// Number of trials.
    pub budget: usize,
    pub seed: u64,
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(SafeError::Config("search budget must be at least 1".into()));
        }
        if self.params.is_empty() {
            return Err(SafeError::Config("search space has no parameters".into()));
        }
        self.params.iter().try_for_each(ParamSpec::validate)
    }

    pub fn startup_trials(&self) -> usize {
        self.budget.div_ceil(4)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub number: usize,
    pub params: Vec<ParamValue>,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub names: Vec<String>,
    pub best: Trial,
    pub trials: Vec<Trial>,
}

impl SearchResult {
    /// Value of the best trial's parameter called `name`.
    pub fn best_param(&self, name: &str) -> Option<&ParamValue> {
        self.names.iter().position(|n| n == name).map(|i| &self.best.params[i])
    }
}

/// One dimension's density over a set of observations.
enum Density {
    /// Gaussian kernels plus one uniform prior component over `[low, high]`.
    Numeric { centers: Vec<f64>, bandwidth: f64, low: f64, high: f64 },
    Categorical { weights: Vec<f64> },
}

fn numeric_range(spec: &ParamSpec) -> (f64, f64) {
    match spec {
        // Integers live on [low - 0.5, high + 0.5] so every value has equal mass.
        ParamSpec::Int { low, high, .. } => (*low as f64 - 0.5, *high as f64 + 0.5),
        ParamSpec::Float { low, high, .. } => (*low, *high),
        ParamSpec::Categorical { .. } => unreachable!("categorical has no range"),
    }
}

impl Density {
    fn fit(spec: &ParamSpec, observed: &[&ParamValue]) -> Self {
        match spec {
            ParamSpec::Categorical { choices, .. } => {
                let mut weights = vec![1.0; choices.len()];
                for v in observed {
                    if let Some(i) = v.as_str().and_then(|s| choices.iter().position(|c| c == s)) {
                        weights[i] += 1.0;
                    }
                }
                let total: f64 = weights.iter().sum();
                weights.iter_mut().for_each(|w| *w /= total);
                Density::Categorical { weights }
            }
            _ => {
                let (low, high) = numeric_range(spec);
                let centers: Vec<f64> = observed.iter().filter_map(|v| v.as_f64()).collect();
                let t = centers.len().max(1) as f64;
                let mean = centers.iter().sum::<f64>() / t;
                let sigma = (centers.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / t).sqrt();
                let range = high - low;
                // The floor shrinks with the number of observations, so a
                // good set that has collapsed onto one value keeps exploring
                // its neighborhood.
                let floor = range / (1.0 + t).min(100.0);
                let bandwidth = (1.06 * sigma * t.powf(-0.2)).clamp(floor, range).max(f64::MIN_POSITIVE);
                Density::Numeric {
                    centers,
                    bandwidth,
                    low,
                    high,
                }
            }
        }
    }

    fn log_pdf(&self, value: &ParamValue, spec: &ParamSpec) -> f64 {
        match self {
            Density::Categorical { weights } => {
                let ParamSpec::Categorical { choices, .. } = spec else { unreachable!() };
                let i = value
                    .as_str()
                    .and_then(|s| choices.iter().position(|c| c == s))
                    .expect("value drawn from this space");
                weights[i].ln()
            }
            Density::Numeric {
                centers,
                bandwidth,
                low,
                high,
            } => {
                let x = value.as_f64().expect("numeric value");
                let norm = 1.0 / (bandwidth * (2.0 * std::f64::consts::PI).sqrt());
                let kernels: f64 = centers
                    .iter()
                    .map(|c| norm * (-0.5 * ((x - c) / bandwidth).powi(2)).exp())
                    .sum();
                let prior = 1.0 / (high - low).max(f64::MIN_POSITIVE);
                ((kernels + prior) / (centers.len() + 1) as f64).max(f64::MIN_POSITIVE).ln()
            }
        }
    }

    fn sample(&self, spec: &ParamSpec, rng: &mut SafeRng) -> ParamValue {
        match self {
            Density::Categorical { weights } => {
                let ParamSpec::Categorical { choices, .. } = spec else { unreachable!() };
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = weights.len() - 1;
                for (i, w) in weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                ParamValue::Categorical(choices[pick].clone())
            }
            Density::Numeric {
                centers,
                bandwidth,
                low,
                high,
            } => {
                let component = rng.random_range(0..=centers.len());
                let x = if component == centers.len() || high == low {
                    if high > low {
                        rng.random_range(*low..*high)
                    } else {
                        *low
                    }
                } else {
                    let normal = Normal::new(centers[component], *bandwidth).expect("positive bandwidth");
                    normal.sample(rng).clamp(*low, *high)
                };
                match spec {
                    ParamSpec::Int { low, high, .. } => ParamValue::Int((x.round() as i64).clamp(*low, *high)),
                    _ => ParamValue::Float(x),
                }
            }
        }
    }
}

fn propose(space: &SearchSpace, trials: &[Trial], rng: &mut SafeRng) -> Vec<ParamValue> {
    let mut ranked: Vec<&Trial> = trials.iter().collect();
    ranked.sort_by(|a, b| b.value.total_cmp(&a.value).then(a.number.cmp(&b.number)));
    let n_good = ((GAMMA * ranked.len() as f64).ceil() as usize).max(1);
    let (good, bad) = ranked.split_at(n_good);

    let models: Vec<(Density, Density)> = space
        .params
        .iter()
        .enumerate()
        .map(|(d, spec)| {
            let g: Vec<&ParamValue> = good.iter().map(|t| &t.params[d]).collect();
            let b: Vec<&ParamValue> = bad.iter().map(|t| &t.params[d]).collect();
            (Density::fit(spec, &g), Density::fit(spec, &b))
        })
        .collect();

    let mut best: Option<(f64, Vec<ParamValue>)> = None;
    for _ in 0..CANDIDATES {
        let candidate: Vec<ParamValue> = space
            .params
            .iter()
            .zip(&models)
            .map(|(spec, (g, _))| g.sample(spec, rng))
            .collect();
        let ratio: f64 = space
            .params
            .iter()
            .zip(&models)
            .zip(&candidate)
            .map(|((spec, (g, b)), v)| g.log_pdf(v, spec) - b.log_pdf(v, spec))
            .sum();
        if best.as_ref().is_none_or(|(r, _)| ratio > *r) {
            best = Some((ratio, candidate));
        }
    }
    best.expect("at least one candidate").1
}

/// Maximizes `objective` over `space`. Objective errors are recorded with
/// value [`FAILED_VALUE`] and the search continues.
pub fn tpe_search<F>(space: &SearchSpace, mut objective: F) -> Result<SearchResult>
where
    F: FnMut(&[ParamValue]) -> Result<f64>,
{
    space.validate()?;
    let mut rng = rng::seeded(space.seed);
    let mut trials: Vec<Trial> = Vec::with_capacity(space.budget);
    for number in 0..space.budget {
        let params = if number < space.startup_trials() {
            space.params.iter().map(|p| p.uniform(&mut rng)).collect()
        } else {
            propose(space, &trials, &mut rng)
        };
        let (value, error) = match objective(&params) {
            Ok(v) if v.is_finite() => (v, None),
            Ok(v) => (FAILED_VALUE, Some(format!("objective returned {v}"))),
            Err(e) => (FAILED_VALUE, Some(e.to_string())),
        };
        trials.push(Trial {
            number,
            params,
            value,
            error,
        });
    }
    let best = trials
        .iter()
        .fold(None::<&Trial>, |acc, t| match acc {
            Some(b) if b.value >= t.value => Some(b),
            _ => Some(t),
        })
        .expect("budget >= 1")
        .clone();
    Ok(SearchResult {
        names: space.params.iter().map(|p| p.name().to_string()).collect(),
        best,
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space(budget: usize, seed: u64) -> SearchSpace {
        SearchSpace {
            params: vec![
                ParamSpec::int("k", 5, 50),
                ParamSpec::categorical("metric", ["a", "b", "c", "d"]),
                ParamSpec::float("x", 0.0, 1.0),
            ],
            budget,
            seed,
        }
    }

    fn objective(p: &[ParamValue]) -> Result<f64> {
        let k = p[0].as_i64().unwrap() as f64;
        let bonus = if p[1].as_str() == Some("c") { 0.2 } else { 0.0 };
        Ok(1.0 - ((k - 20.0) / 45.0).powi(2) + bonus - (p[2].as_f64().unwrap() - 0.3).abs() * 0.1)
    }

    #[test]
    fn budget_one_is_a_single_uniform_draw() {
        let r = tpe_search(&space(1, 4), objective).unwrap();
        assert_eq!(r.trials.len(), 1);
        assert_eq!(r.best, r.trials[0]);
    }

    #[test]
    fn deterministic_for_a_seed() {
        let a = tpe_search(&space(20, 5), objective).unwrap();
        let b = tpe_search(&space(20, 5), objective).unwrap();
        assert_eq!(a, b);
        let c = tpe_search(&space(20, 6), objective).unwrap();
        assert_ne!(a.trials, c.trials);
    }

    #[test]
    fn values_stay_in_bounds() {
        let r = tpe_search(&space(40, 7), objective).unwrap();
        for t in &r.trials {
            let k = t.params[0].as_i64().unwrap();
            assert!((5..=50).contains(&k));
            let x = t.params[2].as_f64().unwrap();
            assert!((0.0..=1.0).contains(&x));
        }
    }

    #[test]
    fn failures_are_recorded() {
        let r = tpe_search(&space(8, 1), |p| {
            if p[0].as_i64().unwrap() % 2 == 0 {
                Err(SafeError::Numerical("odd only".into()))
            } else {
                Ok(0.5)
            }
        })
        .unwrap();
        for t in &r.trials {
            assert_eq!(t.error.is_some(), t.value == FAILED_VALUE);
        }
    }

    #[test]
    fn guided_trials_beat_random_on_average() {
        let mut guided = 0.0;
        for seed in 0..5 {
            let r = tpe_search(&space(40, seed), objective).unwrap();
            let late: f64 = r.trials[10..].iter().map(|t| t.value).sum::<f64>() / 30.0;
            let early: f64 = r.trials[..10].iter().map(|t| t.value).sum::<f64>() / 10.0;
            guided += late - early;
        }
        assert!(guided > 0.0);
    }

    #[test]
    fn empty_ranges_rejected() {
        let mut s = space(3, 0);
        s.params.push(ParamSpec::int("bad", 3, 2));
        assert!(tpe_search(&s, objective).is_err());
        assert!(tpe_search(&space(0, 0), objective).is_err());
    }
}
