//! Meta-test: adapt the classifier on unseen tasks and report accuracy with a
//! 95% confidence interval.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{sample_episode, Dataset, Episode, EpisodeShape};
use crate::error::{Error, Result};
use crate::meta::{evaluate_task, MetaConfig, ModelState};

/// Normal quantile for a two-sided 95% interval.
pub const Z95: f64 = 1.96;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub tasks: usize,
    /// Test samples per class; the meta-train value when unset.
    pub k_test: Option<usize>,
    /// Train samples per class; the meta-train value when unset.
    pub k_train: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { tasks: 600, k_test: None, k_train: None }
    }
}

impl EvalConfig {
    pub fn shape(&self, meta: &MetaConfig) -> EpisodeShape {
        EpisodeShape {
            way: meta.way,
            k_train: self.k_train.unwrap_or(meta.k_train),
            k_test: self.k_test.unwrap_or(meta.k_test),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub half_width: f64,
    pub tasks: usize,
    pub way: usize,
    pub k_train: usize,
    pub k_test: usize,
}

/// `(mean, 1.96 * s / sqrt(n))` with `s` the sample standard deviation.
pub fn confidence_interval(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::invalid(format!("a confidence interval needs at least 2 values, got {}", values.len())));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, Z95 * var.sqrt() / n.sqrt()))
}

/// Test-split accuracy of base-learning on each episode; `state` is only read.
pub fn evaluate_episodes(ds: &Dataset, episodes: &[Episode], state: &ModelState, cfg: &MetaConfig) -> Result<Vec<f64>> {
    let run = |ep: &Episode| evaluate_task(ds, ep, state, cfg, false).map(|r| r.outcome.accuracy);
    if cfg.parallel {
        episodes.par_iter().map(run).collect()
    } else {
        episodes.iter().map(run).collect()
    }
}

/// Samples `n_tasks` episodes from `classes` and evaluates them.
pub fn meta_test<R: Rng + ?Sized>(
    ds: &Dataset,
    classes: &[usize],
    state: &ModelState,
    n_tasks: usize,
    shape: EpisodeShape,
    cfg: &MetaConfig,
    rng: &mut R,
) -> Result<EvalReport> {
    if n_tasks < 2 {
        return Err(Error::invalid("meta-test needs at least 2 tasks"));
    }
    let episodes = (0..n_tasks).map(|_| sample_episode(ds, classes, shape, rng)).collect::<Result<Vec<_>>>()?;
    let accuracies = evaluate_episodes(ds, &episodes, state, cfg)?;
    let (mean, half_width) = confidence_interval(&accuracies)?;
    Ok(EvalReport { accuracies, mean, half_width, tasks: n_tasks, way: shape.way, k_train: shape.k_train, k_test: shape.k_test })
}

impl EvalReport {
    /// Human-readable summary.
    pub fn to_text(&self) -> String {
        format!(
            "tasks = {}\nway = {}\nk_train = {}\nk_test = {}\nmean = {:.6}\nhalf_width_95 = {:.6}\n",
            self.tasks, self.way, self.k_train, self.k_test, self.mean, self.half_width
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_examples() {
        assert_eq!(confidence_interval(&[0.5, 0.5, 0.5]).unwrap(), (0.5, 0.0));
        let (m, h) = confidence_interval(&[0.0, 1.0]).unwrap();
        assert_eq!(m, 0.5);
        assert!((h - 0.98).abs() < 1e-12);
        assert!(confidence_interval(&[0.3]).is_err());
    }
}
