//! Meta-batches: gradients averaged over tasks, one step per batch.

use rayon::prelude::*;

use crate::data::{Dataset, Episode};
use crate::error::{Error, Result};
use crate::meta::config::MetaConfig;
use crate::meta::state::{ModelState, Phase};
use crate::meta::task::{apply_meta_step, evaluate_task, TaskOutcome, TaskResult};
use crate::tensor::Tensor;

/// Counts meta steps and tasks; the step index drives the meta-rate schedule.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MetaTrainer {
    pub steps: usize,
    pub tasks: usize,
}

impl MetaTrainer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Runs every episode against the same snapshot of `state`, averages the
    /// meta-gradients, and takes one step. Outcomes come back in episode order.
    pub fn train_batch(
        &mut self,
        ds: &Dataset,
        episodes: &[Episode],
        state: &mut ModelState,
        cfg: &MetaConfig,
    ) -> Result<Vec<TaskOutcome>> {
        if episodes.is_empty() {
            return Ok(Vec::new());
        }
        if !state.mode.meta_trains() {
            return Err(Error::invalid(format!("mode {} has no meta-training phase", state.mode)));
        }
        let snapshot: &ModelState = state;
        let results: Vec<TaskResult> = if cfg.parallel && episodes.len() > 1 {
            episodes.par_iter().map(|ep| evaluate_task(ds, ep, snapshot, cfg, true)).collect::<Result<_>>()?
        } else {
            episodes.iter().map(|ep| evaluate_task(ds, ep, snapshot, cfg, true)).collect::<Result<_>>()?
        };
        let mean = mean_grads(&results)?;
        let rate = cfg.meta_lr.rate(self.steps);
        apply_meta_step(state, &mean, rate)?;
        state.phase = Phase::Meta;
        self.steps += 1;
        self.tasks += episodes.len();
        Ok(results.into_iter().map(|r| r.outcome).collect())
    }
}

fn mean_grads(results: &[TaskResult]) -> Result<Vec<Tensor>> {
    let mut acc: Option<Vec<Tensor>> = None;
    for r in results {
        let g = r.grads.as_ref().ok_or_else(|| Error::invalid("task returned no meta-gradient"))?;
        acc = Some(match acc {
            None => g.clone(),
            Some(a) => a.iter().zip(g).map(|(x, y)| x.sgd_step(y, -1.0)).collect::<Result<_>>()?,
        });
    }
    let k = 1.0 / results.len() as f64;
    Ok(acc.unwrap_or_default().iter().map(|t| t.map(|v| v * k)).collect())
}
