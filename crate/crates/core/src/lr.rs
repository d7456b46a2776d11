//! Step-decay learning-rate schedule shared by pretraining and meta-training.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `max(init * 0.5^(step / halve_every), floor)`, halving on integer boundaries.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepDecay {
    pub init: f64,
    pub halve_every: usize,
    pub floor: f64,
}

impl StepDecay {
    pub fn validate(&self, what: &str) -> Result<()> {
        if self.init.is_nan() || self.init <= 0.0 || self.floor.is_nan() || self.floor <= 0.0 || self.floor > self.init || !self.init.is_finite() {
            return Err(Error::Config(format!("{}: need 0 < floor <= init (got init {}, floor {})", what, self.init, self.floor)));
        }
        if self.halve_every == 0 {
            return Err(Error::Config(format!("{}: halve_every must be at least 1", what)));
        }
        Ok(())
    }

    pub fn rate(&self, step: usize) -> f64 {
        let halvings = (step / self.halve_every).min(1100) as i32;
        (self.init * 0.5f64.powi(halvings)).max(self.floor)
    }
}
