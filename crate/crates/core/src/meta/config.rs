use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::UnrollConfig;
use crate::data::EpisodeShape;
use crate::error::{Error, Result};
use crate::lr::StepDecay;

/// What the meta-learner trains, and what adapts inside each task.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Scale/shift on every extractor layer, plus the classifier initialisation.
    #[default]
    Ss,
    /// Scale/shift on the last extractor layer only.
    SsBlock,
    /// All extractor weights plus the classifier.
    FtFull,
    /// The last extractor layer plus the classifier.
    FtBlock,
    /// The classifier initialisation only.
    FtClassifier,
    /// No meta-training; tasks adapt a fresh classifier.
    #[serde(alias = "update-θ")]
    UpdateTheta,
    /// No meta-training; tasks adapt the extractor and a fresh classifier.
    UpdateAll,
}

impl Mode {
    pub const ALL: [Mode; 7] =
        [Mode::Ss, Mode::SsBlock, Mode::FtFull, Mode::FtBlock, Mode::FtClassifier, Mode::UpdateTheta, Mode::UpdateAll];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Ss => "ss",
            Mode::SsBlock => "ss-block",
            Mode::FtFull => "ft-full",
            Mode::FtBlock => "ft-block",
            Mode::FtClassifier => "ft-classifier",
            Mode::UpdateTheta => "update-theta",
            Mode::UpdateAll => "update-all",
        }
    }

    /// Whether the meta-train phase does anything.
    pub fn meta_trains(self) -> bool {
        !matches!(self, Mode::UpdateTheta | Mode::UpdateAll)
    }

    /// Layers carrying scale/shift parameters.
    pub fn ss_layers(self, n: usize) -> Vec<bool> {
        match self {
            Mode::Ss => vec![true; n],
            Mode::SsBlock => (0..n).map(|i| i + 1 == n).collect(),
            _ => vec![false; n],
        }
    }

    /// Extractor layers whose raw weights are meta-learned.
    pub fn ft_layers(self, n: usize) -> Vec<bool> {
        match self {
            Mode::FtFull => vec![true; n],
            Mode::FtBlock => (0..n).map(|i| i + 1 == n).collect(),
            _ => vec![false; n],
        }
    }

    /// Whether the task-level inner loop also adapts the extractor.
    pub fn adapts_extractor(self) -> bool {
        self == Mode::UpdateAll
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase().replace('_', "-");
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .or_else(|| (s == "update-θ").then_some(Mode::UpdateTheta))
            .ok_or_else(|| {
                let names: Vec<&str> = Mode::ALL.iter().map(|m| m.name()).collect();
                Error::Config(format!("unknown mode '{}' (expected one of {})", s, names.join(", ")))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetaConfig {
    pub way: usize,
    pub k_train: usize,
    pub k_test: usize,
    /// Base-learner step size.
    pub inner_lr: f64,
    /// Full-batch gradient steps per task.
    pub inner_epochs: usize,
    pub meta_lr: StepDecay,
    pub meta_batch: usize,
    pub mode: Mode,
    pub first_order: bool,
    /// Run the tasks of a meta-batch on the thread pool.
    pub parallel: bool,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            way: 5,
            k_train: 1,
            k_test: 15,
            inner_lr: 0.1,
            inner_epochs: 20,
            meta_lr: StepDecay { init: 0.1, halve_every: 100, floor: 0.01 },
            meta_batch: 2,
            mode: Mode::Ss,
            first_order: false,
            parallel: true,
        }
    }
}

impl MetaConfig {
    pub fn shape(&self) -> EpisodeShape {
        EpisodeShape { way: self.way, k_train: self.k_train, k_test: self.k_test }
    }

    pub fn unroll(&self) -> UnrollConfig {
        UnrollConfig { steps: self.inner_epochs, inner_lr: self.inner_lr, first_order: self.first_order }
    }

    pub fn validate(&self) -> Result<()> {
        if self.way < 2 || self.k_train == 0 || self.k_test == 0 {
            return Err(Error::Config(format!(
                "meta: need way >= 2 and positive shots (way {}, k_train {}, k_test {})",
                self.way, self.k_train, self.k_test
            )));
        }
        if !self.inner_lr.is_finite() || self.inner_lr < 0.0 {
            return Err(Error::Config(format!("meta.inner_lr must be a non-negative number, got {}", self.inner_lr)));
        }
        if self.inner_epochs == 0 {
            return Err(Error::Config("meta.inner_epochs must be at least 1".into()));
        }
        if self.meta_batch == 0 {
            return Err(Error::Config("meta.meta_batch must be at least 1".into()));
        }
        self.meta_lr.validate("meta.meta_lr")
    }
}
