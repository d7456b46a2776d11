//! Meta-transfer learning: per-task base-learning and meta-updates of the
//! scale/shift parameters and the classifier initialisation.

pub mod config;
pub mod state;
pub mod task;
pub mod trainer;

pub use config::{MetaConfig, Mode};
pub use state::{ModelState, Phase, StateVars};
pub use task::{
    apply_meta_step, base_learn, evaluate_task, hardest_class, meta_update, outcome_from, test_loss_at, Adapted,
    ClassAccuracy, TaskOutcome, TaskResult,
};
pub use trainer::MetaTrainer;
