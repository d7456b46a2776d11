pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod curriculum;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod lr;
pub mod meta;
pub mod metrics;
pub mod model;
pub mod pretrain;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
