//! Frozen feature extractor, scale/shift modulation, and the classifier.

pub mod classifier;
pub mod extractor;
pub mod ss;

pub use classifier::{classifier_forward, Classifier};
pub use extractor::{forward_features, Activation, ArchConfig, Extractor, Layer, LayerKind, LayerVars, SsVars};
pub use ss::{
    count_params, ss_forward, ss_forward_vars, ss_statistics, CountMode, GroupStats, Histogram, LayerCount,
    ParamCounts, SsLayer, SsParams, SsStatistics,
};
