//! Datasets, class splits, and episodic task sampling.

pub mod dataset;
pub mod episode;
pub mod io;
pub mod split;
pub mod synth;

pub use dataset::{Dataset, Sample};
pub use episode::{
    sample_episode, sample_hard_episode, ClassSource, Episode, EpisodeShape, FailureRecord, HardEpisode,
    HardMethod, Shot,
};
pub use io::{load_dataset, write_packed, write_tensor_dir, DataFormat};
pub use split::{Partition, SplitMode, SplitSpec};
pub use synth::{synth_generate, SynthConfig, SynthKind};
