#![allow(dead_code)]

use metashift::data::{sample_episode, synth_generate, Dataset, Episode, EpisodeShape, SynthConfig};
use metashift::meta::{MetaConfig, Mode, ModelState};
use metashift::model::{ArchConfig, Extractor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn vectors(classes: usize, per_class: usize, dims: usize, noise: f64, seed: u64) -> Dataset {
    synth_generate(&SynthConfig { classes, per_class, dims, noise, ..Default::default() }, seed).unwrap()
}

/// A frozen, randomly initialised two-layer perceptron.
pub fn perceptron(input: usize, hidden: usize, seed: u64) -> Extractor {
    let arch = ArchConfig { hidden: vec![hidden, hidden], ..Default::default() };
    let mut ex = Extractor::random(&arch, &[input], &mut rng(seed)).unwrap();
    ex.freeze();
    ex
}

pub fn state(ex: &Extractor, mode: Mode, way: usize, seed: u64) -> ModelState {
    ModelState::new(ex.clone(), mode, way, &[], &mut rng(seed)).unwrap()
}

pub fn episode(ds: &Dataset, classes: &[usize], shape: EpisodeShape, seed: u64) -> Episode {
    sample_episode(ds, classes, shape, &mut rng(seed)).unwrap()
}

/// Small serial config for oracle checks.
pub fn tiny_meta(mode: Mode, steps: usize) -> MetaConfig {
    MetaConfig { k_test: 3, inner_epochs: steps, inner_lr: 0.3, mode, parallel: false, ..Default::default() }
}
