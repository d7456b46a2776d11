//! N-way K-shot episode sampling, uniform and conditioned on failure classes.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::dataset::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Episode dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeShape {
    pub way: usize,
    pub k_train: usize,
    pub k_test: usize,
}

impl EpisodeShape {
    pub fn per_class(&self) -> usize {
        self.k_train + self.k_test
    }
}

/// A dataset sample placed in an episode under an episode label.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Shot {
    pub index: usize,
    pub label: usize,
}

/// One few-shot task: a train split for base-learning and a test split for
/// the meta-update.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub shape: EpisodeShape,
    /// Episode label -> dataset class id.
    pub classes: Vec<usize>,
    pub train: Vec<Shot>,
    pub test: Vec<Shot>,
}

impl Episode {
    pub fn way(&self) -> usize {
        self.classes.len()
    }

    pub fn train_labels(&self) -> Vec<usize> {
        self.train.iter().map(|s| s.label).collect()
    }

    pub fn test_labels(&self) -> Vec<usize> {
        self.test.iter().map(|s| s.label).collect()
    }

    pub fn train_inputs(&self, ds: &Dataset) -> Result<Tensor> {
        ds.batch(&self.train.iter().map(|s| s.index).collect::<Vec<_>>())
    }

    pub fn test_inputs(&self, ds: &Dataset) -> Result<Tensor> {
        ds.batch(&self.test.iter().map(|s| s.index).collect::<Vec<_>>())
    }

    /// Every sample index the episode used for `label`, train first.
    pub fn samples_of(&self, label: usize) -> Vec<usize> {
        self.train.iter().chain(&self.test).filter(|s| s.label == label).map(|s| s.index).collect()
    }

    /// Stable fingerprint of the episode's content.
    pub fn fingerprint(&self) -> u64 {
        // FNV-1a over the class map and sample indices.
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |v: usize| {
            for b in (v as u64).to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        self.classes.iter().for_each(|&c| eat(c));
        eat(usize::MAX);
        self.train.iter().chain(&self.test).for_each(|s| {
            eat(s.index);
            eat(s.label);
        });
        h
    }

    /// Checks label counts per split and train/test disjointness.
    pub fn validate(&self) -> Result<()> {
        let way = self.way();
        let distinct: BTreeSet<usize> = self.classes.iter().copied().collect();
        if distinct.len() != way || way != self.shape.way {
            return Err(Error::Data(format!("episode has {} distinct classes, expected {}", distinct.len(), self.shape.way)));
        }
        for (split, shots, k) in [("train", &self.train, self.shape.k_train), ("test", &self.test, self.shape.k_test)] {
            let mut counts = vec![0usize; way];
            for s in shots.iter() {
                if s.label >= way {
                    return Err(Error::Data(format!("{} label {} outside way {}", split, s.label, way)));
                }
                counts[s.label] += 1;
            }
            if let Some(l) = counts.iter().position(|&c| c != k) {
                return Err(Error::Data(format!("{} split has {} shots for label {}, expected {}", split, counts[l], l, k)));
            }
        }
        let train: BTreeSet<usize> = self.train.iter().map(|s| s.index).collect();
        if train.len() != self.train.len() || self.test.iter().any(|s| train.contains(&s.index)) {
            return Err(Error::Data("a sample index is repeated within the episode".into()));
        }
        Ok(())
    }
}

fn check_shape(shape: &EpisodeShape) -> Result<()> {
    if shape.way == 0 || shape.k_train == 0 || shape.k_test == 0 {
        return Err(Error::invalid(format!("episode needs way, k_train, k_test >= 1, got {:?}", shape)));
    }
    Ok(())
}

/// Draws `k_train + k_test` distinct samples of `class` from `candidates`
/// (or from the whole class when `None`), appending shots for `label`.
fn fill_class<R: Rng + ?Sized>(
    ds: &Dataset,
    class: usize,
    label: usize,
    shape: &EpisodeShape,
    rng: &mut R,
    train: &mut Vec<Shot>,
    test: &mut Vec<Shot>,
) -> Result<()> {
    let pool = ds.class_samples(class);
    if pool.len() < shape.per_class() {
        return Err(Error::Data(format!(
            "class {} has {} samples, episode needs {}",
            class,
            pool.len(),
            shape.per_class()
        )));
    }
    let picks = index::sample(rng, pool.len(), shape.per_class());
    for (n, p) in picks.iter().enumerate() {
        let shot = Shot { index: pool[p], label };
        if n < shape.k_train {
            train.push(shot);
        } else {
            test.push(shot);
        }
    }
    Ok(())
}

/// Uniformly samples an episode from `classes` (one partition of the split).
pub fn sample_episode<R: Rng + ?Sized>(
    ds: &Dataset,
    classes: &[usize],
    shape: EpisodeShape,
    rng: &mut R,
) -> Result<Episode> {
    check_shape(&shape)?;
    if classes.len() < shape.way {
        return Err(Error::Data(format!("partition has {} classes, episode needs {}", classes.len(), shape.way)));
    }
    let chosen: Vec<usize> = index::sample(rng, classes.len(), shape.way).iter().map(|i| classes[i]).collect();
    let mut train = Vec::with_capacity(shape.way * shape.k_train);
    let mut test = Vec::with_capacity(shape.way * shape.k_test);
    for (label, &c) in chosen.iter().enumerate() {
        fill_class(ds, c, label, &shape, rng, &mut train, &mut test)?;
    }
    Ok(Episode { shape, classes: chosen, train, test })
}

/// How a hard episode takes its train samples for failure classes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HardMethod {
    /// Train samples come from the exact samples seen at failure time.
    Reuse,
    /// Fresh samples are drawn by class label.
    #[default]
    Resample,
}

/// A failure class and the samples it was seen with.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FailureRecord {
    pub class: usize,
    pub samples: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassSource {
    Pool,
    Padding,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HardEpisode {
    pub episode: Episode,
    /// Where each episode label's class came from.
    pub provenance: Vec<ClassSource>,
    /// Pool classes for which `Reuse` fell back to resampling.
    pub fallbacks: Vec<usize>,
}

/// Samples a task from the failure-conditioned distribution.
///
/// Distinct failure classes are drawn without replacement with probability
/// proportional to their multiplicity in `pool`. When fewer than `way`
/// distinct classes failed, the rest are drawn uniformly from `fill_classes`.
pub fn sample_hard_episode<R: Rng + ?Sized>(
    ds: &Dataset,
    pool: &[FailureRecord],
    fill_classes: &[usize],
    shape: EpisodeShape,
    method: HardMethod,
    rng: &mut R,
) -> Result<HardEpisode> {
    check_shape(&shape)?;
    if pool.is_empty() {
        return Err(Error::invalid("failure pool is empty"));
    }
    let mut weight: BTreeMap<usize, usize> = BTreeMap::new();
    let mut recorded: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for r in pool {
        *weight.entry(r.class).or_default() += 1;
        recorded.entry(r.class).or_default().extend(r.samples.iter().copied());
    }

    let mut chosen = Vec::with_capacity(shape.way);
    let mut provenance = Vec::with_capacity(shape.way);
    while chosen.len() < shape.way && !weight.is_empty() {
        let total: usize = weight.values().sum();
        let mut ticket = rng.random_range(0..total);
        let class = *weight
            .iter()
            .find(|(_, &w)| {
                if ticket < w {
                    true
                } else {
                    ticket -= w;
                    false
                }
            })
            .map(|(c, _)| c)
            .expect("ticket within total weight");
        weight.remove(&class);
        chosen.push(class);
        provenance.push(ClassSource::Pool);
    }
    if chosen.len() < shape.way {
        let taken: BTreeSet<usize> = chosen.iter().copied().collect();
        let free: Vec<usize> = fill_classes.iter().copied().filter(|c| !taken.contains(c)).collect();
        let need = shape.way - chosen.len();
        if free.len() < need {
            return Err(Error::Data(format!("cannot pad hard episode: need {} more classes, {} available", need, free.len())));
        }
        for i in index::sample(rng, free.len(), need) {
            chosen.push(free[i]);
            provenance.push(ClassSource::Padding);
        }
    }

    let mut train = Vec::with_capacity(shape.way * shape.k_train);
    let mut test = Vec::with_capacity(shape.way * shape.k_test);
    let mut fallbacks = Vec::new();
    for (label, (&class, src)) in chosen.iter().zip(&provenance).enumerate() {
        let reuse = match (method, src) {
            (HardMethod::Reuse, ClassSource::Pool) => {
                let seen: Vec<usize> = recorded[&class].iter().copied().collect();
                let rest: Vec<usize> =
                    ds.class_samples(class).iter().copied().filter(|i| !seen.contains(i)).collect();
                // Train from the recorded samples, test drawn fresh from the rest of the class.
                if seen.len() >= shape.k_train && rest.len() + seen.len() - shape.k_train >= shape.k_test {
                    Some(seen)
                } else {
                    log::info!(
                        "class {}: {} recorded samples cannot fill a reused episode, resampling",
                        class,
                        seen.len()
                    );
                    fallbacks.push(class);
                    None
                }
            }
            _ => None,
        };
        match reuse {
            Some(seen) => {
                let picks: Vec<usize> = index::sample(rng, seen.len(), shape.k_train).iter().map(|i| seen[i]).collect();
                let rest: Vec<usize> =
                    ds.class_samples(class).iter().copied().filter(|i| !picks.contains(i)).collect();
                train.extend(picks.iter().map(|&index| Shot { index, label }));
                test.extend(index::sample(rng, rest.len(), shape.k_test).iter().map(|i| Shot { index: rest[i], label }));
            }
            None => fill_class(ds, class, label, &shape, rng, &mut train, &mut test)?,
        }
    }
    Ok(HardEpisode { episode: Episode { shape, classes: chosen, train, test }, provenance, fallbacks })
}
