//! Class-level meta-train / meta-val / meta-test partitions.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::dataset::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    /// The id lists name classes.
    #[default]
    ByClass,
    /// The id lists name super-classes; a class follows its super-class.
    BySuperclass,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Partition {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    #[serde(default)]
    pub mode: SplitMode,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitSpec {
    /// Consecutive class ranges with the given sizes.
    pub fn by_class_counts(train: usize, val: usize, test: usize) -> Self {
        Self {
            mode: SplitMode::ByClass,
            train: (0..train).collect(),
            val: (train..train + val).collect(),
            test: (train + val..train + val + test).collect(),
        }
    }

    /// A quarter of the classes each for val and test, the rest for train.
    pub fn quarters(num_classes: usize) -> Self {
        let held = num_classes / 4;
        Self::by_class_counts(num_classes - 2 * held, held, held)
    }

    pub fn ids(&self, part: Partition) -> &[usize] {
        match part {
            Partition::Train => &self.train,
            Partition::Val => &self.val,
            Partition::Test => &self.test,
        }
    }

    /// Checks the lists are pairwise disjoint and cover the id space.
    pub fn validate(&self, ds: &Dataset) -> Result<()> {
        let space: BTreeSet<usize> = match self.mode {
            SplitMode::ByClass => (0..ds.num_classes()).collect(),
            SplitMode::BySuperclass => {
                let mut s = BTreeSet::new();
                for c in 0..ds.num_classes() {
                    match ds.superclass(c) {
                        Some(sc) => {
                            s.insert(sc);
                        }
                        None => {
                            return Err(Error::Data(format!(
                                "super-class split requested but class {} has no super-class",
                                c
                            )))
                        }
                    }
                }
                s
            }
        };
        let mut seen = BTreeSet::new();
        for part in [Partition::Train, Partition::Val, Partition::Test] {
            for &id in self.ids(part) {
                if !space.contains(&id) {
                    return Err(Error::Data(format!("split id {} ({:?}) does not exist", id, part)));
                }
                if !seen.insert(id) {
                    return Err(Error::Data(format!("split id {} appears in more than one list", id)));
                }
            }
        }
        if let Some(missing) = space.difference(&seen).next() {
            return Err(Error::Data(format!("split does not cover id {}", missing)));
        }
        Ok(())
    }

    /// Dataset class ids belonging to `part`, ascending.
    pub fn classes(&self, ds: &Dataset, part: Partition) -> Vec<usize> {
        let ids: BTreeSet<usize> = self.ids(part).iter().copied().collect();
        (0..ds.num_classes())
            .filter(|&c| match self.mode {
                SplitMode::ByClass => ids.contains(&c),
                SplitMode::BySuperclass => ds.superclass(c).is_some_and(|s| ids.contains(&s)),
            })
            .collect()
    }
}
