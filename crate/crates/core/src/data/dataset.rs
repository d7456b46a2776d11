use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One labelled example.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub features: Tensor,
    pub class: usize,
}

/// Labelled samples with dense class ids `0..C`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    class_index: Vec<Vec<usize>>,
    superclass: Vec<Option<usize>>,
    sample_shape: Vec<usize>,
}

impl Dataset {
    /// Builds the class index. `superclass`, when non-empty, gives one entry per class.
    pub fn new(samples: Vec<Sample>, superclass: Vec<Option<usize>>) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(Error::Data("no classes found".into()));
        };
        let sample_shape = first.features.shape().to_vec();
        let num_classes = samples.iter().map(|s| s.class).max().unwrap_or(0) + 1;
        let mut class_index = vec![Vec::new(); num_classes];
        for (i, s) in samples.iter().enumerate() {
            if s.features.shape() != sample_shape.as_slice() {
                return Err(Error::Data(format!(
                    "sample {} of class {} has shape {:?}, expected {:?}",
                    i,
                    s.class,
                    s.features.shape(),
                    sample_shape
                )));
            }
            class_index[s.class].push(i);
        }
        if let Some(empty) = class_index.iter().position(Vec::is_empty) {
            return Err(Error::Data(format!("class ids must be dense: class {} has no samples", empty)));
        }
        let superclass = if superclass.is_empty() { vec![None; num_classes] } else { superclass };
        if superclass.len() != num_classes {
            return Err(Error::Data(format!(
                "{} super-class entries for {} classes",
                superclass.len(),
                num_classes
            )));
        }
        Ok(Self { samples, class_index, superclass, sample_shape })
    }

    pub fn num_classes(&self) -> usize {
        self.class_index.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn sample(&self, index: usize) -> &Sample {
        &self.samples[index]
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.sample_shape
    }

    /// Sample indices of `class`, in load order.
    pub fn class_samples(&self, class: usize) -> &[usize] {
        &self.class_index[class]
    }

    pub fn superclass(&self, class: usize) -> Option<usize> {
        self.superclass[class]
    }

    pub fn superclasses(&self) -> &[Option<usize>] {
        &self.superclass
    }

    /// Fails naming the first class with fewer than `min` samples.
    pub fn require_per_class(&self, min: usize) -> Result<()> {
        for (c, idx) in self.class_index.iter().enumerate() {
            if idx.len() < min {
                return Err(Error::Data(format!(
                    "class {} has {} samples, need at least {}",
                    c,
                    idx.len(),
                    min
                )));
            }
        }
        Ok(())
    }

    /// Stacks the given samples into `[n, ...sample_shape]`.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor> {
        let items: Vec<&Tensor> = indices.iter().map(|&i| &self.samples[i].features).collect();
        Tensor::stack(&items)
    }

    /// Keeps only `classes`, relabelled densely in the given order.
    pub fn subset(&self, classes: &[usize]) -> Result<Dataset> {
        let mut samples = Vec::new();
        let mut superclass = Vec::with_capacity(classes.len());
        for (new_id, &c) in classes.iter().enumerate() {
            if c >= self.num_classes() {
                return Err(Error::Data(format!("class {} out of range {}", c, self.num_classes())));
            }
            superclass.push(self.superclass[c]);
            for &i in &self.class_index[c] {
                samples.push(Sample { features: self.samples[i].features.clone(), class: new_id });
            }
        }
        Dataset::new(samples, superclass)
    }
}
