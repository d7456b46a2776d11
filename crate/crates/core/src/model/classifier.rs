//! The fully connected base-learner mapping features to episode logits.

use rand::Rng;

use crate::autodiff::{nn, Graph, Var};
use crate::error::{Error, Result};
use crate::model::extractor::Activation;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    /// `(W [out, in], b [out])` per layer; hidden layers use the activation.
    pub layers: Vec<(Tensor, Tensor)>,
    pub activation: Activation,
}

impl Classifier {
    /// One FC layer, or several when `hidden` is non-empty. Weights are
    /// uniform in `±1/√fan_in`, biases zero.
    pub fn init<R: Rng + ?Sized>(feature_dim: usize, way: usize, hidden: &[usize], rng: &mut R) -> Result<Self> {
        if feature_dim == 0 || way == 0 || hidden.contains(&0) {
            return Err(Error::invalid(format!("classifier needs positive sizes (features {}, way {})", feature_dim, way)));
        }
        let mut layers = Vec::new();
        let mut width = feature_dim;
        for &out in hidden.iter().chain(std::iter::once(&way)) {
            let bound = 1.0 / (width as f64).sqrt();
            let w = (0..out * width).map(|_| rng.random_range(-bound..=bound)).collect();
            layers.push((Tensor::new(vec![out, width], w)?, Tensor::zeros(&[out])));
            width = out;
        }
        Ok(Self { layers, activation: Activation::default() })
    }

    /// Discards the current weights in favour of a fresh draw of the same shape.
    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let hidden: Vec<usize> = self.layers[..self.layers.len() - 1].iter().map(|(w, _)| w.shape()[0]).collect();
        let act = self.activation;
        *self = Self::init(self.feature_dim(), self.way(), &hidden, rng)?;
        self.activation = act;
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.layers[0].0.shape()[1]
    }

    pub fn way(&self) -> usize {
        self.layers.last().map_or(0, |(w, _)| w.shape()[0])
    }

    pub fn numel(&self) -> usize {
        self.layers.iter().map(|(w, b)| w.numel() + b.numel()).sum()
    }

    /// `[W0, b0, W1, b1, ..]`.
    pub fn tensors(&self) -> Vec<Tensor> {
        self.layers.iter().flat_map(|(w, b)| [w.clone(), b.clone()]).collect()
    }

    pub fn from_tensors(&self, tensors: Vec<Tensor>) -> Result<Self> {
        if tensors.len() != 2 * self.layers.len() {
            return Err(Error::invalid(format!("{} tensors for {} classifier layers", tensors.len(), self.layers.len())));
        }
        let mut it = tensors.into_iter();
        let mut layers = Vec::with_capacity(self.layers.len());
        for (w0, b0) in &self.layers {
            let (w, b) = (it.next().unwrap(), it.next().unwrap());
            if w.shape() != w0.shape() || b.shape() != b0.shape() {
                return Err(Error::Shape { op: "classifier", detail: format!("{:?} vs {:?}", w.shape(), w0.shape()) });
            }
            layers.push((w, b));
        }
        Ok(Self { layers, activation: self.activation })
    }

    pub fn vars(&self, g: &Graph, trainable: bool) -> Vec<Var> {
        self.tensors().into_iter().map(|t| if trainable { g.leaf(t) } else { g.constant(t) }).collect()
    }

    /// Predicted episode labels for a feature batch.
    pub fn predict(&self, features: &Tensor) -> Result<Vec<usize>> {
        let g = Graph::new();
        let logits = classifier_forward(&g.constant(features.clone()), &self.vars(&g, false), self.activation)?;
        Ok(logits.value().argmax_rows())
    }
}

/// Logits from features, with `params` laid out as in [`Classifier::tensors`].
pub fn classifier_forward(features: &Var, params: &[Var], activation: Activation) -> Result<Var> {
    if params.is_empty() || !params.len().is_multiple_of(2) {
        return Err(Error::invalid("classifier parameters come in (W, b) pairs"));
    }
    let n = params.len() / 2;
    let mut h = features.clone();
    for (i, pair) in params.chunks(2).enumerate() {
        h = nn::linear(&h, &pair[0], &pair[1])?;
        if i + 1 < n {
            h = activation.apply(&h)?;
        }
    }
    Ok(h)
}
