//! The feature extractor and its forward pass, with optional scale/shift
//! modulation of every wrapped layer.

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{nn, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    #[default]
    LeakyRelu,
}

impl Activation {
    pub fn apply(self, x: &Var) -> Result<Var> {
        match self {
            Activation::Relu => nn::relu(x),
            Activation::LeakyRelu => nn::leaky_relu(x),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    /// Stride-1 convolution followed by the activation and an optional 2x2 max-pool.
    Conv { padding: usize, pool: bool },
    /// Fully connected layer followed by the activation.
    Linear,
}

/// One layer's weight `W` and bias `b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub kind: LayerKind,
    /// `[out, in]` or `[out, channels, k, k]`.
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Layer {
    /// Neurons (linear) or filters (conv).
    pub fn units(&self) -> usize {
        self.weight.shape()[0]
    }

    /// Scalars per neuron/filter, excluding the bias.
    pub fn fan_in(&self) -> usize {
        self.weight.shape()[1..].iter().product()
    }
}

/// Layer widths for a freshly initialised extractor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    /// Conv filters per layer (image inputs only).
    pub conv_filters: Vec<usize>,
    pub kernel: usize,
    pub padding: usize,
    /// Fully connected widths, applied after the conv stack (or directly to vectors).
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Hidden widths of the classifier; empty means one FC layer.
    pub classifier_hidden: Vec<usize>,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            conv_filters: vec![8, 16, 16],
            kernel: 3,
            padding: 1,
            hidden: vec![64, 64],
            activation: Activation::LeakyRelu,
            classifier_hidden: Vec::new(),
        }
    }
}

/// Per-layer graph variables for `W` and `b`.
#[derive(Clone, Debug)]
pub struct LayerVars {
    pub weight: Var,
    pub bias: Var,
}

/// Per-layer graph variables for the scale and shift vectors.
#[derive(Clone, Debug)]
pub struct SsVars {
    pub scale: Var,
    pub shift: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Extractor {
    layers: Vec<Layer>,
    activation: Activation,
    frozen: bool,
}

impl Extractor {
    pub fn new(layers: Vec<Layer>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("extractor needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            let rank_ok = match l.kind {
                LayerKind::Linear => l.weight.rank() == 2,
                LayerKind::Conv { .. } => l.weight.rank() == 4 && l.weight.shape()[2] == l.weight.shape()[3],
            };
            if !rank_ok || l.bias.shape() != [l.units()] {
                return Err(Error::Shape {
                    op: "extractor",
                    detail: format!("layer {}: weight {:?}, bias {:?}", i, l.weight.shape(), l.bias.shape()),
                });
            }
        }
        Ok(Self { layers, activation, frozen: false })
    }

    /// Random initialisation for inputs of `input_shape` (`[d]` or `[c, h, w]`).
    pub fn random<R: Rng + ?Sized>(arch: &ArchConfig, input_shape: &[usize], rng: &mut R) -> Result<Self> {
        let mut layers = Vec::new();
        let mut width = match input_shape {
            [d] => *d,
            [c, _, _] => {
                let mut ch = *c;
                for &f in &arch.conv_filters {
                    layers.push(Layer {
                        kind: LayerKind::Conv { padding: arch.padding, pool: true },
                        weight: he_uniform(&[f, ch, arch.kernel, arch.kernel], ch * arch.kernel * arch.kernel, rng),
                        bias: Tensor::zeros(&[f]),
                    });
                    ch = f;
                }
                ch
            }
            _ => return Err(Error::invalid(format!("unsupported input shape {:?}", input_shape))),
        };
        for &h in &arch.hidden {
            layers.push(Layer { kind: LayerKind::Linear, weight: he_uniform(&[h, width], width, rng), bias: Tensor::zeros(&[h]) });
            width = h;
        }
        Self::new(layers, arch.activation)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Irreversibly marks the weights read-only.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// An unfrozen copy of the weights, for modes that fine-tune them.
    pub fn thawed_copy(&self) -> Extractor {
        Extractor { layers: self.layers.clone(), activation: self.activation, frozen: false }
    }

    pub fn layer_mut(&mut self, i: usize) -> Result<&mut Layer> {
        if self.frozen {
            return Err(Error::Frozen(format!("layer {} cannot be modified", i)));
        }
        self.layers.get_mut(i).ok_or_else(|| Error::invalid(format!("no layer {}", i)))
    }

    /// Replaces every `W`, `b` with the given tensors (same shapes).
    pub fn set_weights(&mut self, weights: Vec<(Tensor, Tensor)>) -> Result<()> {
        if self.frozen {
            return Err(Error::Frozen("weights cannot be replaced".into()));
        }
        if weights.len() != self.layers.len() {
            return Err(Error::invalid(format!("{} weight pairs for {} layers", weights.len(), self.layers.len())));
        }
        for (i, (l, (w, b))) in self.layers.iter_mut().zip(weights).enumerate() {
            if w.shape() != l.weight.shape() || b.shape() != l.bias.shape() {
                return Err(Error::Shape { op: "set_weights", detail: format!("layer {}", i) });
            }
            l.weight = w;
            l.bias = b;
        }
        Ok(())
    }

    /// SHA-256 over every weight and bias bit pattern.
    pub fn weight_hash(&self) -> String {
        let mut h = Sha256::new();
        for l in &self.layers {
            for t in [&l.weight, &l.bias] {
                for &d in t.shape() {
                    h.update((d as u64).to_le_bytes());
                }
                for v in t.data() {
                    h.update(v.to_bits().to_le_bytes());
                }
            }
        }
        h.finalize().iter().map(|b| format!("{:02x}", b)).collect()
    }

    /// Output width of the final layer.
    pub fn feature_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::units)
    }

    /// Weights as graph constants.
    pub fn constants(&self, g: &Graph) -> Vec<LayerVars> {
        self.layers
            .iter()
            .map(|l| LayerVars { weight: g.constant(l.weight.clone()), bias: g.constant(l.bias.clone()) })
            .collect()
    }

    /// Weights as graph variables; layers with `trainable[i]` become leaves.
    pub fn vars(&self, g: &Graph, trainable: &[bool]) -> Vec<LayerVars> {
        self.layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                if trainable.get(i).copied().unwrap_or(false) {
                    LayerVars { weight: g.leaf(l.weight.clone()), bias: g.leaf(l.bias.clone()) }
                } else {
                    LayerVars { weight: g.constant(l.weight.clone()), bias: g.constant(l.bias.clone()) }
                }
            })
            .collect()
    }

    /// Plain forward pass (no modulation) on a batch.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let g = Graph::new();
        let vars = self.constants(&g);
        let out = forward_features(self, &g.constant(x.clone()), &vars, &[])?;
        Ok((*out.value()).clone())
    }
}

fn he_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("init shape")
}

/// Runs the extractor on `x` using the given weight variables.
///
/// For each layer `i` with `ss[i] = Some(..)` the layer computes
/// `(W ⊙ scale) * x + (b + shift)`, where `scale` and `shift` hold one
/// scalar per neuron/filter broadcast over that neuron's weights. Rank-4
/// activations are mean-pooled globally before the first linear layer and
/// at the end, so the output is always `[n, features]`.
pub fn forward_features(ex: &Extractor, x: &Var, weights: &[LayerVars], ss: &[Option<SsVars>]) -> Result<Var> {
    if weights.len() != ex.layers.len() {
        return Err(Error::invalid(format!("{} weight sets for {} layers", weights.len(), ex.layers.len())));
    }
    let mut h = x.clone();
    for (i, (layer, vars)) in ex.layers.iter().zip(weights).enumerate() {
        let (w, b) = match ss.get(i).and_then(Option::as_ref) {
            Some(s) => {
                if s.scale.shape() != [layer.units()] || s.shift.shape() != [layer.units()] {
                    return Err(Error::Shape {
                        op: "ss_forward",
                        detail: format!(
                            "layer {}: {} units but scale {:?}, shift {:?}",
                            i,
                            layer.units(),
                            s.scale.shape(),
                            s.shift.shape()
                        ),
                    });
                }
                let w_shape = vars.weight.shape();
                let scaled = vars.weight.mul(&nn::broadcast_along(&s.scale, &w_shape, 0)?)?;
                (scaled, vars.bias.add(&s.shift)?)
            }
            None => (vars.weight.clone(), vars.bias.clone()),
        };
        h = match layer.kind {
            LayerKind::Conv { padding, pool } => {
                let y = nn::add_channel_bias(&nn::conv2d(&h, &w, padding)?, &b)?;
                let y = ex.activation.apply(&y)?;
                if pool {
                    nn::max_pool2(&y)?
                } else {
                    y
                }
            }
            LayerKind::Linear => {
                if h.shape().len() == 4 {
                    h = nn::global_mean_pool(&h)?;
                }
                ex.activation.apply(&nn::linear(&h, &w, &b)?)?
            }
        };
    }
    if h.shape().len() == 4 {
        h = nn::global_mean_pool(&h)?;
    }
    Ok(h)
}
