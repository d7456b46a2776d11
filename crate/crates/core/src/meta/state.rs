use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::meta::config::Mode;
use crate::model::{Classifier, Extractor, LayerVars, SsParams, SsVars};
use crate::tensor::Tensor;

/// The last phase that produced a state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Pretrain,
    Meta,
}

/// Frozen extractor, meta-learned parameters, and the classifier initialisation.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    /// Pretrained weights; never modified after pretraining.
    pub extractor: Extractor,
    /// Meta-learned copy of the extractor for the fine-tuning modes.
    pub tuned: Option<Extractor>,
    pub ss: SsParams,
    pub classifier: Classifier,
    pub phase: Phase,
    pub mode: Mode,
}

/// Graph variables for one task's forward passes.
pub struct StateVars {
    pub weights: Vec<LayerVars>,
    pub ss: Vec<Option<SsVars>>,
    pub theta: Vec<Var>,
    /// The leaves (in [`ModelState::outer_tensors`] order) when built trainable.
    pub outer: Vec<Var>,
}

impl ModelState {
    /// Fresh meta-learning state: identity modulation, thawed copy for
    /// fine-tuning modes, newly drawn classifier.
    pub fn new<R: Rng + ?Sized>(
        extractor: Extractor,
        mode: Mode,
        way: usize,
        classifier_hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        if !extractor.is_frozen() {
            return Err(Error::invalid("meta-learning needs a frozen extractor"));
        }
        let n = extractor.layers().len();
        let ss = SsParams::identity_on(&extractor, &mode.ss_layers(n));
        let tuned = mode.ft_layers(n).contains(&true).then(|| extractor.thawed_copy());
        let classifier = Classifier::init(extractor.feature_dim(), way, classifier_hidden, rng)?;
        Ok(Self { extractor, tuned, ss, classifier, phase: Phase::Pretrain, mode })
    }

    /// The weights the forward pass uses.
    pub fn active_extractor(&self) -> &Extractor {
        self.tuned.as_ref().unwrap_or(&self.extractor)
    }

    fn ft_mask(&self) -> Vec<bool> {
        let n = self.extractor.layers().len();
        if self.tuned.is_some() {
            self.mode.ft_layers(n)
        } else {
            vec![false; n]
        }
    }

    /// Meta-learned tensors: modulation pairs, then fine-tuned `(W, b)` pairs,
    /// then the classifier.
    pub fn outer_tensors(&self) -> Vec<Tensor> {
        let mut out = self.ss.tensors();
        let ex = self.active_extractor();
        for (l, on) in ex.layers().iter().zip(self.ft_mask()) {
            if on {
                out.push(l.weight.clone());
                out.push(l.bias.clone());
            }
        }
        out.extend(self.classifier.tensors());
        out
    }

    /// Inverse of [`ModelState::outer_tensors`].
    pub fn set_outer_tensors(&mut self, tensors: &[Tensor]) -> Result<()> {
        let n_ss = self.ss.tensors().len();
        let mask = self.ft_mask();
        let n_ft = 2 * mask.iter().filter(|&&b| b).count();
        let n_cls = 2 * self.classifier.layers.len();
        if tensors.len() != n_ss + n_ft + n_cls {
            return Err(Error::invalid(format!("{} meta tensors, expected {}", tensors.len(), n_ss + n_ft + n_cls)));
        }
        self.ss.set_tensors(&tensors[..n_ss])?;
        if let Some(tuned) = self.tuned.as_mut() {
            let mut it = tensors[n_ss..n_ss + n_ft].iter();
            let pairs = tuned
                .layers()
                .iter()
                .zip(&mask)
                .map(|(l, &on)| {
                    if on {
                        (it.next().unwrap().clone(), it.next().unwrap().clone())
                    } else {
                        (l.weight.clone(), l.bias.clone())
                    }
                })
                .collect();
            tuned.set_weights(pairs)?;
        }
        self.classifier = self.classifier.from_tensors(tensors[n_ss + n_ft..].to_vec())?;
        Ok(())
    }

    /// Records this state's parameters on `g`; with `trainable` the meta-learned
    /// tensors become leaves.
    pub fn vars(&self, g: &Graph, trainable: bool) -> StateVars {
        let ex = self.active_extractor();
        let mask = if trainable { self.ft_mask() } else { vec![false; ex.layers().len()] };
        let weights = ex.vars(g, &mask);
        let ss = self.ss.vars(g, trainable);
        // Always leaves: the inner loop differentiates with respect to them.
        let theta = self.classifier.vars(g, true);
        let mut outer = Vec::new();
        if trainable {
            for s in ss.iter().flatten() {
                outer.push(s.scale.clone());
                outer.push(s.shift.clone());
            }
            for (w, on) in weights.iter().zip(&mask) {
                if *on {
                    outer.push(w.weight.clone());
                    outer.push(w.bias.clone());
                }
            }
            outer.extend(theta.iter().cloned());
        }
        StateVars { weights, ss, theta, outer }
    }

    /// Meta-learned scalar count.
    pub fn meta_param_count(&self) -> usize {
        if !self.mode.meta_trains() {
            return 0;
        }
        self.outer_tensors().iter().map(Tensor::numel).sum()
    }
}
