//! Base-learning and meta-updates for a single task.

use serde::Serialize;

use crate::autodiff::{nn, unroll, Graph, Var};
use crate::data::{Dataset, Episode, FailureRecord};
use crate::error::{Error, Result};
use crate::meta::config::MetaConfig;
use crate::meta::state::ModelState;
use crate::model::{classifier_forward, forward_features, Classifier, Extractor, LayerVars};
use crate::tensor::Tensor;

/// Task-local parameters after base-learning.
#[derive(Clone, Debug, PartialEq)]
pub struct Adapted {
    /// Fingerprint of the episode that produced these parameters.
    pub episode: u64,
    pub theta: Classifier,
    /// Adapted extractor, for modes that fine-tune it per task.
    pub extractor: Option<Extractor>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassAccuracy {
    pub class: usize,
    pub accuracy: f64,
}

/// What one task reports back to the scheduler.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TaskOutcome {
    pub episode: u64,
    /// Cross-entropy of the adapted classifier on the test split.
    pub loss: f64,
    pub accuracy: f64,
    pub per_class: Vec<ClassAccuracy>,
    /// Lowest-accuracy class and every sample it used in the episode.
    pub hardest: FailureRecord,
    pub perfect: bool,
}

/// Outcome plus, when requested, the meta-gradient in
/// [`ModelState::outer_tensors`] order.
#[derive(Clone, Debug)]
pub struct TaskResult {
    pub outcome: TaskOutcome,
    pub adapted: Adapted,
    pub grads: Option<Vec<Tensor>>,
}

fn check_task(ep: &Episode, state: &ModelState) -> Result<()> {
    if !state.extractor.is_frozen() {
        return Err(Error::invalid("the pretrained extractor must be frozen"));
    }
    if ep.way() != state.classifier.way() {
        return Err(Error::Shape {
            op: "base_learn",
            detail: format!("classifier has {} outputs but the episode is {}-way", state.classifier.way(), ep.way()),
        });
    }
    Ok(())
}

fn flat_weights(ws: &[LayerVars]) -> Vec<Var> {
    ws.iter().flat_map(|l| [l.weight.clone(), l.bias.clone()]).collect()
}

fn pair_weights(flat: &[Var]) -> Vec<LayerVars> {
    flat.chunks(2).map(|c| LayerVars { weight: c[0].clone(), bias: c[1].clone() }).collect()
}

/// Builds the task record: inner loop on the train split, loss of the adapted
/// parameters on the test split, and optionally its gradient.
pub fn evaluate_task(ds: &Dataset, ep: &Episode, state: &ModelState, cfg: &MetaConfig, want_grad: bool) -> Result<TaskResult> {
    check_task(ep, state)?;
    let want_grad = want_grad && state.mode.meta_trains();
    let g = Graph::new();
    let x_tr = g.constant(ep.train_inputs(ds)?);
    let x_te = g.constant(ep.test_inputs(ds)?);
    let (y_tr, y_te) = (ep.train_labels(), ep.test_labels());
    let mut sv = state.vars(&g, want_grad);
    let ex = state.active_extractor();
    let act = state.classifier.activation;
    let mut ucfg = cfg.unroll();
    if !want_grad {
        ucfg.first_order = true;
    }

    let n_theta = sv.theta.len();
    let (theta_p, weights_p) = if state.mode.adapts_extractor() {
        sv.weights = ex.vars(&g, &vec![true; ex.layers().len()]);
        let mut init = flat_weights(&sv.weights);
        init.extend(sv.theta.iter().cloned());
        let n_w = init.len() - n_theta;
        let out = unroll(&g, &init, &ucfg, |p| {
            let f = forward_features(ex, &x_tr, &pair_weights(&p[..n_w]), &sv.ss)?;
            nn::softmax_cross_entropy(&classifier_forward(&f, &p[n_w..], act)?, &y_tr)
        })?;
        (out[n_w..].to_vec(), Some(pair_weights(&out[..n_w])))
    } else {
        let f_tr = forward_features(ex, &x_tr, &sv.weights, &sv.ss)?;
        let out = unroll(&g, &sv.theta, &ucfg, |p| nn::softmax_cross_entropy(&classifier_forward(&f_tr, p, act)?, &y_tr))?;
        (out, None)
    };

    let f_te = forward_features(ex, &x_te, weights_p.as_deref().unwrap_or(&sv.weights), &sv.ss)?;
    let logits = classifier_forward(&f_te, &theta_p, act)?;
    let loss = nn::softmax_cross_entropy(&logits, &y_te)?;
    let loss_value = loss.value().data()[0];
    if !loss_value.is_finite() {
        return Err(Error::NonFinite { stage: "task test loss", index: cfg.inner_epochs });
    }
    let grads = if want_grad {
        let grads = g.backward(&loss, &sv.outer)?;
        if let Some(i) = grads.iter().position(|t| !t.is_finite()) {
            return Err(Error::NonFinite { stage: "meta gradient", index: i });
        }
        Some(grads)
    } else {
        None
    };

    let theta = state.classifier.from_tensors(theta_p.iter().map(|v| (*v.value()).clone()).collect())?;
    let extractor = match weights_p {
        Some(ws) => {
            let mut e = ex.thawed_copy();
            e.set_weights(ws.iter().map(|l| ((*l.weight.value()).clone(), (*l.bias.value()).clone())).collect())?;
            Some(e)
        }
        None => None,
    };
    let predictions = logits.value().argmax_rows();
    let outcome = outcome_from(ep, &predictions, loss_value)?;
    Ok(TaskResult { outcome, adapted: Adapted { episode: ep.fingerprint(), theta, extractor }, grads })
}

/// Per-class accuracies on the test split and the hardest class.
pub fn outcome_from(ep: &Episode, predictions: &[usize], loss: f64) -> Result<TaskOutcome> {
    if predictions.len() != ep.test.len() {
        return Err(Error::invalid(format!("{} predictions for {} test samples", predictions.len(), ep.test.len())));
    }
    let way = ep.way();
    let mut correct = vec![0usize; way];
    let mut total = vec![0usize; way];
    for (s, &p) in ep.test.iter().zip(predictions) {
        total[s.label] += 1;
        if p == s.label {
            correct[s.label] += 1;
        }
    }
    let per_class: Vec<ClassAccuracy> = (0..way)
        .map(|l| ClassAccuracy { class: ep.classes[l], accuracy: correct[l] as f64 / total[l].max(1) as f64 })
        .collect();
    let label = hardest_label(ep, &per_class);
    let accuracy = correct.iter().sum::<usize>() as f64 / ep.test.len().max(1) as f64;
    Ok(TaskOutcome {
        episode: ep.fingerprint(),
        loss,
        accuracy,
        perfect: per_class.iter().all(|c| c.accuracy == 1.0),
        hardest: FailureRecord { class: ep.classes[label], samples: ep.samples_of(label) },
        per_class,
    })
}

fn hardest_label(ep: &Episode, per_class: &[ClassAccuracy]) -> usize {
    (0..per_class.len())
        .min_by(|&a, &b| {
            per_class[a]
                .accuracy
                .total_cmp(&per_class[b].accuracy)
                .then(ep.classes[a].cmp(&ep.classes[b]))
        })
        .unwrap_or(0)
}

/// Lowest accuracy wins; ties go to the lowest class id.
pub fn hardest_class(per_class: &[ClassAccuracy]) -> Option<usize> {
    per_class
        .iter()
        .min_by(|a, b| a.accuracy.total_cmp(&b.accuracy).then(a.class.cmp(&b.class)))
        .map(|c| c.class)
}

/// `θ'` after `inner_epochs` full-batch gradient steps on the train split.
/// Nothing in `state` changes.
pub fn base_learn(ds: &Dataset, ep: &Episode, state: &ModelState, cfg: &MetaConfig) -> Result<Adapted> {
    Ok(evaluate_task(ds, ep, state, cfg, false)?.adapted)
}

/// One meta step against `ep`'s test split. `adapted` must come from
/// [`base_learn`] on the same episode and state; the inner loop is replayed
/// on the record and must reproduce it exactly. Returns the pre-step test loss.
pub fn meta_update(
    ds: &Dataset,
    ep: &Episode,
    state: &mut ModelState,
    adapted: &Adapted,
    cfg: &MetaConfig,
    rate: f64,
) -> Result<f64> {
    if adapted.episode != ep.fingerprint() {
        return Err(Error::invalid("adapted parameters belong to a different episode"));
    }
    let r = evaluate_task(ds, ep, state, cfg, true)?;
    let replay_matches =
        r.adapted.theta.tensors().iter().zip(adapted.theta.tensors()).all(|(a, b)| a.bit_eq(&b));
    if !replay_matches {
        return Err(Error::invalid("adapted parameters do not match a replay of base-learning on this state"));
    }
    if let Some(grads) = r.grads {
        apply_meta_step(state, &grads, rate)?;
    }
    Ok(r.outcome.loss)
}

/// `outer <- outer - rate * grads`.
pub fn apply_meta_step(state: &mut ModelState, grads: &[Tensor], rate: f64) -> Result<()> {
    let current = state.outer_tensors();
    if current.len() != grads.len() {
        return Err(Error::invalid(format!("{} gradients for {} meta tensors", grads.len(), current.len())));
    }
    let next = current.iter().zip(grads).map(|(p, g)| p.sgd_step(g, rate)).collect::<Result<Vec<_>>>()?;
    state.set_outer_tensors(&next)
}

/// Test-split loss with the inner loop held at `adapted`; differentiating this
/// with respect to the meta parameters gives the first-order meta-gradient.
pub fn test_loss_at(ds: &Dataset, ep: &Episode, state: &ModelState, adapted: &Classifier) -> Result<f64> {
    check_task(ep, state)?;
    let g = Graph::new();
    let sv = state.vars(&g, false);
    let f = forward_features(state.active_extractor(), &g.constant(ep.test_inputs(ds)?), &sv.weights, &sv.ss)?;
    let logits = classifier_forward(&f, &adapted.vars(&g, false), adapted.activation)?;
    Ok(nn::softmax_cross_entropy(&logits, &ep.test_labels())?.value().data()[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ep(classes: Vec<usize>) -> Episode {
        use crate::data::{EpisodeShape, Shot};
        let way = classes.len();
        let shape = EpisodeShape { way, k_train: 1, k_test: 5 };
        let train = (0..way).map(|l| Shot { index: 100 + l, label: l }).collect();
        let test = (0..way).flat_map(|l| (0..5).map(move |k| Shot { index: l * 5 + k, label: l })).collect();
        Episode { shape, classes, train, test }
    }

    fn preds_with(ep: &Episode, correct_per_label: &[usize]) -> Vec<usize> {
        let way = ep.way();
        let mut seen = vec![0; way];
        ep.test
            .iter()
            .map(|s| {
                seen[s.label] += 1;
                if seen[s.label] <= correct_per_label[s.label] {
                    s.label
                } else {
                    (s.label + 1) % way
                }
            })
            .collect()
    }

    #[test]
    fn hardest_is_lowest_accuracy() {
        let e = ep(vec![3, 7, 1]);
        let o = outcome_from(&e, &preds_with(&e, &[4, 1, 3]), 0.0).unwrap();
        assert_eq!(o.per_class[1].accuracy, 0.2);
        assert_eq!(o.hardest.class, 7);
        assert_eq!(o.hardest.samples, e.samples_of(1));
        assert!(!o.perfect);
    }

    #[test]
    fn ties_go_to_lowest_class_id() {
        let e = ep(vec![2, 1, 3]);
        let o = outcome_from(&e, &preds_with(&e, &[2, 2, 5]), 0.0).unwrap();
        assert_eq!(o.hardest.class, 1);
        assert_eq!(hardest_class(&o.per_class), Some(1));
    }

    #[test]
    fn perfect_episode_still_names_a_class() {
        let e = ep(vec![4, 0, 9]);
        let o = outcome_from(&e, &preds_with(&e, &[5, 5, 5]), 0.0).unwrap();
        assert!(o.perfect);
        assert_eq!(o.hardest.class, 0);
        assert_eq!(o.accuracy, 1.0);
    }
}
