//! Supervised training of extractor and a many-way classifier on merged
//! meta-train classes, after which the extractor is frozen.

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{nn, Graph};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::lr::StepDecay;
use crate::metrics::MetricsLog;
use crate::model::{classifier_forward, forward_features, Classifier, Extractor};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub lr: StepDecay,
    pub batch_size: usize,
    pub iterations: usize,
    /// Fraction of each class held out to report generalisation.
    pub holdout_fraction: f64,
    /// Keep probability; only 1.0 (no dropout) is supported.
    pub dropout_keep: f64,
    /// Rescale each unit to unit RMS output after training (see [`normalize_units`]).
    pub normalize: bool,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            lr: StepDecay { init: 0.1, halve_every: 200, floor: 0.01 },
            batch_size: 32,
            iterations: 400,
            holdout_fraction: 0.0,
            dropout_keep: 1.0,
            normalize: true,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.lr.validate("pretrain.lr")?;
        if self.batch_size == 0 {
            return Err(Error::Config("pretrain.batch_size must be at least 1".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Config("pretrain.iterations must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::Config(format!("pretrain.holdout_fraction must be in [0, 1), got {}", self.holdout_fraction)));
        }
        if self.dropout_keep != 1.0 {
            return Err(Error::Config("pretrain.dropout_keep: dropout is not supported; leave it at 1.0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    /// Frozen; the many-way classifier is dropped.
    pub extractor: Extractor,
    pub curve: Vec<CurvePoint>,
    /// Accuracy of the final weights on every training sample.
    pub train_accuracy: f64,
    pub holdout_accuracy: Option<f64>,
}

/// Mean cross-entropy and accuracy of `ex` + `cls` on `indices`.
pub fn evaluate_batch(ds: &Dataset, label_of: &[usize], indices: &[usize], ex: &Extractor, cls: &Classifier) -> Result<(f64, f64)> {
    let g = Graph::new();
    let x = g.constant(ds.batch(indices)?);
    let labels: Vec<usize> = indices.iter().map(|&i| label_of[ds.sample(i).class]).collect();
    let logits = classifier_forward(&forward_features(ex, &x, &ex.constants(&g), &[])?, &cls.vars(&g, false), cls.activation)?;
    let loss = nn::softmax_cross_entropy(&logits, &labels)?.value().data()[0];
    let pred = logits.value().argmax_rows();
    let acc = pred.iter().zip(&labels).filter(|(p, l)| p == l).count() as f64 / labels.len().max(1) as f64;
    Ok((loss, acc))
}

/// SGD on `classes` (remapped to `0..classes.len()`), mini-batches drawn
/// without replacement per iteration.
pub fn pretrain<R: Rng + ?Sized>(
    ds: &Dataset,
    classes: &[usize],
    mut extractor: Extractor,
    big_classifier: Classifier,
    cfg: &PretrainConfig,
    rng: &mut R,
    metrics: &mut MetricsLog,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    if extractor.is_frozen() {
        return Err(Error::Frozen("pretraining needs an unfrozen extractor".into()));
    }
    if big_classifier.way() != classes.len() {
        return Err(Error::Shape {
            op: "pretrain",
            detail: format!("classifier has {} outputs for {} classes", big_classifier.way(), classes.len()),
        });
    }
    if big_classifier.feature_dim() != extractor.feature_dim() {
        return Err(Error::Shape {
            op: "pretrain",
            detail: format!("classifier expects {} features, extractor gives {}", big_classifier.feature_dim(), extractor.feature_dim()),
        });
    }
    let mut label_of = vec![usize::MAX; ds.num_classes()];
    for (l, &c) in classes.iter().enumerate() {
        if c >= ds.num_classes() || label_of[c] != usize::MAX {
            return Err(Error::invalid(format!("bad or repeated pretraining class {}", c)));
        }
        label_of[c] = l;
    }
    let (mut train, mut holdout) = (Vec::new(), Vec::new());
    for &c in classes {
        let mut idx = ds.class_samples(c).to_vec();
        idx.shuffle(rng);
        let keep = ((1.0 - cfg.holdout_fraction) * idx.len() as f64).ceil() as usize;
        holdout.extend(idx.split_off(keep.clamp(1, idx.len())));
        train.extend(idx);
    }
    train.sort_unstable();

    let mut cls = big_classifier;
    let n_layers = extractor.layers().len();
    let mut curve = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let batch: Vec<usize> =
            index::sample(rng, train.len(), cfg.batch_size.min(train.len())).into_iter().map(|i| train[i]).collect();
        let labels: Vec<usize> = batch.iter().map(|&i| label_of[ds.sample(i).class]).collect();
        let g = Graph::new();
        let x = g.constant(ds.batch(&batch)?);
        let ws = extractor.vars(&g, &vec![true; n_layers]);
        let theta = cls.vars(&g, true);
        let logits = classifier_forward(&forward_features(&extractor, &x, &ws, &[])?, &theta, cls.activation)?;
        let loss = nn::softmax_cross_entropy(&logits, &labels)?;
        let loss_value = loss.value().data()[0];
        if !loss_value.is_finite() {
            return Err(Error::NonFinite { stage: "pretrain loss", index: it });
        }
        let mut wrt: Vec<_> = ws.iter().flat_map(|l| [l.weight.clone(), l.bias.clone()]).collect();
        wrt.extend(theta.iter().cloned());
        let grads = g.backward(&loss, &wrt)?;
        let rate = cfg.lr.rate(it);
        let step = |p: &Tensor, gr: &Tensor| p.sgd_step(gr, rate);
        let new_w = extractor
            .layers()
            .iter()
            .zip(grads.chunks(2))
            .map(|(l, gr)| Ok((step(&l.weight, &gr[0])?, step(&l.bias, &gr[1])?)))
            .collect::<Result<Vec<_>>>()?;
        extractor.set_weights(new_w)?;
        let new_theta = cls.tensors().iter().zip(&grads[2 * n_layers..]).map(|(p, gr)| step(p, gr)).collect::<Result<_>>()?;
        cls = cls.from_tensors(new_theta)?;

        let pred = logits.value().argmax_rows();
        let accuracy = pred.iter().zip(&labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64;
        let point = CurvePoint { iteration: it, loss: loss_value, accuracy, lr: rate };
        metrics.record("pretrain", it, &point)?;
        curve.push(point);
    }

    let (_, train_accuracy) = evaluate_batch(ds, &label_of, &train, &extractor, &cls)?;
    let holdout_accuracy = if holdout.is_empty() {
        None
    } else {
        Some(evaluate_batch(ds, &label_of, &holdout, &extractor, &cls)?.1)
    };
    metrics.record(
        "pretrain-summary",
        cfg.iterations,
        serde_json::json!({"train_accuracy": train_accuracy, "holdout_accuracy": holdout_accuracy}),
    )?;
    if cfg.normalize {
        normalize_units(&mut extractor, &ds.batch(&train)?)?;
    }
    extractor.freeze();
    Ok(PretrainOutcome { extractor, curve, train_accuracy, holdout_accuracy })
}

/// Bakes a fixed positive per-unit scale into each layer so that every
/// unit's output on `x` has RMS 1, compensating in the next layer's inputs.
/// Layer outputs are positively homogeneous, so the only change to the
/// network function is a per-unit rescaling of the final features.
pub fn normalize_units(ex: &mut Extractor, x: &Tensor) -> Result<()> {
    let n = ex.layers().len();
    let mut layers = ex.layers().to_vec();
    for i in 0..n {
        let prefix = Extractor::new(layers[..=i].to_vec(), ex.activation())?;
        let out = prefix.forward(x)?;
        let (rows, units) = (out.shape()[0], out.shape()[1]);
        let rms: Vec<f64> = (0..units)
            .map(|k| {
                let ms = (0..rows).map(|r| out.row(r)[k].powi(2)).sum::<f64>() / rows.max(1) as f64;
                if ms.sqrt() > 1e-12 { ms.sqrt() } else { 1.0 }
            })
            .collect();
        let per_unit = layers[i].fan_in();
        for (k, &r) in rms.iter().enumerate() {
            layers[i].weight.data_mut()[k * per_unit..(k + 1) * per_unit].iter_mut().for_each(|w| *w /= r);
            layers[i].bias.data_mut()[k] /= r;
        }
        if i + 1 < n {
            let next = &mut layers[i + 1];
            let shape = next.weight.shape().to_vec();
            let inner: usize = shape[2..].iter().product();
            let fan = next.fan_in();
            if shape[1] != units {
                return Err(Error::Shape { op: "normalize_units", detail: format!("layer {} feeds {} inputs into {}", i, units, shape[1]) });
            }
            let w = next.weight.data_mut();
            for o in 0..shape[0] {
                for (k, &r) in rms.iter().enumerate() {
                    w[o * fan + k * inner..o * fan + (k + 1) * inner].iter_mut().for_each(|v| *v *= r);
                }
            }
        }
    }
    ex.set_weights(layers.into_iter().map(|l| (l.weight, l.bias)).collect())
}
