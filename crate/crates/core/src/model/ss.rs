//! Scaling and shifting parameters for a frozen extractor.

use serde::Serialize;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::model::extractor::{forward_features, Extractor, SsVars};
use crate::tensor::Tensor;

/// One scale and one shift per neuron/filter of a wrapped layer.
#[derive(Clone, Debug, PartialEq)]
pub struct SsLayer {
    pub scale: Tensor,
    pub shift: Tensor,
}

/// Per extractor layer: `Some` when that layer is wrapped.
#[derive(Clone, Debug, PartialEq)]
pub struct SsParams {
    pub layers: Vec<Option<SsLayer>>,
}

impl SsParams {
    /// Scales of one, shifts of zero on every layer.
    pub fn identity(ex: &Extractor) -> Self {
        Self::identity_on(ex, &vec![true; ex.layers().len()])
    }

    /// Identity modulation on the layers flagged in `wrap`.
    pub fn identity_on(ex: &Extractor, wrap: &[bool]) -> Self {
        let layers = ex
            .layers()
            .iter()
            .enumerate()
            .map(|(i, l)| {
                wrap.get(i).copied().unwrap_or(false).then(|| SsLayer {
                    scale: Tensor::full(&[l.units()], 1.0),
                    shift: Tensor::zeros(&[l.units()]),
                })
            })
            .collect();
        Self { layers }
    }

    /// No layer wrapped.
    pub fn none(ex: &Extractor) -> Self {
        Self { layers: vec![None; ex.layers().len()] }
    }

    pub fn wrapped(&self) -> impl Iterator<Item = (usize, &SsLayer)> {
        self.layers.iter().enumerate().filter_map(|(i, l)| l.as_ref().map(|l| (i, l)))
    }

    pub fn count(&self) -> usize {
        self.wrapped().map(|(_, l)| l.scale.numel() + l.shift.numel()).sum()
    }

    /// Checks one pair per unit on each wrapped layer.
    pub fn check(&self, ex: &Extractor) -> Result<()> {
        if self.layers.len() != ex.layers().len() {
            return Err(Error::Shape {
                op: "ss_forward",
                detail: format!("{} modulation entries for {} layers", self.layers.len(), ex.layers().len()),
            });
        }
        for (i, s) in self.wrapped() {
            let units = ex.layers()[i].units();
            if s.scale.shape() != [units] || s.shift.shape() != [units] {
                return Err(Error::Shape {
                    op: "ss_forward",
                    detail: format!(
                        "layer {}: {} units but scale {:?}, shift {:?}",
                        i,
                        units,
                        s.scale.shape(),
                        s.shift.shape()
                    ),
                });
            }
        }
        Ok(())
    }

    /// Graph variables for the wrapped layers; leaves when `trainable`.
    pub fn vars(&self, g: &Graph, trainable: bool) -> Vec<Option<SsVars>> {
        let mk = |t: &Tensor| if trainable { g.leaf(t.clone()) } else { g.constant(t.clone()) };
        self.layers
            .iter()
            .map(|l| l.as_ref().map(|l| SsVars { scale: mk(&l.scale), shift: mk(&l.shift) }))
            .collect()
    }

    /// Flattened `[scale, shift]` tensors of the wrapped layers, in layer order.
    pub fn tensors(&self) -> Vec<Tensor> {
        self.wrapped().flat_map(|(_, l)| [l.scale.clone(), l.shift.clone()]).collect()
    }

    /// Inverse of [`SsParams::tensors`].
    pub fn set_tensors(&mut self, tensors: &[Tensor]) -> Result<()> {
        let mut it = tensors.iter();
        for l in self.layers.iter_mut().flatten() {
            let (Some(s), Some(b)) = (it.next(), it.next()) else {
                return Err(Error::invalid("too few modulation tensors"));
            };
            if s.shape() != l.scale.shape() || b.shape() != l.shift.shape() {
                return Err(Error::Shape { op: "ss_update", detail: format!("{:?} vs {:?}", s.shape(), l.scale.shape()) });
            }
            l.scale = s.clone();
            l.shift = b.clone();
        }
        if it.next().is_some() {
            return Err(Error::invalid("too many modulation tensors"));
        }
        Ok(())
    }
}

/// Modulated forward pass on a frozen extractor.
pub fn ss_forward(x: &Tensor, ex: &Extractor, ss: &SsParams) -> Result<Tensor> {
    if !ex.is_frozen() {
        return Err(Error::invalid("scale/shift forward expects a frozen extractor"));
    }
    ss.check(ex)?;
    let g = Graph::new();
    let weights = ex.constants(&g);
    let out = forward_features(ex, &g.constant(x.clone()), &weights, &ss.vars(&g, false))?;
    Ok((*out.value()).clone())
}

/// Graph form of [`ss_forward`] with the modulation supplied as variables.
pub fn ss_forward_vars(x: &Var, ex: &Extractor, ss: &[Option<SsVars>]) -> Result<Var> {
    let weights = ex.constants(x.graph());
    forward_features(ex, x, &weights, ss)
}

/// Trainable-parameter counts of one layer under full fine-tuning and under
/// scale/shift.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct LayerCount {
    /// Every weight and bias scalar.
    pub ft: usize,
    /// Two per neuron/filter.
    pub ss: usize,
}

impl LayerCount {
    /// `ss / ft` in lowest terms.
    pub fn ratio(&self) -> (usize, usize) {
        fn gcd(a: usize, b: usize) -> usize {
            if b == 0 {
                a
            } else {
                gcd(b, a % b)
            }
        }
        let d = gcd(self.ss, self.ft).max(1);
        (self.ss / d, self.ft / d)
    }

    pub fn ratio_f64(&self) -> f64 {
        self.ss as f64 / self.ft as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CountMode {
    Ss,
    Ft,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ParamCounts {
    pub layers: Vec<LayerCount>,
}

impl ParamCounts {
    pub fn total(&self, mode: CountMode) -> usize {
        self.layers.iter().map(|c| if mode == CountMode::Ss { c.ss } else { c.ft }).sum()
    }
}

pub fn count_params(ex: &Extractor) -> ParamCounts {
    let layers = ex
        .layers()
        .iter()
        .map(|l| LayerCount { ft: l.weight.numel() + l.bias.numel(), ss: 2 * l.units() })
        .collect();
    ParamCounts { layers }
}

/// Fixed-bin histogram; values outside `[lo, hi)` land in the edge bins.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(values: &[f64], lo: f64, hi: f64, bins: usize) -> Self {
        let bins = bins.max(1);
        let mut counts = vec![0; bins];
        let width = (hi - lo) / bins as f64;
        for &v in values {
            let b = ((v - lo) / width).floor();
            let b = if b.is_nan() || b < 0.0 { 0 } else { (b as usize).min(bins - 1) };
            counts[b] += 1;
        }
        Self { lo, hi, counts }
    }

    pub fn bin_centres(&self) -> Vec<f64> {
        let w = (self.hi - self.lo) / self.counts.len() as f64;
        (0..self.counts.len()).map(|i| self.lo + (i as f64 + 0.5) * w).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupStats {
    pub mean: f64,
    /// Population variance.
    pub variance: f64,
    pub histogram: Histogram,
}

impl GroupStats {
    fn of(values: &[f64], lo: f64, hi: f64, bins: usize) -> Self {
        let n = values.len().max(1) as f64;
        let mean = values.iter().sum::<f64>() / n;
        let variance = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self { mean, variance, histogram: Histogram::new(values, lo, hi, bins) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SsStatistics {
    pub scale: GroupStats,
    pub shift: GroupStats,
}

pub const HIST_BINS: usize = 20;

/// Mean, variance, and histogram of all scales and all shifts.
pub fn ss_statistics(ss: &SsParams) -> SsStatistics {
    let scales: Vec<f64> = ss.wrapped().flat_map(|(_, l)| l.scale.data().to_vec()).collect();
    let shifts: Vec<f64> = ss.wrapped().flat_map(|(_, l)| l.shift.data().to_vec()).collect();
    SsStatistics {
        scale: GroupStats::of(&scales, 0.0, 2.0, HIST_BINS),
        shift: GroupStats::of(&shifts, -1.0, 1.0, HIST_BINS),
    }
}

impl SsStatistics {
    /// Whitespace-separated columns `bin_centre count` per group.
    pub fn to_plot_text(&self) -> String {
        let mut out = String::new();
        for (name, g) in [("scale", &self.scale), ("shift", &self.shift)] {
            out.push_str(&format!("# {} mean={} variance={}\n# bin_centre count\n", name, g.mean, g.variance));
            for (c, n) in g.histogram.bin_centres().iter().zip(&g.histogram.counts) {
                out.push_str(&format!("{} {}\n", c, n));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::extractor::{Activation, Layer, LayerKind};

    fn one_unit(w: f64, b: f64) -> Extractor {
        let mut ex = Extractor::new(
            vec![Layer { kind: LayerKind::Linear, weight: Tensor::new(vec![1, 1], vec![w]).unwrap(), bias: Tensor::from_vec(vec![b]) }],
            Activation::LeakyRelu,
        )
        .unwrap();
        ex.freeze();
        ex
    }

    #[test]
    fn hand_evaluated_modulation() {
        // (3 * 2) * 1 + (1 + 0.5) = 7.5, positive so the activation passes it through.
        let ex = one_unit(3.0, 1.0);
        let ss = SsParams { layers: vec![Some(SsLayer { scale: Tensor::from_vec(vec![2.0]), shift: Tensor::from_vec(vec![0.5]) })] };
        let out = ss_forward(&Tensor::new(vec![1, 1], vec![1.0]).unwrap(), &ex, &ss).unwrap();
        assert_eq!(out.data(), &[7.5]);
    }

    #[test]
    fn shape_mismatch_names_layer() {
        let ex = one_unit(1.0, 0.0);
        let ss = SsParams { layers: vec![Some(SsLayer { scale: Tensor::from_vec(vec![1.0, 1.0]), shift: Tensor::zeros(&[2]) })] };
        let err = ss_forward(&Tensor::zeros(&[1, 1]), &ex, &ss).unwrap_err().to_string();
        assert!(err.contains("layer 0"), "{err}");
    }

    #[test]
    fn unfrozen_extractor_rejected() {
        let ex = one_unit(1.0, 0.0).thawed_copy();
        assert!(ss_forward(&Tensor::zeros(&[1, 1]), &ex, &SsParams::identity(&ex)).is_err());
    }

    #[test]
    fn counts_and_ratios() {
        let conv = |o: usize, c: usize, k: usize| Layer {
            kind: LayerKind::Conv { padding: 0, pool: false },
            weight: Tensor::zeros(&[o, c, k, k]),
            bias: Tensor::zeros(&[o]),
        };
        let ex = Extractor::new(
            vec![
                conv(32, 1, 3),
                conv(4, 1, 7),
                Layer { kind: LayerKind::Linear, weight: Tensor::zeros(&[16, 16]), bias: Tensor::zeros(&[16]) },
            ],
            Activation::Relu,
        )
        .unwrap();
        let c = count_params(&ex);
        assert_eq!(c.layers[0], LayerCount { ft: 320, ss: 64 });
        assert_eq!(c.layers[0].ratio(), (1, 5));
        assert_eq!(c.layers[1].ratio(), (1, 25)); // 2/50
        assert_eq!(c.layers[2], LayerCount { ft: 272, ss: 32 });
        assert_eq!(c.total(CountMode::Ss), 64 + 8 + 32);
    }

    #[test]
    fn statistics_of_two_scales() {
        let ex = one_unit(1.0, 0.0);
        let mut ss = SsParams::identity(&ex);
        assert_eq!(ss_statistics(&ss).scale.mean, 1.0);
        ss.layers[0] = Some(SsLayer { scale: Tensor::from_vec(vec![0.5, 1.5]), shift: Tensor::zeros(&[2]) });
        let st = ss_statistics(&ss);
        assert_eq!(st.scale.mean, 1.0);
        assert_eq!(st.scale.variance, 0.25);
        assert_eq!(st.scale.histogram.counts.iter().sum::<usize>(), 2);
    }

    #[test]
    fn histogram_clamps_outliers() {
        let h = Histogram::new(&[-5.0, 0.0, 0.99, 1.0, 7.0], 0.0, 1.0, 4);
        assert_eq!(h.counts, vec![2, 0, 0, 3]);
    }
}
