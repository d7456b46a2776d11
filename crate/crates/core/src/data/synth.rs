//! Procedural datasets for desk-scale runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::dataset::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    /// Gaussian clouds around per-class mean vectors.
    Vector,
    /// Oriented bars on a square single-channel canvas.
    Image,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub classes: usize,
    pub per_class: usize,
    pub kind: SynthKind,
    /// Vector length (vector mode).
    pub dims: usize,
    /// Canvas side (image mode).
    pub image_size: usize,
    /// Standard deviation of the isotropic noise.
    pub noise: f64,
    /// Consecutive classes grouped per super-class; 0 leaves super-classes unset.
    pub classes_per_superclass: usize,
    /// Vector mode with super-classes: when set, a class mean is its
    /// super-class centre plus this multiple of a standard normal offset, so
    /// siblings are harder to tell apart than unrelated classes.
    pub sibling_offset: Option<f64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 20,
            per_class: 40,
            kind: SynthKind::Vector,
            dims: 16,
            image_size: 16,
            noise: 0.1,
            classes_per_superclass: 0,
            sibling_offset: None,
        }
    }
}

/// Generates a dataset; the same config and seed give a bit-identical result.
pub fn synth_generate(cfg: &SynthConfig, seed: u64) -> Result<Dataset> {
    if cfg.classes < 2 || cfg.per_class < 2 {
        return Err(Error::invalid("synthetic data needs at least 2 classes and 2 samples per class"));
    }
    if cfg.noise.is_nan() || cfg.noise < 0.0 {
        return Err(Error::invalid("noise must be non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let templates: Vec<Tensor> = match cfg.kind {
        SynthKind::Vector => {
            if cfg.dims == 0 {
                return Err(Error::invalid("dims must be positive"));
            }
            let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..cfg.dims).map(|_| StandardNormal.sample(rng)).collect() };
            match cfg.sibling_offset {
                None => (0..cfg.classes).map(|_| Tensor::from_vec(draw(&mut rng))).collect(),
                Some(r) => {
                    if cfg.classes_per_superclass == 0 || r.is_nan() || r < 0.0 {
                        return Err(Error::invalid("sibling_offset needs classes_per_superclass > 0 and a non-negative scale"));
                    }
                    let mut centre = Vec::new();
                    (0..cfg.classes)
                        .map(|c| {
                            if c % cfg.classes_per_superclass == 0 {
                                centre = draw(&mut rng);
                            }
                            let z = draw(&mut rng);
                            Tensor::from_vec(centre.iter().zip(z).map(|(m, z)| m + r * z).collect())
                        })
                        .collect()
                }
            }
        }
        SynthKind::Image => {
            if cfg.image_size < 4 {
                return Err(Error::invalid("image_size must be at least 4"));
            }
            (0..cfg.classes).map(|c| bar_template(c, cfg.classes, cfg.image_size, &mut rng)).collect()
        }
    };

    let mut samples = Vec::with_capacity(cfg.classes * cfg.per_class);
    for (class, template) in templates.iter().enumerate() {
        for _ in 0..cfg.per_class {
            let data = template
                .data()
                .iter()
                .map(|&m| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    m + cfg.noise * z
                })
                .collect();
            let features = Tensor::new(template.shape().to_vec(), data)?;
            samples.push(Sample { features, class });
        }
    }
    let superclass = if cfg.classes_per_superclass > 0 {
        (0..cfg.classes).map(|c| Some(c / cfg.classes_per_superclass)).collect()
    } else {
        Vec::new()
    };
    Dataset::new(samples, superclass)
}

/// A soft bar through the canvas at a class-specific angle and offset.
fn bar_template(class: usize, classes: usize, size: usize, rng: &mut impl Rng) -> Tensor {
    let angle = std::f64::consts::PI * class as f64 / classes as f64;
    let offset = rng.random_range(-0.2..0.2) * size as f64;
    let (nx, ny) = (-angle.sin(), angle.cos());
    let centre = (size as f64 - 1.0) / 2.0;
    let width = size as f64 / 12.0 + 0.5;
    let mut data = Vec::with_capacity(size * size);
    for i in 0..size {
        for j in 0..size {
            let (x, y) = (j as f64 - centre, i as f64 - centre);
            let dist = x * nx + y * ny - offset;
            data.push((-dist * dist / (2.0 * width * width)).exp());
        }
    }
    Tensor::new(vec![1, size, size], data).expect("template shape")
}
