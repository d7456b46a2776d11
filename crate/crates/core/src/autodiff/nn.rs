//! Network primitives built from the differentiable core ops.
//!
//! Every function here is a composition of [`Var`] methods, so first and
//! second derivatives come for free from the core vector-Jacobian products.
//! Activation masks and max-pool winners are recorded as constants: their
//! derivative is zero almost everywhere.

use std::rc::Rc;

use crate::autodiff::graph::{IndexMap, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Slope of the negative half of leaky-ReLU.
pub const LEAKY_SLOPE: f64 = 0.1;

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}

/// Repeats a scalar (one-element) variable to `shape`.
pub fn broadcast_scalar(s: &Var, shape: &[usize]) -> Result<Var> {
    if s.numel() != 1 {
        return Err(shape_err("broadcast_scalar", format!("expected one element, got {:?}", s.shape())));
    }
    let n: usize = shape.iter().product();
    s.expand_mid([1, n, 1])?.reshape(shape)
}

/// Adds a constant to every element.
pub fn add_scalar(x: &Var, k: f64) -> Result<Var> {
    let c = x.graph().constant(Tensor::full(&x.shape(), k));
    x.add(&c)
}

/// Repeats a per-channel vector `v` (length `shape[axis]`) across all other axes.
pub fn broadcast_along(v: &Var, shape: &[usize], axis: usize) -> Result<Var> {
    let c = *shape
        .get(axis)
        .ok_or_else(|| shape_err("broadcast_along", format!("axis {} of {:?}", axis, shape)))?;
    if v.numel() != c {
        return Err(shape_err("broadcast_along", format!("{} values for axis of size {} in {:?}", v.numel(), c, shape)));
    }
    let pre: usize = shape[..axis].iter().product();
    let post: usize = shape[axis + 1..].iter().product();
    v.expand_mid([c, post, 1])?.expand_mid([1, pre, c * post])?.reshape(shape)
}

/// Sums `x` over every axis except `axis`.
pub fn sum_to_axis(x: &Var, axis: usize) -> Result<Var> {
    let shape = x.shape();
    let c = *shape
        .get(axis)
        .ok_or_else(|| shape_err("sum_to_axis", format!("axis {} of {:?}", axis, shape)))?;
    let pre: usize = shape[..axis].iter().product();
    let post: usize = shape[axis + 1..].iter().product();
    x.sum_mid([1, pre, c * post])?.sum_mid([c, post, 1])?.reshape(&[c])
}

/// Sum of all elements, as a one-element tensor.
pub fn sum(x: &Var) -> Result<Var> {
    x.sum_mid([1, x.numel(), 1])?.reshape(&[1])
}

pub fn mean(x: &Var) -> Result<Var> {
    let n = x.numel();
    Ok(sum(x)?.scale(1.0 / n as f64))
}

fn masked(x: &Var, negative_slope: f64) -> Result<Var> {
    let v = x.value();
    let mask = v.map(|t| if t > 0.0 { 1.0 } else { negative_slope });
    x.mul(&x.graph().constant(mask))
}

pub fn relu(x: &Var) -> Result<Var> {
    masked(x, 0.0)
}

pub fn leaky_relu(x: &Var) -> Result<Var> {
    masked(x, LEAKY_SLOPE)
}

/// `x [n, in] @ w^T [in, out] + b [out]`.
pub fn linear(x: &Var, w: &Var, b: &Var) -> Result<Var> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || b.shape() != [ws[0]] {
        return Err(shape_err(
            "linear",
            format!("input {:?}, weight {:?}, bias {:?}", xs, ws, b.shape()),
        ));
    }
    let y = x.matmul(&w.transpose()?)?;
    y.add(&broadcast_along(b, &y.shape(), 1)?)
}

/// Stride-1 2-D cross-correlation with zero padding.
///
/// `x [n, c, h, w]`, `kernel [o, c, k, k]` → `[n, o, h + 2p - k + 1, w + 2p - k + 1]`.
pub fn conv2d(x: &Var, kernel: &Var, padding: usize) -> Result<Var> {
    let (xs, ks) = (x.shape(), kernel.shape());
    if xs.len() != 4 || ks.len() != 4 || xs[1] != ks[1] || ks[2] != ks[3] {
        return Err(shape_err("conv2d", format!("input {:?}, kernel {:?}", xs, ks)));
    }
    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let (o, k) = (ks[0], ks[2]);
    if h + 2 * padding < k || w + 2 * padding < k {
        return Err(shape_err(
            "conv2d",
            format!("kernel {}x{} larger than padded input {}x{}", k, k, h + 2 * padding, w + 2 * padding),
        ));
    }
    let (oh, ow) = (h + 2 * padding - k + 1, w + 2 * padding - k + 1);
    let patch = c * k * k;

    // im2col: rows are (n, i, j), columns are (c, u, v).
    let mut cols = Vec::with_capacity(n * oh * ow * patch);
    for b in 0..n {
        for i in 0..oh {
            for j in 0..ow {
                for ch in 0..c {
                    for u in 0..k {
                        for v in 0..k {
                            let (y, xx) = ((i + u) as isize - padding as isize, (j + v) as isize - padding as isize);
                            cols.push(if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < w {
                                Some(((b * c + ch) * h + y as usize) * w + xx as usize)
                            } else {
                                None
                            });
                        }
                    }
                }
            }
        }
    }
    let cols = x.gather(Rc::from(cols), &[n * oh * ow, patch])?;
    let flat_kernel = kernel.reshape(&[o, patch])?.transpose()?;
    let out = cols.matmul(&flat_kernel)?; // [n*oh*ow, o]

    // [n, oh, ow, o] -> [n, o, oh, ow]
    let mut perm = Vec::with_capacity(n * o * oh * ow);
    for b in 0..n {
        for ch in 0..o {
            for i in 0..oh {
                for j in 0..ow {
                    perm.push(Some(((b * oh + i) * ow + j) * o + ch));
                }
            }
        }
    }
    out.gather(Rc::from(perm), &[n, o, oh, ow])
}

/// Adds a per-channel bias to an `[n, c, ...]` activation.
pub fn add_channel_bias(x: &Var, b: &Var) -> Result<Var> {
    x.add(&broadcast_along(b, &x.shape(), 1)?)
}

/// 2x2 max-pool with stride 2; odd trailing rows/columns are dropped.
pub fn max_pool2(x: &Var) -> Result<Var> {
    let xs = x.shape();
    if xs.len() != 4 || xs[2] < 2 || xs[3] < 2 {
        return Err(shape_err("max_pool2", format!("expected [n, c, h>=2, w>=2], got {:?}", xs)));
    }
    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let (oh, ow) = (h / 2, w / 2);
    let v = x.value();
    let d = v.data();
    let mut winners: Vec<Option<usize>> = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let mut best = base + 2 * i * w + 2 * j;
                for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * i + di) * w + 2 * j + dj;
                    if d[idx] > d[best] {
                        best = idx;
                    }
                }
                winners.push(Some(best));
            }
        }
    }
    let index: IndexMap = Rc::from(winners);
    x.gather(index, &[n, c, oh, ow])
}

/// Mean over the spatial axes: `[n, c, h, w] -> [n, c]`.
pub fn global_mean_pool(x: &Var) -> Result<Var> {
    let xs = x.shape();
    if xs.len() != 4 {
        return Err(shape_err("global_mean_pool", format!("expected rank 4, got {:?}", xs)));
    }
    let (n, c, hw) = (xs[0], xs[1], xs[2] * xs[3]);
    Ok(x.sum_mid([n * c, hw, 1])?.reshape(&[n, c])?.scale(1.0 / hw as f64))
}

/// Mean cross-entropy of row-wise softmax against integer labels.
pub fn softmax_cross_entropy(logits: &Var, labels: &[usize]) -> Result<Var> {
    let s = logits.shape();
    if s.len() != 2 || s[0] != labels.len() || s[0] == 0 {
        return Err(shape_err(
            "softmax_cross_entropy",
            format!("logits {:?} for {} labels", s, labels.len()),
        ));
    }
    let (m, k) = (s[0], s[1]);
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(shape_err("softmax_cross_entropy", format!("label {} with {} classes", bad, k)));
    }
    let picks: Vec<Option<usize>> = labels.iter().enumerate().map(|(i, &l)| Some(i * k + l)).collect();
    let logp = logits.log_softmax()?.gather(Rc::from(picks), &[m])?;
    Ok(sum(&logp)?.scale(-1.0 / m as f64))
}
