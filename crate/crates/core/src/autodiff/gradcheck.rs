//! Central finite differences, used as an independent gradient oracle.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `(f(p + eps) - f(p - eps)) / 2 eps` for every scalar of every parameter.
pub fn finite_difference<F>(mut loss: F, params: &[Tensor], eps: f64) -> Result<Vec<Tensor>>
where
    F: FnMut(&[Tensor]) -> Result<f64>,
{
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::invalid(format!("finite-difference step must be positive, got {eps}")));
    }
    let mut work: Vec<Tensor> = params.to_vec();
    let mut grads = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let mut g = Tensor::zeros(params[p].shape());
        for i in 0..params[p].numel() {
            let orig = work[p].data()[i];
            work[p].data_mut()[i] = orig + eps;
            let up = loss(&work)?;
            work[p].data_mut()[i] = orig - eps;
            let down = loss(&work)?;
            work[p].data_mut()[i] = orig;
            g.data_mut()[i] = (up - down) / (2.0 * eps);
        }
        grads.push(g);
    }
    Ok(grads)
}

/// Largest `|a - b| / max(|a|, |b|, floor)` over all entries.
pub fn max_relative_error(a: &[Tensor], b: &[Tensor], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.data().iter().zip(y.data()))
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
