//! Differentiating an outer loss through unrolled inner gradient descent.

use crate::autodiff::graph::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Settings for the inner gradient-descent loop.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnrollConfig {
    pub steps: usize,
    pub inner_lr: f64,
    /// Treat each inner gradient as a constant, dropping second-order terms.
    pub first_order: bool,
}

/// Runs `steps` plain gradient-descent updates `p <- p - lr * dL/dp` on the
/// record, starting from `init`.
///
/// The returned variables depend on everything `inner_loss` touched. Unless
/// `first_order` is set, that includes the dependence of each inner gradient
/// on the outer parameters.
pub fn unroll<F>(graph: &Graph, init: &[Var], cfg: &UnrollConfig, mut inner_loss: F) -> Result<Vec<Var>>
where
    F: FnMut(&[Var]) -> Result<Var>,
{
    if cfg.steps < 1 {
        return Err(Error::invalid("unrolled inner loop needs at least one step"));
    }
    let mut params = init.to_vec();
    for step in 0..cfg.steps {
        let loss = inner_loss(&params)?;
        if !loss.value().is_finite() {
            return Err(Error::NonFinite { stage: "inner loss", index: step });
        }
        let grads = graph.grad(&loss, &params, !cfg.first_order)?;
        let mut next = Vec::with_capacity(params.len());
        for (p, g) in params.iter().zip(&grads) {
            if !g.value().is_finite() {
                return Err(Error::NonFinite { stage: "inner gradient", index: step });
            }
            next.push(p.sub(&g.scale(cfg.inner_lr))?);
        }
        params = next;
    }
    Ok(params)
}

/// Result of [`grad_through_unrolled_steps`].
#[derive(Clone, Debug)]
pub struct UnrolledGrad {
    pub meta_loss: f64,
    /// Gradient with respect to each outer parameter.
    pub outer: Vec<Tensor>,
    /// Gradient with respect to the inner parameters' starting values.
    pub inner_init: Vec<Tensor>,
    /// Inner parameters after the last step.
    pub adapted: Vec<Tensor>,
}

/// Tensor-level wrapper around [`unroll`]: builds a fresh record, adapts the
/// inner parameters with `inner_loss`, evaluates `meta_loss` at the adapted
/// values and differentiates it with respect to the outer parameters and the
/// inner starting point.
pub fn grad_through_unrolled_steps<I, M>(
    outer: &[Tensor],
    inner: &[Tensor],
    cfg: &UnrollConfig,
    mut inner_loss: I,
    mut meta_loss: M,
) -> Result<UnrolledGrad>
where
    I: FnMut(&Graph, &[Var], &[Var]) -> Result<Var>,
    M: FnMut(&Graph, &[Var], &[Var]) -> Result<Var>,
{
    let graph = Graph::new();
    let outer_vars: Vec<Var> = outer.iter().map(|t| graph.leaf(t.clone())).collect();
    let inner_vars: Vec<Var> = inner.iter().map(|t| graph.leaf(t.clone())).collect();
    let adapted = unroll(&graph, &inner_vars, cfg, |p| inner_loss(&graph, &outer_vars, p))?;
    let loss = meta_loss(&graph, &outer_vars, &adapted)?;
    let meta = loss.value().data().first().copied().unwrap_or(f64::NAN);
    if !meta.is_finite() {
        return Err(Error::NonFinite { stage: "meta loss", index: cfg.steps });
    }
    let wrt: Vec<Var> = outer_vars.iter().chain(&inner_vars).cloned().collect();
    let mut grads = graph.backward(&loss, &wrt)?;
    let inner_init = grads.split_off(outer.len());
    Ok(UnrolledGrad {
        meta_loss: meta,
        outer: grads,
        inner_init,
        adapted: adapted.iter().map(|v| (*v.value()).clone()).collect(),
    })
}
