//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! The record is differentiable end to end: gradients are themselves graph
//! nodes, so a loss that depends on an inner gradient step can be
//! differentiated again. See [`unroll`] for the inner-loop driver and
//! [`gradcheck`] for the finite-difference oracle.

pub mod gradcheck;
pub mod graph;
pub mod nn;
pub mod unroll;

pub use gradcheck::{finite_difference, max_relative_error};
pub use graph::{Graph, IndexMap, Var};
pub use unroll::{grad_through_unrolled_steps, unroll, UnrollConfig, UnrolledGrad};
