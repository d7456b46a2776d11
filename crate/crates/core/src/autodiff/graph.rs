//! Computation record and reverse-mode differentiation.
//!
//! A [`Graph`] is an append-only list of nodes. Every node holds its forward
//! value and the primitive that produced it, so inputs always precede their
//! consumers. [`Graph::grad`] walks the record backwards and emits the
//! vector-Jacobian products as *new nodes on the same record*. With
//! `create_graph = true` those gradient nodes stay connected to the leaves
//! they depend on, which is what lets a meta-loss be differentiated through
//! an unrolled sequence of gradient-descent steps.

use std::cell::RefCell;
use std::collections::HashSet;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Index map shared by gather/scatter pairs. `None` reads as zero.
pub type IndexMap = Rc<[Option<usize>]>;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Const,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    MatMul(usize, usize),
    Transpose(usize),
    Reshape(usize),
    Gather { src: usize, index: IndexMap },
    ScatterAdd { src: usize, index: IndexMap },
    SumMid { src: usize, dims: [usize; 3] },
    ExpandMid { src: usize, dims: [usize; 3] },
    Exp(usize),
    LogSoftmax(usize),
}

impl Op {
    fn inputs(&self) -> [Option<usize>; 2] {
        match *self {
            Op::Leaf | Op::Const => [None, None],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => [Some(a), Some(b)],
            Op::Scale(a, _) | Op::Transpose(a) | Op::Reshape(a) | Op::Exp(a) | Op::LogSoftmax(a) => {
                [Some(a), None]
            }
            Op::Gather { src, .. }
            | Op::ScatterAdd { src, .. }
            | Op::SumMid { src, .. }
            | Op::ExpandMid { src, .. } => [Some(src), None],
        }
    }
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// An append-only computation record. Cheap to clone (shared handle).
#[derive(Clone, Default)]
pub struct Graph {
    nodes: Rc<RefCell<Vec<Node>>>,
}

/// A handle to one node of a [`Graph`].
#[derive(Clone)]
pub struct Var {
    graph: Graph,
    id: usize,
}

impl std::fmt::Debug for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}({:?})", self.id, self.value())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A differentiable parameter.
    pub fn leaf(&self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A value that never receives gradient.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(value, Op::Const, false)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(value), op, requires_grad });
        Var { graph: self.clone(), id: nodes.len() - 1 }
    }

    fn var(&self, id: usize) -> Var {
        Var { graph: self.clone(), id }
    }

    fn same(&self, other: &Graph) -> bool {
        Rc::ptr_eq(&self.nodes, &other.nodes)
    }

    /// Gradients of the scalar `loss` with respect to each of `wrt`.
    ///
    /// Variables with no path to `loss` get zeros. With `create_graph` the
    /// returned variables remain differentiable; otherwise they are detached
    /// constants.
    pub fn grad(&self, loss: &Var, wrt: &[Var], create_graph: bool) -> Result<Vec<Var>> {
        if !self.same(&loss.graph) || wrt.iter().any(|w| !self.same(&w.graph)) {
            return Err(Error::GraphMismatch);
        }
        let loss_shape = loss.shape();
        if loss_shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarLoss(loss_shape));
        }

        let targets: HashSet<usize> = wrt.iter().map(|w| w.id).collect();
        // Nodes on some path from a target to the loss.
        let needed = {
            let nodes = self.nodes.borrow();
            let mut needed = vec![false; loss.id + 1];
            for id in 0..=loss.id {
                let node = &nodes[id];
                needed[id] = node.requires_grad
                    && (targets.contains(&id)
                        || node.op.inputs().iter().flatten().any(|&i| needed[i]));
            }
            needed
        };

        let mut adjoint: Vec<Option<Var>> = vec![None; loss.id + 1];
        let mut found: Vec<Option<Var>> = vec![None; loss.id + 1];
        if needed[loss.id] {
            adjoint[loss.id] = Some(self.constant(Tensor::full(&loss.shape(), 1.0)));
        }

        for id in (0..=loss.id).rev() {
            if !needed[id] {
                continue;
            }
            let Some(g) = adjoint[id].take() else { continue };
            if targets.contains(&id) {
                found[id] = Some(g.clone());
            }
            let op = self.nodes.borrow()[id].op.clone();
            let mut emit = |input: usize, contrib: Var| -> Result<()> {
                if needed[input] {
                    adjoint[input] = Some(match adjoint[input].take() {
                        None => contrib,
                        Some(prev) => prev.add(&contrib)?,
                    });
                }
                Ok(())
            };
            match op {
                Op::Leaf | Op::Const => {}
                Op::Add(a, b) => {
                    emit(a, g.clone())?;
                    emit(b, g)?;
                }
                Op::Sub(a, b) => {
                    emit(a, g.clone())?;
                    emit(b, g.scale(-1.0))?;
                }
                Op::Mul(a, b) => {
                    if needed[a] {
                        emit(a, g.mul(&self.var(b))?)?;
                    }
                    if needed[b] {
                        emit(b, g.mul(&self.var(a))?)?;
                    }
                }
                Op::Scale(a, k) => emit(a, g.scale(k))?,
                Op::MatMul(a, b) => {
                    if needed[a] {
                        emit(a, g.matmul(&self.var(b).transpose()?)?)?;
                    }
                    if needed[b] {
                        emit(b, self.var(a).transpose()?.matmul(&g)?)?;
                    }
                }
                Op::Transpose(a) => emit(a, g.transpose()?)?,
                Op::Reshape(a) => {
                    let shape = self.var(a).shape();
                    emit(a, g.reshape(&shape)?)?;
                }
                Op::Gather { src, index } => {
                    let shape = self.var(src).shape();
                    emit(src, g.scatter_add(index, &shape)?)?;
                }
                Op::ScatterAdd { src, index } => {
                    let shape = self.var(src).shape();
                    emit(src, g.gather(index, &shape)?)?;
                }
                Op::SumMid { src, dims } => {
                    let shape = self.var(src).shape();
                    emit(src, g.expand_mid(dims)?.reshape(&shape)?)?;
                }
                Op::ExpandMid { src, dims } => {
                    let shape = self.var(src).shape();
                    emit(src, g.sum_mid(dims)?.reshape(&shape)?)?;
                }
                Op::Exp(a) => emit(a, g.mul(&self.var(id))?)?,
                Op::LogSoftmax(a) => {
                    // d x = g - softmax(x) * rowsum(g)
                    let out = self.var(id);
                    let shape = out.shape();
                    let (m, n) = (shape[0], shape[1]);
                    let row_sum = g.sum_mid([m, n, 1])?.expand_mid([m, n, 1])?.reshape(&shape)?;
                    let soft = out.exp();
                    emit(a, g.sub(&soft.mul(&row_sum)?)?)?;
                }
            }
        }

        wrt.iter()
            .map(|w| {
                let g = match found.get(w.id).cloned().flatten() {
                    Some(g) => g,
                    None => self.constant(Tensor::zeros(&w.shape())),
                };
                Ok(if create_graph { g } else { g.detach() })
            })
            .collect()
    }

    /// Numeric gradients of `loss` with respect to `wrt`.
    pub fn backward(&self, loss: &Var, wrt: &[Var]) -> Result<Vec<Tensor>> {
        Ok(self.grad(loss, wrt, false)?.iter().map(|g| (*g.value()).clone()).collect())
    }
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}

impl Var {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.graph.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.graph.nodes.borrow()[self.id].value.numel()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].requires_grad
    }

    /// Same value, cut from the record.
    pub fn detach(&self) -> Var {
        self.graph.constant((*self.value()).clone())
    }

    fn unary(&self, value: Tensor, op: Op) -> Var {
        self.graph.push(value, op, self.requires_grad())
    }

    fn binary(&self, other: &Var, value: Tensor, op: Op) -> Var {
        let rg = self.requires_grad() || other.requires_grad();
        self.graph.push(value, op, rg)
    }

    fn check_same(&self, other: &Var) -> Result<()> {
        if self.graph.same(&other.graph) {
            Ok(())
        } else {
            Err(Error::GraphMismatch)
        }
    }

    fn zip_with(&self, other: &Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.check_same(other)?;
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(shape_err(name, format!("lhs {:?} vs rhs {:?}", a.shape(), b.shape())));
        }
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(a.shape().to_vec(), data)
    }

    pub fn add(&self, other: &Var) -> Result<Var> {
        let v = self.zip_with(other, "add", |x, y| x + y)?;
        Ok(self.binary(other, v, Op::Add(self.id, other.id)))
    }

    pub fn sub(&self, other: &Var) -> Result<Var> {
        let v = self.zip_with(other, "sub", |x, y| x - y)?;
        Ok(self.binary(other, v, Op::Sub(self.id, other.id)))
    }

    /// Element-wise (Hadamard) product.
    pub fn mul(&self, other: &Var) -> Result<Var> {
        let v = self.zip_with(other, "mul", |x, y| x * y)?;
        Ok(self.binary(other, v, Op::Mul(self.id, other.id)))
    }

    /// Multiplication by a constant scalar.
    pub fn scale(&self, k: f64) -> Var {
        let v = self.value().map(|x| x * k);
        self.unary(v, Op::Scale(self.id, k))
    }

    pub fn exp(&self) -> Var {
        let v = self.value().map(f64::exp);
        self.unary(v, Op::Exp(self.id))
    }

    /// 2-D matrix product `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&self, other: &Var) -> Result<Var> {
        self.check_same(other)?;
        let (a, b) = (self.value(), other.value());
        if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(shape_err("matmul", format!("lhs {:?} vs rhs {:?}", a.shape(), b.shape())));
        }
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let (ad, bd) = (a.data(), b.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = ad[i * k + p];
                let brow = &bd[p * n..(p + 1) * n];
                for (o, &y) in row.iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
        }
        let v = Tensor::new(vec![m, n], out)?;
        Ok(self.binary(other, v, Op::MatMul(self.id, other.id)))
    }

    /// 2-D transpose.
    pub fn transpose(&self) -> Result<Var> {
        let a = self.value();
        if a.rank() != 2 {
            return Err(shape_err("transpose", format!("expected rank 2, got {:?}", a.shape())));
        }
        let (m, n) = (a.shape()[0], a.shape()[1]);
        let d = a.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = d[i * n + j];
            }
        }
        let v = Tensor::new(vec![n, m], out)?;
        Ok(self.unary(v, Op::Transpose(self.id)))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var> {
        let v = self.value().reshape(shape).map_err(|_| {
            shape_err("reshape", format!("{:?} -> {:?}", self.shape(), shape))
        })?;
        Ok(self.unary(v, Op::Reshape(self.id)))
    }

    /// `out[i] = self[index[i]]` (flat indices), zero where the index is `None`.
    pub fn gather(&self, index: IndexMap, out_shape: &[usize]) -> Result<Var> {
        let a = self.value();
        let n: usize = out_shape.iter().product();
        if index.len() != n {
            return Err(shape_err("gather", format!("{} indices for output {:?}", index.len(), out_shape)));
        }
        let d = a.data();
        let mut out = Vec::with_capacity(n);
        for ix in index.iter() {
            out.push(match *ix {
                Some(i) if i < d.len() => d[i],
                Some(i) => {
                    return Err(shape_err("gather", format!("index {} out of range {}", i, d.len())))
                }
                None => 0.0,
            });
        }
        let v = Tensor::new(out_shape.to_vec(), out)?;
        Ok(self.unary(v, Op::Gather { src: self.id, index }))
    }

    /// `out[index[i]] += self[i]` into a zero tensor of `out_shape`.
    pub fn scatter_add(&self, index: IndexMap, out_shape: &[usize]) -> Result<Var> {
        let a = self.value();
        if index.len() != a.numel() {
            return Err(shape_err("scatter_add", format!("{} indices for input {:?}", index.len(), a.shape())));
        }
        let n: usize = out_shape.iter().product();
        let mut out = vec![0.0; n];
        for (ix, &x) in index.iter().zip(a.data()) {
            if let Some(i) = *ix {
                if i >= n {
                    return Err(shape_err("scatter_add", format!("index {} out of range {}", i, n)));
                }
                out[i] += x;
            }
        }
        let v = Tensor::new(out_shape.to_vec(), out)?;
        Ok(self.unary(v, Op::ScatterAdd { src: self.id, index }))
    }

    /// Views the data as `[p, q, r]` and sums over the middle axis, giving `[p, r]`.
    pub fn sum_mid(&self, dims: [usize; 3]) -> Result<Var> {
        let a = self.value();
        let [p, q, r] = dims;
        if p * q * r != a.numel() {
            return Err(shape_err("sum_mid", format!("{:?} cannot view {:?}", dims, a.shape())));
        }
        let d = a.data();
        let mut out = vec![0.0; p * r];
        for i in 0..p {
            for j in 0..q {
                let base = (i * q + j) * r;
                for k in 0..r {
                    out[i * r + k] += d[base + k];
                }
            }
        }
        let v = Tensor::new(vec![p, r], out)?;
        Ok(self.unary(v, Op::SumMid { src: self.id, dims }))
    }

    /// Views the data as `[p, r]` and repeats it `q` times along a new middle axis.
    pub fn expand_mid(&self, dims: [usize; 3]) -> Result<Var> {
        let a = self.value();
        let [p, q, r] = dims;
        if p * r != a.numel() {
            return Err(shape_err("expand_mid", format!("{:?} cannot expand {:?}", dims, a.shape())));
        }
        let d = a.data();
        let mut out = Vec::with_capacity(p * q * r);
        for i in 0..p {
            for _ in 0..q {
                out.extend_from_slice(&d[i * r..(i + 1) * r]);
            }
        }
        let v = Tensor::new(vec![p, q, r], out)?;
        Ok(self.unary(v, Op::ExpandMid { src: self.id, dims }))
    }

    /// Row-wise log-softmax of a 2-D tensor.
    pub fn log_softmax(&self) -> Result<Var> {
        let a = self.value();
        if a.rank() != 2 || a.shape()[1] == 0 {
            return Err(shape_err("log_softmax", format!("expected [rows, classes], got {:?}", a.shape())));
        }
        let (m, n) = (a.shape()[0], a.shape()[1]);
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            let row = a.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            out.extend(row.iter().map(|x| x - lse));
        }
        let v = Tensor::new(vec![m, n], out)?;
        Ok(self.unary(v, Op::LogSoftmax(self.id)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_are_topologically_ordered() {
        let g = Graph::new();
        let a = g.leaf(Tensor::from_vec(vec![1.0, 2.0]));
        let b = a.scale(3.0);
        let c = b.mul(&a).unwrap();
        assert!(a.id() < b.id() && b.id() < c.id());
        let nodes = g.nodes.borrow();
        for (id, node) in nodes.iter().enumerate() {
            assert!(node.op.inputs().iter().flatten().all(|&i| i < id));
        }
    }

    #[test]
    fn constants_do_not_require_grad() {
        let g = Graph::new();
        let c = g.constant(Tensor::scalar(2.0));
        let w = g.leaf(Tensor::scalar(1.0));
        assert!(!c.scale(2.0).requires_grad());
        assert!(c.mul(&w).unwrap().requires_grad());
    }

    #[test]
    fn mixing_records_is_rejected() {
        let (g1, g2) = (Graph::new(), Graph::new());
        let a = g1.leaf(Tensor::scalar(1.0));
        let b = g2.leaf(Tensor::scalar(1.0));
        assert!(matches!(a.add(&b), Err(Error::GraphMismatch)));
    }

    #[test]
    fn sum_and_expand_mid_shapes() {
        let g = Graph::new();
        let x = g.constant(Tensor::new(vec![2, 3, 2], (0..12).map(f64::from).collect()).unwrap());
        let s = x.sum_mid([2, 3, 2]).unwrap();
        assert_eq!(s.value().data(), &[6.0, 9.0, 24.0, 27.0]);
        let e = s.expand_mid([2, 2, 2]).unwrap();
        assert_eq!(e.shape(), vec![2, 2, 2]);
        assert_eq!(e.value().data(), &[6.0, 9.0, 6.0, 9.0, 24.0, 27.0, 24.0, 27.0]);
    }

    #[test]
    fn second_derivative_of_cube() {
        // f = x^3, f' = 3x^2, f'' = 6x
        let g = Graph::new();
        let x = g.leaf(Tensor::scalar(2.0));
        let y = x.mul(&x).unwrap().mul(&x).unwrap();
        let dy = g.grad(&y, std::slice::from_ref(&x), true).unwrap().remove(0);
        assert_eq!(dy.value().data()[0], 12.0);
        let d2 = g.backward(&dy, &[x]).unwrap();
        assert_eq!(d2[0].data()[0], 12.0);
    }
}
