//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s. Calling
//! [`Tape::backward`] on a scalar walks the recorded lineage in reverse and
//! accumulates gradients on every leaf that requires them. Node ids only ever
//! reference earlier nodes, so the lineage is acyclic by construction.
//!
//! No implicit broadcasting: binary elementwise ops require equal shapes. The
//! one broadcast that attention blocks need (adding a row vector to every row)
//! is the explicit [`Var::add_row`].

use std::cell::RefCell;
use std::collections::HashMap;

use crate::error::{contract_err, shape_err, Error, Result};
use crate::param::{ParamId, ParamStore};
use crate::tensor::{matmul_raw, transpose_raw, Tensor};

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddRow(usize, usize),
    SoftmaxRows(usize),
    Concat { axis: usize, a: usize, b: usize },
    Gelu(usize),
    Relu(usize),
    Sum(usize),
    Mean(usize),
    Gather { src: usize, index: Vec<usize> },
    Reshape(usize),
    Transpose(usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records operations for one differentiable computation.
///
/// A tape is confined to one thread; parallelism happens across tapes.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grads: RefCell<HashMap<usize, Tensor>>,
    params: RefCell<HashMap<ParamId, usize>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A value that never receives gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    /// A free leaf that accumulates gradient.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Registers a parameter as a leaf. Frozen parameters enter as constants.
    /// Repeated registration of the same parameter returns the same node.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var<'_> {
        if let Some(&node) = self.params.borrow().get(&id) {
            return Var {
                tape: self,
                id: node,
            };
        }
        let p = store.get(id);
        let var = self.push(p.tensor.clone(), Op::Leaf, p.trainable);
        self.params.borrow_mut().insert(id, var.id);
        var
    }

    /// Registers a parameter by name.
    pub fn param_named(&self, store: &ParamStore, name: &str) -> Result<Var<'_>> {
        let id = store
            .id(name)
            .ok_or_else(|| contract_err!("unknown parameter {name}"))?;
        Ok(self.param(store, id))
    }

    /// Propagates gradient from a scalar loss to every leaf that requires it.
    ///
    /// Gradients accumulate: calling this twice without resetting doubles
    /// them.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(contract_err!(
                "backward requires a scalar loss, got shape {:?}",
                root.value.shape()
            ));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
        adj[loss.id] = Some(vec![1.0]);
        let mut grads = self.grads.borrow_mut();

        for id in (0..=loss.id).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let mut send = |target: usize, contrib: Vec<f64>| {
                if !nodes[target].requires_grad {
                    return;
                }
                match &mut adj[target] {
                    Some(acc) => acc.iter_mut().zip(contrib).for_each(|(a, c)| *a += c),
                    slot @ None => *slot = Some(contrib),
                }
            };
            match &node.op {
                Op::Leaf => {
                    let shape = node.value.shape();
                    match grads.get_mut(&id) {
                        Some(acc) => acc
                            .data_mut()
                            .iter_mut()
                            .zip(&g)
                            .for_each(|(a, c)| *a += c),
                        None => {
                            grads.insert(id, Tensor::with_empty(shape, g).expect("grad shape"));
                        }
                    }
                }
                &Op::MatMul(a, b) => {
                    let (m, k) = nodes[a].value.dims2()?;
                    let n = nodes[b].value.shape()[1];
                    if nodes[a].requires_grad {
                        let bt = transpose_raw(nodes[b].value.data(), k, n);
                        send(a, matmul_raw(&g, &bt, m, n, k));
                    }
                    if nodes[b].requires_grad {
                        let at = transpose_raw(nodes[a].value.data(), m, k);
                        send(b, matmul_raw(&at, &g, k, m, n));
                    }
                }
                &Op::Add(a, b) => {
                    send(a, g.clone());
                    send(b, g);
                }
                &Op::Sub(a, b) => {
                    send(a, g.clone());
                    send(b, g.iter().map(|v| -v).collect());
                }
                &Op::Mul(a, b) => {
                    let av = nodes[a].value.data();
                    let bv = nodes[b].value.data();
                    send(a, g.iter().zip(bv).map(|(g, b)| g * b).collect());
                    send(b, g.iter().zip(av).map(|(g, a)| g * a).collect());
                }
                &Op::Scale(a, s) => send(a, g.iter().map(|v| v * s).collect()),
                &Op::AddRow(a, row) => {
                    let n = nodes[row].value.numel();
                    let mut rg = vec![0.0; n];
                    for chunk in g.chunks(n) {
                        rg.iter_mut().zip(chunk).for_each(|(r, c)| *r += c);
                    }
                    send(a, g);
                    send(row, rg);
                }
                &Op::SoftmaxRows(a) => {
                    let y = node.value.data();
                    let n = *node.value.shape().last().unwrap();
                    let mut dx = vec![0.0; y.len()];
                    for ((yr, gr), dr) in y.chunks(n).zip(g.chunks(n)).zip(dx.chunks_mut(n)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                        for ((d, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                            *d = yv * (gv - dot);
                        }
                    }
                    send(a, dx);
                }
                &Op::Concat { axis, a, b } => {
                    let (outer, la, lb, inner) =
                        concat_layout(nodes[a].value.shape(), nodes[b].value.shape(), axis);
                    let mut ga = Vec::with_capacity(outer * la * inner);
                    let mut gb = Vec::with_capacity(outer * lb * inner);
                    let stride = (la + lb) * inner;
                    for o in 0..outer {
                        let base = o * stride;
                        ga.extend_from_slice(&g[base..base + la * inner]);
                        gb.extend_from_slice(&g[base + la * inner..base + stride]);
                    }
                    send(a, ga);
                    send(b, gb);
                }
                &Op::Gelu(a) => {
                    let x = nodes[a].value.data();
                    send(a, x.iter().zip(&g).map(|(&x, g)| g * gelu_grad(x)).collect());
                }
                &Op::Relu(a) => {
                    let x = nodes[a].value.data();
                    send(
                        a,
                        x.iter()
                            .zip(&g)
                            .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                            .collect(),
                    );
                }
                &Op::Sum(a) => send(a, vec![g[0]; nodes[a].value.numel()]),
                &Op::Mean(a) => {
                    let n = nodes[a].value.numel();
                    send(a, vec![g[0] / n as f64; n]);
                }
                Op::Gather { src, index } => {
                    let mut gs = vec![0.0; nodes[*src].value.numel()];
                    for (&i, gv) in index.iter().zip(&g) {
                        gs[i] += gv;
                    }
                    send(*src, gs);
                }
                &Op::Reshape(a) => send(a, g),
                &Op::Transpose(a) => {
                    let (m, n) = nodes[a].value.dims2()?;
                    send(a, transpose_raw(&g, n, m));
                }
            }
        }
        Ok(())
    }

    /// Gradient accumulated on a leaf, if any.
    pub fn grad(&self, var: Var<'_>) -> Option<Tensor> {
        self.grads.borrow().get(&var.id).cloned()
    }

    /// Gradients of registered parameters, ordered by parameter id.
    pub fn param_grads(&self) -> Vec<(ParamId, Tensor)> {
        let grads = self.grads.borrow();
        let mut out: Vec<_> = self
            .params
            .borrow()
            .iter()
            .filter_map(|(&pid, node)| grads.get(node).map(|g| (pid, g.clone())))
            .collect();
        out.sort_by_key(|(pid, _)| *pid);
        out
    }

    /// Adds the gradients of every registered parameter into the store.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        let grads = self.grads.borrow();
        for (&pid, node) in self.params.borrow().iter() {
            if let Some(g) = grads.get(node) {
                store.add_grad(pid, g);
            }
        }
    }
}

fn concat_layout(a: &[usize], b: &[usize], axis: usize) -> (usize, usize, usize, usize) {
    let outer = a[..axis].iter().product();
    let inner = a[axis + 1..].iter().product();
    (outer, a[axis], b[axis], inner)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let th = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// A copy of the current value.
    pub fn value(&self) -> Tensor {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn scalar_value(&self) -> f64 {
        self.tape.nodes.borrow()[self.id].value.data()[0]
    }

    pub fn grad(&self) -> Option<Tensor> {
        self.tape.grad(*self)
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn same_tape(&self, other: &Var<'_>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(contract_err!("operands recorded on different tapes"))
        }
    }

    fn unary(&self, op: Op, f: impl FnOnce(&Tensor) -> Result<Tensor>) -> Result<Var<'t>> {
        let (value, rg) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            (f(&n.value)?, n.requires_grad)
        };
        Ok(self.tape.push(value, op, rg))
    }

    fn binary(
        &self,
        other: Var<'_>,
        op: Op,
        f: impl FnOnce(&Tensor, &Tensor) -> Result<Tensor>,
    ) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let (value, rg) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            (f(&a.value, &b.value)?, a.requires_grad || b.requires_grad)
        };
        Ok(self.tape.push(value, op, rg))
    }

    pub fn matmul(&self, other: Var<'_>) -> Result<Var<'t>> {
        self.binary(other, Op::MatMul(self.id, other.id), |a, b| a.matmul(b))
    }

    pub fn add(&self, other: Var<'_>) -> Result<Var<'t>> {
        self.binary(other, Op::Add(self.id, other.id), |a, b| a.add(b))
    }

    pub fn sub(&self, other: Var<'_>) -> Result<Var<'t>> {
        self.binary(other, Op::Sub(self.id, other.id), |a, b| a.sub(b))
    }

    pub fn mul(&self, other: Var<'_>) -> Result<Var<'t>> {
        self.binary(other, Op::Mul(self.id, other.id), |a, b| {
            a.zip_with(b, |x, y| x * y)
        })
    }

    pub fn scale(&self, s: f64) -> Result<Var<'t>> {
        self.unary(Op::Scale(self.id, s), |a| Ok(a.scale(s)))
    }

    pub fn square(&self) -> Result<Var<'t>> {
        self.mul(*self)
    }

    /// Adds a length-`n` vector to every row of an `[m, n]` matrix.
    pub fn add_row(&self, row: Var<'_>) -> Result<Var<'t>> {
        self.binary(row, Op::AddRow(self.id, row.id), |a, r| {
            let (_, n) = a.dims2()?;
            if r.numel() != n {
                return Err(shape_err!(
                    "row of {} values cannot be added to rows of width {n}",
                    r.numel()
                ));
            }
            let mut out = a.clone();
            for chunk in out.data_mut().chunks_mut(n) {
                chunk.iter_mut().zip(r.data()).for_each(|(o, v)| *o += v);
            }
            Ok(out)
        })
    }

    /// Softmax over the last axis with per-row max subtraction.
    pub fn softmax_rows(&self) -> Result<Var<'t>> {
        self.unary(Op::SoftmaxRows(self.id), softmax_rows)
    }

    pub fn concat(&self, axis: usize, other: Var<'_>) -> Result<Var<'t>> {
        self.binary(
            other,
            Op::Concat {
                axis,
                a: self.id,
                b: other.id,
            },
            |a, b| concat(axis, a, b),
        )
    }

    pub fn gelu(&self) -> Result<Var<'t>> {
        self.unary(Op::Gelu(self.id), |a| Ok(a.map(gelu)))
    }

    pub fn relu(&self) -> Result<Var<'t>> {
        self.unary(Op::Relu(self.id), |a| Ok(a.map(|v| v.max(0.0))))
    }

    pub fn sum(&self) -> Result<Var<'t>> {
        self.unary(Op::Sum(self.id), |a| Ok(Tensor::scalar(a.sum())))
    }

    pub fn mean(&self) -> Result<Var<'t>> {
        self.unary(Op::Mean(self.id), |a| {
            if a.numel() == 0 {
                return Err(contract_err!("mean of an empty tensor"));
            }
            Ok(Tensor::scalar(a.sum() / a.numel() as f64))
        })
    }

    /// `out.flat[i] = self.flat[index[i]]`, reshaped to `shape`.
    ///
    /// Covers embedding lookup, patch (un)shuffling and arbitrary
    /// permutations; the backward pass scatter-adds.
    pub fn gather(&self, index: Vec<usize>, shape: &[usize]) -> Result<Var<'t>> {
        let idx = index.clone();
        self.unary(Op::Gather { src: self.id, index }, |a| {
            let n = a.numel();
            if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
                return Err(shape_err!("gather index {bad} out of range {n}"));
            }
            Tensor::new(shape, idx.iter().map(|&i| a.data()[i]).collect())
        })
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        self.unary(Op::Reshape(self.id), |a| a.clone().reshaped(shape))
    }

    pub fn transpose(&self) -> Result<Var<'t>> {
        self.unary(Op::Transpose(self.id), |a| a.transpose())
    }

    /// Rows `start..end` of a matrix.
    pub fn rows(&self, start: usize, end: usize) -> Result<Var<'t>> {
        let shape = self.shape();
        let (m, n) = match shape[..] {
            [m, n] => (m, n),
            _ => return Err(shape_err!("rows() on non-matrix {shape:?}")),
        };
        if start >= end || end > m {
            return Err(shape_err!("row range {start}..{end} outside {m} rows"));
        }
        self.gather((start * n..end * n).collect(), &[end - start, n])
    }
}

/// Row-wise softmax of a plain tensor (last axis).
pub fn softmax_rows(a: &Tensor) -> Result<Tensor> {
    if !a.is_finite() {
        return Err(Error::NumericDomain("softmax input is not finite".into()));
    }
    let n = *a
        .shape()
        .last()
        .ok_or_else(|| shape_err!("softmax of a rank-0 tensor"))?;
    let mut out = a.clone();
    for row in out.data_mut().chunks_mut(n) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    Ok(out)
}

/// Concatenation of plain tensors along `axis`.
pub fn concat(axis: usize, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != sb.len() || axis >= sa.len() {
        return Err(shape_err!("cannot concat {sa:?} and {sb:?} on axis {axis}"));
    }
    if sa
        .iter()
        .zip(sb)
        .enumerate()
        .any(|(i, (x, y))| i != axis && x != y)
    {
        return Err(shape_err!("cannot concat {sa:?} and {sb:?} on axis {axis}"));
    }
    let (outer, la, lb, inner) = concat_layout(sa, sb, axis);
    let mut data = Vec::with_capacity(a.numel() + b.numel());
    for o in 0..outer {
        data.extend_from_slice(&a.data()[o * la * inner..(o + 1) * la * inner]);
        data.extend_from_slice(&b.data()[o * lb * inner..(o + 1) * lb * inner]);
    }
    let mut shape = sa.to_vec();
    shape[axis] = la + lb;
    Tensor::with_empty(&shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn matmul_hand_case_and_loop_oracle() {
        let tape = Tape::new();
        let a = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.constant(t(&[2, 1], &[1.0, 1.0]));
        assert_eq!(a.matmul(b).unwrap().value().data(), &[3.0, 7.0]);

        // triple loop oracle
        let av = [1.0, 2.0, 3.0, 4.0];
        let bv = [1.0, 1.0];
        let mut c = [0.0; 2];
        for i in 0..2 {
            for p in 0..2 {
                c[i] += av[i * 2 + p] * bv[p];
            }
        }
        assert_eq!(c, [3.0, 7.0]);
    }

    #[test]
    fn matmul_identity_and_zero() {
        let tape = Tape::new();
        let a = tape.constant(t(&[2, 3], &[1.0, -2.0, 3.5, 0.25, 7.0, -1.0]));
        let i = tape.constant(Tensor::identity(3));
        assert_eq!(a.matmul(i).unwrap().value(), a.value());
        let z = tape.constant(Tensor::zeros(&[4, 2]));
        assert!(z.matmul(a).unwrap().value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_extent_mismatch() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(a.matmul(b), Err(Error::Shape(_))));
    }

    #[test]
    fn softmax_cases() {
        let s = softmax_rows(&t(&[1, 2], &[0.0, 0.0])).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax_rows(&t(&[1, 1], &[42.0])).unwrap();
        assert_eq!(s.data(), &[1.0]);
        let s = softmax_rows(&t(&[1, 3], &[1.0, 2.0, 3.0])).unwrap();
        let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
        for (k, v) in s.data().iter().enumerate() {
            assert!((v - ((k + 1) as f64).exp() / z).abs() < 1e-12);
        }
        assert!(matches!(
            softmax_rows(&t(&[1, 2], &[f64::NAN, 0.0])),
            Err(Error::NumericDomain(_))
        ));
        assert!(softmax_rows(&t(&[1, 2], &[f64::INFINITY, 0.0])).is_err());
    }

    #[test]
    fn concat_cases() {
        let c = concat(0, &t(&[2], &[1.0, 2.0]), &t(&[1], &[3.0])).unwrap();
        assert_eq!(c.data(), &[1.0, 2.0, 3.0]);

        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let empty = Tensor::with_empty(&[2, 0], vec![]).unwrap();
        assert_eq!(concat(1, &a, &empty).unwrap(), a);
        assert_eq!(concat(1, &empty, &a).unwrap(), a);

        let b = t(&[2, 3], &[5.0, 6.0, 7.0, 8.0, 9.0, 10.0]);
        let c = concat(1, &a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 5]);
        // index oracle: out[i][j] = j < 2 ? a[i][j] : b[i][j-2]
        for i in 0..2 {
            for j in 0..5 {
                let want = if j < 2 { a.get2(i, j) } else { b.get2(i, j - 2) };
                assert_eq!(c.get2(i, j), want);
            }
        }
        assert!(concat(0, &a, &b).is_err());
    }

    #[test]
    fn elementwise_cases() {
        let tape = Tape::new();
        let a = tape.constant(t(&[3], &[1.0, 2.0, 3.0]));
        let z = tape.constant(Tensor::zeros(&[3]));
        assert_eq!(a.add(z).unwrap().value(), a.value());
        assert_eq!(a.mean().unwrap().scalar_value(), 2.0);
        let wrong = tape.constant(Tensor::zeros(&[2]));
        assert!(matches!(a.add(wrong), Err(Error::Shape(_))));
    }

    #[test]
    fn grad_of_sum_of_squares() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[1], &[3.0]));
        let loss = x.square().unwrap().sum().unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(x.grad().unwrap().data(), &[6.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn backward_of_sum_is_ones_and_accumulates() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let loss = x.sum().unwrap();
        tape.backward(loss).unwrap();
        assert!(x.grad().unwrap().data().iter().all(|&g| g == 1.0));
        tape.backward(loss).unwrap();
        assert!(x.grad().unwrap().data().iter().all(|&g| g == 2.0));
    }

    #[test]
    fn disconnected_leaf_has_no_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]));
        let y = tape.leaf(t(&[2], &[1.0, 2.0]));
        tape.backward(x.sum().unwrap()).unwrap();
        assert!(y.grad().is_none());
    }
}
