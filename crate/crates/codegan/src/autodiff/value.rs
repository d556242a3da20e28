use std::cell::{Ref, RefCell, RefMut};
use std::collections::HashSet;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels::{gemm_nn_acc, gemm_nt_acc, gemm_tn_acc};
use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Dense f32 array with an explicit shape (rank 1 or 2, row-major).
/// Scalars are shape `[1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub data: Vec<f32>,
    pub shape: Vec<usize>,
}

impl Tensor {
    pub fn new(data: Vec<f32>, shape: Vec<usize>) -> Tensor {
        assert_eq!(
            data.len(),
            shape.iter().product::<usize>(),
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        assert!(
            !shape.is_empty() && shape.len() <= 2,
            "only rank-1 and rank-2 tensors are supported, got {shape:?}"
        );
        Tensor { data, shape }
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::new(vec![0.0; shape.iter().product()], shape.to_vec())
    }

    pub fn scalar(x: f32) -> Tensor {
        Tensor::new(vec![x], vec![1])
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// The producing operation of a graph node; `Leaf` for inputs.
pub(crate) enum Op {
    Leaf,
    Matmul(Value, Value),
    Add(Value, Value),
    Mul(Value, Value),
    Concat(Vec<Value>, usize),
    Sigmoid(Value),
    Tanh(Value),
    Relu(Value),
    Softmax(Value),
    Log(Value),
    Sum(Value),
    Mean(Value),
    Embedding(Value, Vec<usize>),
    Slice(Value, usize, usize),
}

impl Op {
    fn inputs(&self) -> Vec<Value> {
        match self {
            Op::Leaf => vec![],
            Op::Matmul(a, b) | Op::Add(a, b) | Op::Mul(a, b) => vec![a.clone(), b.clone()],
            Op::Concat(xs, _) => xs.clone(),
            Op::Sigmoid(x)
            | Op::Tanh(x)
            | Op::Relu(x)
            | Op::Softmax(x)
            | Op::Log(x)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::Embedding(x, _)
            | Op::Slice(x, _, _) => vec![x.clone()],
        }
    }

    fn into_inputs(self) -> Vec<Value> {
        match self {
            Op::Leaf => vec![],
            Op::Matmul(a, b) | Op::Add(a, b) | Op::Mul(a, b) => vec![a, b],
            Op::Concat(xs, _) => xs,
            Op::Sigmoid(x)
            | Op::Tanh(x)
            | Op::Relu(x)
            | Op::Softmax(x)
            | Op::Log(x)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::Embedding(x, _)
            | Op::Slice(x, _, _) => vec![x],
        }
    }
}

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<f32>>,
    grad: RefCell<Vec<f32>>,
    requires_grad: bool,
    op: RefCell<Op>,
}

/// Handle to a node in the computation graph. Cloning is cheap and shares
/// the node. Graphs are confined to a single thread of control.
pub struct Value {
    inner: Rc<Inner>,
}

impl Clone for Value {
    fn clone(&self) -> Self {
        Value {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl std::fmt::Debug for Value {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Value")
            .field("id", &self.inner.id)
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

impl Drop for Value {
    // Long op chains would otherwise tear down by recursion and overflow
    // the (small) default test-thread stack.
    fn drop(&mut self) {
        if Rc::strong_count(&self.inner) != 1 {
            return;
        }
        let mut work = vec![self.inner.op.replace(Op::Leaf)];
        while let Some(op) = work.pop() {
            for v in op.into_inputs() {
                if Rc::strong_count(&v.inner) == 1 {
                    work.push(v.inner.op.replace(Op::Leaf));
                }
            }
        }
    }
}

impl Value {
    fn new(tensor: Tensor, requires_grad: bool, op: Op) -> Value {
        let n = tensor.numel();
        Value {
            inner: Rc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape: tensor.shape,
                data: RefCell::new(tensor.data),
                grad: RefCell::new(vec![0.0; n]),
                requires_grad,
                op: RefCell::new(op),
            }),
        }
    }

    fn interior(tensor: Tensor, op: Op) -> Value {
        let requires = op.inputs().iter().any(|v| v.requires_grad());
        Value::new(tensor, requires, op)
    }

    /// Leaf that participates in gradient computation (a parameter).
    pub fn parameter(tensor: Tensor) -> Value {
        Value::new(tensor, true, Op::Leaf)
    }

    /// Leaf excluded from gradient computation.
    pub fn constant(tensor: Tensor) -> Value {
        Value::new(tensor, false, Op::Leaf)
    }

    pub fn scalar(x: f32) -> Value {
        Value::constant(Tensor::scalar(x))
    }

    pub fn zeros(shape: &[usize]) -> Value {
        Value::constant(Tensor::zeros(shape))
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn data(&self) -> Ref<'_, Vec<f32>> {
        self.inner.data.borrow()
    }

    /// Mutable access to leaf data (optimizer updates). Interior nodes are
    /// never mutated after construction.
    pub fn data_mut(&self) -> RefMut<'_, Vec<f32>> {
        self.inner.data.borrow_mut()
    }

    pub fn grad(&self) -> Ref<'_, Vec<f32>> {
        self.inner.grad.borrow()
    }

    pub fn zero_grad(&self) {
        for g in self.inner.grad.borrow_mut().iter_mut() {
            *g = 0.0;
        }
    }

    /// The single element of a scalar-shaped node.
    pub fn item(&self) -> f32 {
        let d = self.data();
        assert_eq!(d.len(), 1, "item() on non-scalar shape {:?}", self.shape());
        d[0]
    }

    pub(crate) fn op_inputs(&self) -> Vec<Value> {
        self.inner.op.borrow().inputs()
    }

    pub(crate) fn with_op<R>(&self, f: impl FnOnce(&Op) -> R) -> R {
        f(&self.inner.op.borrow())
    }

    // ---- forward ops -------------------------------------------------

    pub fn matmul(&self, rhs: &Value) -> Result<Value> {
        let (m, k, n, out_shape) =
            matmul_dims(self.shape(), rhs.shape()).ok_or_else(|| Error::Shape {
                op: "matmul",
                lhs: self.shape().to_vec(),
                rhs: rhs.shape().to_vec(),
            })?;
        let mut out = vec![0.0; m * n];
        gemm_nn_acc(&mut out, &self.data(), &rhs.data(), m, k, n);
        Ok(Value::interior(
            Tensor::new(out, out_shape),
            Op::Matmul(self.clone(), rhs.clone()),
        ))
    }

    pub fn add(&self, rhs: &Value) -> Result<Value> {
        let out_shape = broadcast_shape(self.shape(), rhs.shape()).ok_or_else(|| Error::Shape {
            op: "add",
            lhs: self.shape().to_vec(),
            rhs: rhs.shape().to_vec(),
        })?;
        let a = self.data();
        let b = rhs.data();
        let out: Vec<f32> = if a.len() == b.len() {
            a.iter().zip(b.iter()).map(|(x, y)| x + y).collect()
        } else if a.len() == 1 {
            b.iter().map(|y| a[0] + y).collect()
        } else {
            a.iter().map(|x| x + b[0]).collect()
        };
        drop(a);
        drop(b);
        Ok(Value::interior(
            Tensor::new(out, out_shape),
            Op::Add(self.clone(), rhs.clone()),
        ))
    }

    pub fn mul(&self, rhs: &Value) -> Result<Value> {
        let out_shape = broadcast_shape(self.shape(), rhs.shape()).ok_or_else(|| Error::Shape {
            op: "mul",
            lhs: self.shape().to_vec(),
            rhs: rhs.shape().to_vec(),
        })?;
        let a = self.data();
        let b = rhs.data();
        let out: Vec<f32> = if a.len() == b.len() {
            a.iter().zip(b.iter()).map(|(x, y)| x * y).collect()
        } else if a.len() == 1 {
            b.iter().map(|y| a[0] * y).collect()
        } else {
            a.iter().map(|x| x * b[0]).collect()
        };
        drop(a);
        drop(b);
        Ok(Value::interior(
            Tensor::new(out, out_shape),
            Op::Mul(self.clone(), rhs.clone()),
        ))
    }

    /// Concatenate along `axis`. Rank-1 inputs support axis 0; rank-2
    /// inputs support axis 0 (rows) and axis 1 (columns).
    pub fn concat(inputs: &[Value], axis: usize) -> Result<Value> {
        if inputs.is_empty() {
            return Err(Error::Domain {
                op: "concat",
                detail: "no inputs".into(),
            });
        }
        let rank = inputs[0].shape().len();
        let shape_err = || Error::Shape {
            op: "concat",
            lhs: inputs[0].shape().to_vec(),
            rhs: inputs
                .iter()
                .find(|v| v.shape().len() != rank)
                .map(|v| v.shape().to_vec())
                .unwrap_or_default(),
        };
        if axis >= rank || inputs.iter().any(|v| v.shape().len() != rank) {
            return Err(shape_err());
        }
        let out = if axis == 0 {
            // Row-major: axis-0 concat is contiguous for both ranks.
            let trailing: Vec<usize> = inputs[0].shape()[1..].to_vec();
            for v in inputs {
                if v.shape()[1..] != trailing[..] {
                    return Err(Error::Shape {
                        op: "concat",
                        lhs: inputs[0].shape().to_vec(),
                        rhs: v.shape().to_vec(),
                    });
                }
            }
            let dim0: usize = inputs.iter().map(|v| v.shape()[0]).sum();
            let mut shape = vec![dim0];
            shape.extend_from_slice(&trailing);
            let mut data = Vec::with_capacity(shape.iter().product());
            for v in inputs {
                data.extend_from_slice(&v.data());
            }
            Tensor::new(data, shape)
        } else {
            let rows = inputs[0].shape()[0];
            for v in inputs {
                if v.shape()[0] != rows {
                    return Err(Error::Shape {
                        op: "concat",
                        lhs: inputs[0].shape().to_vec(),
                        rhs: v.shape().to_vec(),
                    });
                }
            }
            let cols: usize = inputs.iter().map(|v| v.shape()[1]).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for v in inputs {
                    let c = v.shape()[1];
                    data.extend_from_slice(&v.data()[r * c..(r + 1) * c]);
                }
            }
            Tensor::new(data, vec![rows, cols])
        };
        Ok(Value::interior(out, Op::Concat(inputs.to_vec(), axis)))
    }

    pub fn sigmoid(&self) -> Result<Value> {
        let out: Vec<f32> = self.data().iter().map(|&x| sigmoid_f32(x)).collect();
        Ok(Value::interior(
            Tensor::new(out, self.shape().to_vec()),
            Op::Sigmoid(self.clone()),
        ))
    }

    pub fn tanh(&self) -> Result<Value> {
        let out: Vec<f32> = self.data().iter().map(|&x| x.tanh()).collect();
        Ok(Value::interior(
            Tensor::new(out, self.shape().to_vec()),
            Op::Tanh(self.clone()),
        ))
    }

    pub fn relu(&self) -> Result<Value> {
        let out: Vec<f32> = self.data().iter().map(|&x| x.max(0.0)).collect();
        Ok(Value::interior(
            Tensor::new(out, self.shape().to_vec()),
            Op::Relu(self.clone()),
        ))
    }

    /// Numerically stable softmax over a rank-1 vector (max subtraction).
    pub fn softmax(&self) -> Result<Value> {
        if self.shape().len() != 1 {
            return Err(Error::Shape {
                op: "softmax",
                lhs: self.shape().to_vec(),
                rhs: vec![],
            });
        }
        let d = self.data();
        let max = d.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let exps: Vec<f32> = d.iter().map(|&x| (x - max).exp()).collect();
        let total: f32 = exps.iter().sum();
        let out: Vec<f32> = exps.iter().map(|e| e / total).collect();
        drop(d);
        Ok(Value::interior(
            Tensor::new(out, self.shape().to_vec()),
            Op::Softmax(self.clone()),
        ))
    }

    pub fn log(&self) -> Result<Value> {
        {
            let d = self.data();
            if let Some((i, &x)) = d.iter().enumerate().find(|(_, &x)| x <= 0.0) {
                return Err(Error::Domain {
                    op: "log",
                    detail: format!("non-positive entry {x} at index {i}"),
                });
            }
        }
        let out: Vec<f32> = self.data().iter().map(|&x| x.ln()).collect();
        Ok(Value::interior(
            Tensor::new(out, self.shape().to_vec()),
            Op::Log(self.clone()),
        ))
    }

    pub fn sum(&self) -> Result<Value> {
        let s: f32 = self.data().iter().sum();
        Ok(Value::interior(Tensor::scalar(s), Op::Sum(self.clone())))
    }

    pub fn mean(&self) -> Result<Value> {
        let n = self.numel() as f32;
        let s: f32 = self.data().iter().sum();
        Ok(Value::interior(Tensor::scalar(s / n), Op::Mean(self.clone())))
    }

    /// Gather rows of an embedding table. A single id yields a rank-1
    /// vector, several ids a rank-2 matrix of rows.
    pub fn embedding_lookup(&self, ids: &[usize]) -> Result<Value> {
        if self.shape().len() != 2 {
            return Err(Error::Shape {
                op: "embedding_lookup",
                lhs: self.shape().to_vec(),
                rhs: vec![ids.len()],
            });
        }
        let (v, e) = (self.shape()[0], self.shape()[1]);
        if ids.is_empty() || ids.iter().any(|&i| i >= v) {
            return Err(Error::Domain {
                op: "embedding_lookup",
                detail: format!("ids {ids:?} out of range for table with {v} rows"),
            });
        }
        let d = self.data();
        let mut out = Vec::with_capacity(ids.len() * e);
        for &i in ids {
            out.extend_from_slice(&d[i * e..(i + 1) * e]);
        }
        drop(d);
        let shape = if ids.len() == 1 {
            vec![e]
        } else {
            vec![ids.len(), e]
        };
        Ok(Value::interior(
            Tensor::new(out, shape),
            Op::Embedding(self.clone(), ids.to_vec()),
        ))
    }

    /// Contiguous slice along the leading axis, rank-preserving.
    pub fn slice(&self, start: usize, len: usize) -> Result<Value> {
        let dim0 = self.shape()[0];
        if len == 0 || start + len > dim0 {
            return Err(Error::Shape {
                op: "slice",
                lhs: self.shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        let row = self.numel() / dim0;
        let out = self.data()[start * row..(start + len) * row].to_vec();
        let mut shape = self.shape().to_vec();
        shape[0] = len;
        Ok(Value::interior(
            Tensor::new(out, shape),
            Op::Slice(self.clone(), start, len),
        ))
    }

    // ---- backward ----------------------------------------------------

    /// Reverse-mode sweep from a scalar root. Gradients accumulate (`+=`)
    /// into every reachable leaf with `requires_grad`; callers zero them
    /// between optimization steps.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NonScalarBackward {
                shape: self.shape().to_vec(),
            });
        }
        let order = self.topo_order();
        self.inner.grad.borrow_mut()[0] += 1.0;
        for node in order.iter().rev() {
            node.backprop_one();
        }
        Ok(())
    }

    /// Post-order over the requires-grad subgraph: inputs before outputs.
    fn topo_order(&self) -> Vec<Value> {
        let mut order = Vec::new();
        if !self.requires_grad() {
            return order;
        }
        let mut visited: HashSet<u64> = HashSet::new();
        let mut stack: Vec<(Value, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(node.id()) {
                continue;
            }
            stack.push((node.clone(), true));
            for input in node.op_inputs() {
                if input.requires_grad() && !visited.contains(&input.id()) {
                    stack.push((input, false));
                }
            }
        }
        order
    }

    fn backprop_one(&self) {
        let g = self.inner.grad.borrow().clone();
        let op = self.inner.op.borrow();
        match &*op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (m, k, n, _) = matmul_dims(a.shape(), b.shape()).expect("checked at forward");
                if a.requires_grad() {
                    gemm_nt_acc(&mut a.inner.grad.borrow_mut(), &g, &b.data(), m, n, k);
                }
                if b.requires_grad() {
                    gemm_tn_acc(&mut b.inner.grad.borrow_mut(), &a.data(), &g, m, k, n);
                }
            }
            Op::Add(a, b) => {
                for side in [a, b] {
                    if !side.requires_grad() {
                        continue;
                    }
                    let mut sg = side.inner.grad.borrow_mut();
                    if sg.len() == g.len() {
                        for (dst, &src) in sg.iter_mut().zip(g.iter()) {
                            *dst += src;
                        }
                    } else {
                        sg[0] += g.iter().sum::<f32>();
                    }
                }
            }
            Op::Mul(a, b) => {
                for (side, other) in [(a, b), (b, a)] {
                    if !side.requires_grad() {
                        continue;
                    }
                    let od = other.data();
                    let mut sg = side.inner.grad.borrow_mut();
                    if sg.len() == g.len() {
                        if od.len() == g.len() {
                            for i in 0..g.len() {
                                sg[i] += g[i] * od[i];
                            }
                        } else {
                            for i in 0..g.len() {
                                sg[i] += g[i] * od[0];
                            }
                        }
                    } else {
                        // side is the scalar operand
                        let mut acc = 0.0f32;
                        for i in 0..g.len() {
                            acc += g[i] * od[i];
                        }
                        sg[0] += acc;
                    }
                }
            }
            Op::Concat(xs, axis) => {
                if *axis == 0 {
                    let mut offset = 0usize;
                    for x in xs {
                        let n = x.numel();
                        if x.requires_grad() {
                            let mut xg = x.inner.grad.borrow_mut();
                            for i in 0..n {
                                xg[i] += g[offset + i];
                            }
                        }
                        offset += n;
                    }
                } else {
                    let rows = self.shape()[0];
                    let out_cols = self.shape()[1];
                    let mut col_offset = 0usize;
                    for x in xs {
                        let c = x.shape()[1];
                        if x.requires_grad() {
                            let mut xg = x.inner.grad.borrow_mut();
                            for r in 0..rows {
                                for j in 0..c {
                                    xg[r * c + j] += g[r * out_cols + col_offset + j];
                                }
                            }
                        }
                        col_offset += c;
                    }
                }
            }
            Op::Sigmoid(x) => {
                if x.requires_grad() {
                    let y = self.data();
                    let mut xg = x.inner.grad.borrow_mut();
                    for i in 0..g.len() {
                        xg[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                }
            }
            Op::Tanh(x) => {
                if x.requires_grad() {
                    let y = self.data();
                    let mut xg = x.inner.grad.borrow_mut();
                    for i in 0..g.len() {
                        xg[i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                }
            }
            Op::Relu(x) => {
                if x.requires_grad() {
                    let xd = x.data();
                    let mut xg = x.inner.grad.borrow_mut();
                    for i in 0..g.len() {
                        if xd[i] > 0.0 {
                            xg[i] += g[i];
                        }
                    }
                }
            }
            Op::Softmax(x) => {
                if x.requires_grad() {
                    let y = self.data();
                    let dot: f32 = y.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
                    let mut xg = x.inner.grad.borrow_mut();
                    for i in 0..g.len() {
                        xg[i] += y[i] * (g[i] - dot);
                    }
                }
            }
            Op::Log(x) => {
                if x.requires_grad() {
                    let xd = x.data();
                    let mut xg = x.inner.grad.borrow_mut();
                    for i in 0..g.len() {
                        xg[i] += g[i] / xd[i];
                    }
                }
            }
            Op::Sum(x) => {
                if x.requires_grad() {
                    let mut xg = x.inner.grad.borrow_mut();
                    for v in xg.iter_mut() {
                        *v += g[0];
                    }
                }
            }
            Op::Mean(x) => {
                if x.requires_grad() {
                    let scale = g[0] / x.numel() as f32;
                    let mut xg = x.inner.grad.borrow_mut();
                    for v in xg.iter_mut() {
                        *v += scale;
                    }
                }
            }
            Op::Embedding(table, ids) => {
                if table.requires_grad() {
                    let e = table.shape()[1];
                    let mut tg = table.inner.grad.borrow_mut();
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..e {
                            tg[id * e + j] += g[r * e + j];
                        }
                    }
                }
            }
            Op::Slice(x, start, _) => {
                if x.requires_grad() {
                    let row = x.numel() / x.shape()[0];
                    let mut xg = x.inner.grad.borrow_mut();
                    for i in 0..g.len() {
                        xg[start * row + i] += g[i];
                    }
                }
            }
        }
    }
}

fn sigmoid_f32(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Effective (m, k, n, out_shape) for the supported matmul rank patterns.
fn matmul_dims(lhs: &[usize], rhs: &[usize]) -> Option<(usize, usize, usize, Vec<usize>)> {
    match (lhs, rhs) {
        ([m, k], [k2, n]) if k == k2 => Some((*m, *k, *n, vec![*m, *n])),
        ([k], [k2, n]) if k == k2 => Some((1, *k, *n, vec![*n])),
        ([m, k], [k2]) if k == k2 => Some((*m, *k, 1, vec![*m])),
        ([k], [k2]) if k == k2 => Some((1, *k, 1, vec![1])),
        _ => None,
    }
}

fn broadcast_shape(lhs: &[usize], rhs: &[usize]) -> Option<Vec<usize>> {
    let ln: usize = lhs.iter().product();
    let rn: usize = rhs.iter().product();
    if lhs == rhs {
        Some(lhs.to_vec())
    } else if ln == 1 {
        Some(rhs.to_vec())
    } else if rn == 1 {
        Some(lhs.to_vec())
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_value(data: Vec<f32>, requires_grad: bool) -> Value {
        let n = data.len();
        Value::new(Tensor::new(data, vec![n]), requires_grad, Op::Leaf)
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let x = vec_value(vec![0.0, 0.0, 0.0], false);
        let y = x.softmax().unwrap();
        for &p in y.data().iter() {
            assert!((p - 1.0 / 3.0).abs() < 1e-7);
        }
    }

    #[test]
    fn matmul_identity_preserves_matrix() {
        let eye = Value::constant(Tensor::new(
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            vec![3, 3],
        ));
        let a = Value::constant(Tensor::new(
            vec![2.0, -1.0, 0.5, 3.0, 4.0, -2.0, 0.0, 1.5, 7.0],
            vec![3, 3],
        ));
        let out = eye.matmul(&a).unwrap();
        assert_eq!(*out.data(), *a.data());
    }

    #[test]
    fn sigmoid_matches_high_precision_scalar() {
        // 1/(1+e^{-0.5}) evaluated in f64
        let expected = 1.0f64 / (1.0 + (-0.5f64).exp());
        let x = vec_value(vec![0.5], false);
        let y = x.sigmoid().unwrap();
        assert!((y.item() as f64 - expected).abs() < 1e-7);
        assert!((y.item() - 0.622_459_33).abs() < 1e-7);
    }

    #[test]
    fn sum_backward_is_all_ones() {
        let x = vec_value(vec![1.0, -2.0, 5.0, 0.25], true);
        let root = x.sum().unwrap();
        root.backward().unwrap();
        assert_eq!(*x.grad(), vec![1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_backward_doubles() {
        let x = vec_value(vec![3.0], true);
        let root = x.mul(&x).unwrap();
        root.backward().unwrap();
        assert_eq!(x.grad()[0], 6.0);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let x = vec_value(vec![1.0, 2.0], true);
        let y = x.add(&x).unwrap();
        assert!(matches!(
            y.backward(),
            Err(Error::NonScalarBackward { .. })
        ));
    }

    #[test]
    fn log_rejects_non_positive() {
        let x = vec_value(vec![0.5, -1.0], false);
        match x.log() {
            Err(Error::Domain { op, detail }) => {
                assert_eq!(op, "log");
                assert!(detail.contains("index 1"));
            }
            other => panic!("expected domain error, got {other:?}"),
        }
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let a = Value::constant(Tensor::new(vec![0.0; 6], vec![2, 3]));
        let b = Value::constant(Tensor::new(vec![0.0; 4], vec![2, 2]));
        match a.matmul(&b) {
            Err(Error::Shape { op, lhs, rhs }) => {
                assert_eq!(op, "matmul");
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 2]);
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn fan_out_accumulates_gradients() {
        // y = x*x + x  =>  dy/dx = 2x + 1 = 7 at x = 3
        let x = vec_value(vec![3.0], true);
        let sq = x.mul(&x).unwrap();
        let y = sq.add(&x).unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad()[0], 7.0);
    }

    #[test]
    fn scalar_broadcast_add_mul() {
        let x = vec_value(vec![1.0, 2.0, 3.0], true);
        let c = Value::scalar(2.0);
        let y = x.mul(&c).unwrap().add(&Value::scalar(1.0)).unwrap();
        assert_eq!(*y.data(), vec![3.0, 5.0, 7.0]);
        let root = y.sum().unwrap();
        root.backward().unwrap();
        assert_eq!(*x.grad(), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn concat_axis1_roundtrip_via_slice_grads() {
        let a = Value::parameter(Tensor::new(vec![1.0, 2.0, 3.0, 4.0], vec![2, 2]));
        let b = Value::parameter(Tensor::new(vec![5.0, 6.0], vec![2, 1]));
        let cat = Value::concat(&[a.clone(), b.clone()], 1).unwrap();
        assert_eq!(cat.shape(), &[2, 3]);
        assert_eq!(*cat.data(), vec![1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let root = cat.sum().unwrap();
        root.backward().unwrap();
        assert_eq!(*a.grad(), vec![1.0; 4]);
        assert_eq!(*b.grad(), vec![1.0; 2]);
    }

    #[test]
    fn embedding_lookup_gathers_and_scatters() {
        let table = Value::parameter(Tensor::new(
            vec![0.0, 1.0, 10.0, 11.0, 20.0, 21.0],
            vec![3, 2],
        ));
        let row = table.embedding_lookup(&[2]).unwrap();
        assert_eq!(*row.data(), vec![20.0, 21.0]);
        assert_eq!(row.shape(), &[2]);
        let two = table.embedding_lookup(&[1, 1]).unwrap();
        assert_eq!(two.shape(), &[2, 2]);
        let root = two.sum().unwrap();
        root.backward().unwrap();
        assert_eq!(*table.grad(), vec![0.0, 0.0, 2.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn deep_chain_drops_without_overflow() {
        let mut v = vec_value(vec![1.0], false);
        for _ in 0..200_000 {
            v = v.add(&Value::scalar(0.0)).unwrap();
        }
        drop(v);
    }

    #[test]
    fn forward_is_deterministic() {
        let build = || {
            let x = vec_value(vec![0.3, -0.7, 1.9], false);
            let y = x.tanh().unwrap().softmax().unwrap();
            let out = y.data().clone();
            out
        };
        let a = build();
        let b = build();
        for (p, q) in a.iter().zip(b.iter()) {
            assert_eq!(p.to_bits(), q.to_bits());
        }
    }
}
