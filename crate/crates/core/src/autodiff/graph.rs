//! Define-by-run tape. Every forward call appends a node holding its output
//! value; `gradients` walks the nodes once in reverse order.

use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use super::tensor::{numel, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kinds supported by [`Graph::apply`].
///
/// Binary arithmetic broadcasts with numpy rules. Pooling, interpolation and
/// softmax act on the last axis.
#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    MatMul,
    Add,
    Sub,
    Mul,
    Scale(f64),
    AddScalar(f64),
    Relu,
    Elu,
    Sigmoid,
    Tanh,
    Abs,
    Softmax,
    MaxPool1d { kernel: usize },
    Interp1d { len: usize },
    Concat { axis: usize },
    Slice { axis: usize, start: usize, len: usize },
    Reshape(Vec<usize>),
    Permute(Vec<usize>),
    Sum,
    Mean,
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Scale(_) => "scale",
            OpKind::AddScalar(_) => "add_scalar",
            OpKind::Relu => "relu",
            OpKind::Elu => "elu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Tanh => "tanh",
            OpKind::Abs => "abs",
            OpKind::Softmax => "softmax",
            OpKind::MaxPool1d { .. } => "max_pool_1d",
            OpKind::Interp1d { .. } => "interp_1d",
            OpKind::Concat { .. } => "concat",
            OpKind::Slice { .. } => "slice",
            OpKind::Reshape(_) => "reshape",
            OpKind::Permute(_) => "permute",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
        }
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Input,
    Param,
    MatMul,
    Add,
    Sub,
    Mul,
    Scale(T),
    AddScalar,
    Relu,
    Elu,
    Sigmoid,
    Tanh,
    Abs,
    Softmax,
    /// Flat input index chosen by each output element.
    MaxPool1d(Vec<usize>),
    Interp1d { from: usize },
    Concat { axis: usize },
    Slice { axis: usize, start: usize },
    Reshape,
    Permute(Vec<usize>),
    Sum,
    Mean,
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    inputs: Vec<usize>,
    needs_grad: bool,
}

/// Operation record for one forward pass.
#[derive(Debug)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    param_leaves: HashMap<ParamId, Var>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Adjoint of every node with respect to one scalar loss.
#[derive(Debug)]
pub struct Gradients<T> {
    adjoints: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// `None` when the loss does not depend on `v` or `v` does not require grad.
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.adjoints.get(v.0).and_then(|a| a.as_deref())
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_leaves: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: Vec<usize>) -> Var {
        let needs_grad = match op {
            Op::Input => value.requires_grad(),
            Op::Param => true,
            _ => inputs.iter().any(|&i| self.nodes[i].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            inputs,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf holding `t`. Gradients are tracked only when `t.requires_grad()`.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Input, vec![])
    }

    pub fn constant(&mut self, shape: Vec<usize>, values: Vec<T>) -> Result<Var> {
        Ok(self.input(Tensor::new(shape, values)?))
    }

    /// Leaf bound to a parameter of `store`. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.param_leaves.get(&id) {
            return v;
        }
        let src = store.get(id);
        let t = Tensor::from_parts(src.shape().to_vec(), src.values().to_vec());
        let v = self.push(t, Op::Param, vec![]);
        self.param_leaves.insert(id, v);
        v
    }

    /// Dispatches on `kind`. Binary kinds take two inputs, `Concat` any
    /// nonzero number, everything else one.
    pub fn apply(&mut self, kind: &OpKind, inputs: &[Var]) -> Result<Var> {
        let arity = |n: usize| -> Result<()> {
            if inputs.len() == n {
                Ok(())
            } else {
                Err(Error::InvalidOp {
                    op: kind.name(),
                    msg: format!("expected {n} inputs, got {}", inputs.len()),
                })
            }
        };
        match kind {
            OpKind::MatMul => {
                arity(2)?;
                self.matmul(inputs[0], inputs[1])
            }
            OpKind::Add => {
                arity(2)?;
                self.add(inputs[0], inputs[1])
            }
            OpKind::Sub => {
                arity(2)?;
                self.sub(inputs[0], inputs[1])
            }
            OpKind::Mul => {
                arity(2)?;
                self.mul(inputs[0], inputs[1])
            }
            OpKind::Concat { axis } => self.concat(inputs, *axis),
            other => {
                arity(1)?;
                let x = inputs[0];
                match other {
                    OpKind::Scale(c) => Ok(self.scale(x, T::lit(*c))),
                    OpKind::AddScalar(c) => Ok(self.add_scalar(x, T::lit(*c))),
                    OpKind::Relu => Ok(self.relu(x)),
                    OpKind::Elu => Ok(self.elu(x)),
                    OpKind::Sigmoid => Ok(self.sigmoid(x)),
                    OpKind::Tanh => Ok(self.tanh(x)),
                    OpKind::Abs => Ok(self.abs(x)),
                    OpKind::Softmax => self.softmax(x),
                    OpKind::MaxPool1d { kernel } => self.max_pool1d(x, *kernel),
                    OpKind::Interp1d { len } => self.interp1d(x, *len),
                    OpKind::Slice { axis, start, len } => self.slice(x, *axis, *start, *len),
                    OpKind::Reshape(shape) => self.reshape(x, shape.clone()),
                    OpKind::Permute(axes) => self.permute(x, axes),
                    OpKind::Sum => Ok(self.sum(x)),
                    OpKind::Mean => Ok(self.mean(x)),
                    _ => unreachable!(),
                }
            }
        }
    }

    /// `[m,k]x[k,n]`, `[b,m,k]x[k,n]` (shared right operand) or `[b,m,k]x[b,k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let (batch, m, k, n, out_shape) = matmul_dims(&sa, &sb)?;
        let av = self.value(a).values();
        let bv = self.value(b).values();
        let mut out = vec![T::zero(); batch * m * n];
        let b_batched = sb.len() == 3;
        for i in 0..batch {
            let a_blk = &av[i * m * k..(i + 1) * m * k];
            let b_blk = if b_batched {
                &bv[i * k * n..(i + 1) * k * n]
            } else {
                bv
            };
            gemm_nn(a_blk, b_blk, &mut out[i * m * n..(i + 1) * m * n], m, k, n);
        }
        Ok(self.push(
            Tensor::from_parts(out_shape, out),
            Op::MatMul,
            vec![a.0, b.0],
        ))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        op: Op<T>,
        f: impl Fn(T, T) -> T,
    ) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let out_shape = broadcast_shape(&sa, &sb).ok_or(Error::Shape {
            op: name,
            lhs: sa.clone(),
            rhs: sb.clone(),
        })?;
        let ia = broadcast_index(&sa, &out_shape);
        let ib = broadcast_index(&sb, &out_shape);
        let av = self.value(a).values();
        let bv = self.value(b).values();
        let n = numel(&out_shape);
        let out: Vec<T> = (0..n)
            .map(|o| f(av[map_idx(&ia, o)], bv[map_idx(&ib, o)]))
            .collect();
        Ok(self.push(Tensor::from_parts(out_shape, out), op, vec![a.0, b.0]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", Op::Add, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", Op::Sub, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", Op::Mul, |x, y| x * y)
    }

    fn unary(&mut self, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let src = self.value(x);
        let out = src.values().iter().map(|&v| f(v)).collect();
        let shape = src.shape().to_vec();
        self.push(Tensor::from_parts(shape, out), op, vec![x.0])
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        self.unary(x, Op::Scale(c), |v| v * c)
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        self.unary(x, Op::AddScalar, |v| v + c)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -T::one())
    }

    /// `1 - x`.
    pub fn one_minus(&mut self, x: Var) -> Var {
        let n = self.neg(x);
        self.add_scalar(n, T::one())
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu, |v| if v > T::zero() { v } else { T::zero() })
    }

    pub fn elu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Elu, |v| {
            if v > T::zero() {
                v
            } else {
                v.exp() - T::one()
            }
        })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid, sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh, |v| v.tanh())
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, Op::Abs, |v| v.abs())
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let src = self.value(x);
        let shape = src.shape().to_vec();
        let d = *shape.last().ok_or(Error::InvalidOp {
            op: "softmax",
            msg: "rank-0 input".into(),
        })?;
        let mut out = src.values().to_vec();
        if d > 0 {
            for row in out.chunks_mut(d) {
                softmax_in_place(row);
            }
        }
        Ok(self.push(Tensor::from_parts(shape, out), Op::Softmax, vec![x.0]))
    }

    /// Non-overlapping max pooling over the last axis; a short trailing
    /// window is kept, so the output length is `ceil(len / kernel)`.
    pub fn max_pool1d(&mut self, x: Var, kernel: usize) -> Result<Var> {
        let src = self.value(x);
        let shape = src.shape().to_vec();
        let len = *shape.last().unwrap_or(&0);
        if kernel == 0 || len == 0 {
            return Err(Error::InvalidOp {
                op: "max_pool_1d",
                msg: format!("kernel {kernel} over last axis of shape {shape:?}"),
            });
        }
        let out_len = len.div_ceil(kernel);
        let rows = src.len() / len;
        let vals = src.values();
        let mut out = Vec::with_capacity(rows * out_len);
        let mut argmax = Vec::with_capacity(rows * out_len);
        for r in 0..rows {
            let base = r * len;
            for w in 0..out_len {
                let lo = base + w * kernel;
                let hi = (lo + kernel).min(base + len);
                let mut best = lo;
                for i in lo + 1..hi {
                    if vals[i] > vals[best] {
                        best = i;
                    }
                }
                out.push(vals[best]);
                argmax.push(best);
            }
        }
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = out_len;
        Ok(self.push(
            Tensor::from_parts(out_shape, out),
            Op::MaxPool1d(argmax),
            vec![x.0],
        ))
    }

    /// Endpoint-aligned linear interpolation of the last axis to `len` points.
    pub fn interp1d(&mut self, x: Var, len: usize) -> Result<Var> {
        let src = self.value(x);
        let shape = src.shape().to_vec();
        let from = *shape.last().unwrap_or(&0);
        if from == 0 || len == 0 {
            return Err(Error::InvalidOp {
                op: "interp_1d",
                msg: format!("cannot resample last axis of {shape:?} to {len}"),
            });
        }
        let weights = interp_weights(from, len);
        let rows = src.len() / from;
        let vals = src.values();
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            let row = &vals[r * from..(r + 1) * from];
            for &(i0, t) in &weights {
                let v = if t == 0.0 {
                    row[i0]
                } else {
                    let t = T::lit(t);
                    row[i0] * (T::one() - t) + row[i0 + 1] * t
                };
                out.push(v);
            }
        }
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = len;
        Ok(self.push(
            Tensor::from_parts(out_shape, out),
            Op::Interp1d { from },
            vec![x.0],
        ))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs.first().ok_or(Error::InvalidOp {
            op: "concat",
            msg: "no inputs".into(),
        })?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::InvalidOp {
                op: "concat",
                msg: format!("axis {axis} out of range for {base:?}"),
            });
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: base.clone(),
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let t = self.value(v);
                let blk = t.shape()[axis] * inner;
                out.extend_from_slice(&t.values()[o * blk..(o + 1) * blk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Concat { axis },
            xs.iter().map(|v| v.0).collect(),
        ))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::InvalidOp {
                op: "slice",
                msg: format!("range {start}..{} on axis {axis} of {shape:?}", start + len),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let vals = self.value(x).values();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let off = o * shape[axis] * inner + start * inner;
            out.extend_from_slice(&vals[off..off + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        Ok(self.push(
            Tensor::from_parts(out_shape, out),
            Op::Slice { axis, start },
            vec![x.0],
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let src = self.value(x);
        if numel(&shape) != src.len() {
            return Err(Error::Shape {
                op: "reshape",
                lhs: src.shape().to_vec(),
                rhs: shape,
            });
        }
        let vals = src.values().to_vec();
        Ok(self.push(Tensor::from_parts(shape, vals), Op::Reshape, vec![x.0]))
    }

    /// Output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        let valid = axes.len() == shape.len()
            && axes
                .iter()
                .all(|&a| a < shape.len() && !std::mem::replace(&mut seen[a], true));
        if !valid {
            return Err(Error::InvalidOp {
                op: "permute",
                msg: format!("axes {axes:?} do not permute shape {shape:?}"),
            });
        }
        let (out_shape, map) = permute_map(&shape, axes);
        let vals = self.value(x).values();
        let out = map.iter().map(|&i| vals[i]).collect();
        Ok(self.push(
            Tensor::from_parts(out_shape, out),
            Op::Permute(axes.to_vec()),
            vec![x.0],
        ))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let r = self.shape(x).len();
        if r < 2 {
            return Err(Error::InvalidOp {
                op: "permute",
                msg: format!("transpose needs rank >= 2, got {r}"),
            });
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 1, r - 2);
        self.permute(x, &axes)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: T = self.value(x).values().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum, vec![x.0])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let n = T::lit(t.len().max(1) as f64);
        let s: T = t.values().iter().copied().sum();
        self.push(Tensor::scalar(s / n), Op::Mean, vec![x.0])
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn gradients(&self, loss: Var) -> Result<Gradients<T>> {
        let root = &self.nodes[loss.0];
        if root.value.len() != 1 {
            return Err(Error::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut adj: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        if !root.needs_grad {
            return Ok(Gradients { adjoints: adj });
        }
        adj[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || adj[i].is_none() {
                continue;
            }
            if matches!(node.op, Op::Input | Op::Param) {
                continue;
            }
            let g = adj[i].take().unwrap();
            self.backprop_node(node, &g, &mut adj);
        }
        Ok(Gradients { adjoints: adj })
    }

    /// Adds d`loss`/d`param` into every bound parameter's gradient buffer.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (&id, &v) in &self.param_leaves {
            match grads.wrt(v) {
                Some(g) => store.get_mut(id).accumulate_grad(g),
                None => {
                    store.get_mut(id).grad_mut();
                }
            }
        }
        Ok(())
    }

    fn backprop_node(&self, node: &Node<T>, g: &[T], adj: &mut [Option<Vec<T>>]) {
        let inp = |k: usize| &self.nodes[node.inputs[k]];
        let wants = |k: usize| self.nodes[node.inputs[k]].needs_grad;
        let out = node.value.values();
        match &node.op {
            Op::Input | Op::Param => {}
            Op::MatMul => {
                let (a, b) = (inp(0), inp(1));
                let sa = a.value.shape();
                let sb = b.value.shape();
                let (batch, m, k, n, _) = matmul_dims(sa, sb).expect("validated in forward");
                let b_batched = sb.len() == 3;
                if wants(0) {
                    let mut da = vec![T::zero(); a.value.len()];
                    let bv = b.value.values();
                    for i in 0..batch {
                        let b_blk = if b_batched {
                            &bv[i * k * n..(i + 1) * k * n]
                        } else {
                            bv
                        };
                        gemm_nt(
                            &g[i * m * n..(i + 1) * m * n],
                            b_blk,
                            &mut da[i * m * k..(i + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                    }
                    accumulate(adj, node.inputs[0], da);
                }
                if wants(1) {
                    let mut db = vec![T::zero(); b.value.len()];
                    let av = a.value.values();
                    for i in 0..batch {
                        let db_blk = if b_batched {
                            &mut db[i * k * n..(i + 1) * k * n]
                        } else {
                            &mut db[..]
                        };
                        gemm_tn(
                            &av[i * m * k..(i + 1) * m * k],
                            &g[i * m * n..(i + 1) * m * n],
                            db_blk,
                            m,
                            k,
                            n,
                        );
                    }
                    accumulate(adj, node.inputs[1], db);
                }
            }
            Op::Add | Op::Sub | Op::Mul => {
                let out_shape = node.value.shape();
                for side in 0..2 {
                    if !wants(side) {
                        continue;
                    }
                    let this = inp(side);
                    let other = inp(1 - side);
                    let i_this = broadcast_index(this.value.shape(), out_shape);
                    let i_other = broadcast_index(other.value.shape(), out_shape);
                    let ov = other.value.values();
                    let mut d = vec![T::zero(); this.value.len()];
                    for (o, &go) in g.iter().enumerate() {
                        let contrib = match node.op {
                            Op::Add => go,
                            Op::Sub if side == 0 => go,
                            Op::Sub => -go,
                            _ => go * ov[map_idx(&i_other, o)],
                        };
                        d[map_idx(&i_this, o)] += contrib;
                    }
                    accumulate(adj, node.inputs[side], d);
                }
            }
            Op::Scale(c) => {
                let c = *c;
                accumulate(adj, node.inputs[0], g.iter().map(|&x| x * c).collect());
            }
            Op::AddScalar | Op::Reshape => accumulate(adj, node.inputs[0], g.to_vec()),
            Op::Relu => {
                let x = inp(0).value.values();
                let d = g
                    .iter()
                    .zip(x)
                    .map(|(&go, &xi)| if xi > T::zero() { go } else { T::zero() })
                    .collect();
                accumulate(adj, node.inputs[0], d);
            }
            Op::Elu => {
                let x = inp(0).value.values();
                let d = g
                    .iter()
                    .zip(x)
                    .map(|(&go, &xi)| if xi > T::zero() { go } else { go * xi.exp() })
                    .collect();
                accumulate(adj, node.inputs[0], d);
            }
            Op::Sigmoid => {
                let d = g
                    .iter()
                    .zip(out)
                    .map(|(&go, &y)| go * y * (T::one() - y))
                    .collect();
                accumulate(adj, node.inputs[0], d);
            }
            Op::Tanh => {
                let d = g
                    .iter()
                    .zip(out)
                    .map(|(&go, &y)| go * (T::one() - y * y))
                    .collect();
                accumulate(adj, node.inputs[0], d);
            }
            Op::Abs => {
                let x = inp(0).value.values();
                let d = g
                    .iter()
                    .zip(x)
                    .map(|(&go, &xi)| {
                        if xi > T::zero() {
                            go
                        } else if xi < T::zero() {
                            -go
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                accumulate(adj, node.inputs[0], d);
            }
            Op::Softmax => {
                let dlen = *node.value.shape().last().unwrap();
                let mut d = vec![T::zero(); g.len()];
                if dlen > 0 {
                    for ((dr, gr), yr) in d
                        .chunks_mut(dlen)
                        .zip(g.chunks(dlen))
                        .zip(out.chunks(dlen))
                    {
                        let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        for j in 0..dlen {
                            dr[j] = yr[j] * (gr[j] - dot);
                        }
                    }
                }
                accumulate(adj, node.inputs[0], d);
            }
            Op::MaxPool1d(argmax) => {
                let mut d = vec![T::zero(); inp(0).value.len()];
                for (&src, &go) in argmax.iter().zip(g) {
                    d[src] += go;
                }
                accumulate(adj, node.inputs[0], d);
            }
            Op::Interp1d { from } => {
                let from = *from;
                let len = *node.value.shape().last().unwrap();
                let weights = interp_weights(from, len);
                let rows = g.len() / len;
                let mut d = vec![T::zero(); rows * from];
                for r in 0..rows {
                    let dr = &mut d[r * from..(r + 1) * from];
                    for (j, &(i0, t)) in weights.iter().enumerate() {
                        let go = g[r * len + j];
                        if t == 0.0 {
                            dr[i0] += go;
                        } else {
                            let t = T::lit(t);
                            dr[i0] += go * (T::one() - t);
                            dr[i0 + 1] += go * t;
                        }
                    }
                }
                accumulate(adj, node.inputs[0], d);
            }
            Op::Concat { axis } => {
                let axis = *axis;
                let shape = node.value.shape();
                let outer: usize = shape[..axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total_blk = shape[axis] * inner;
                let mut offset = 0;
                for (k, &src) in node.inputs.iter().enumerate() {
                    let s = inp(k).value.shape();
                    let blk = s[axis] * inner;
                    if self.nodes[src].needs_grad {
                        let mut d = Vec::with_capacity(outer * blk);
                        for o in 0..outer {
                            let start = o * total_blk + offset;
                            d.extend_from_slice(&g[start..start + blk]);
                        }
                        accumulate(adj, src, d);
                    }
                    offset += blk;
                }
            }
            Op::Slice { axis, start } => {
                let (axis, start) = (*axis, *start);
                let in_shape = inp(0).value.shape();
                let len = node.value.shape()[axis];
                let outer: usize = in_shape[..axis].iter().product();
                let inner: usize = in_shape[axis + 1..].iter().product();
                let mut d = vec![T::zero(); inp(0).value.len()];
                for o in 0..outer {
                    let dst = o * in_shape[axis] * inner + start * inner;
                    let src = o * len * inner;
                    d[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                }
                accumulate(adj, node.inputs[0], d);
            }
            Op::Permute(axes) => {
                let (_, map) = permute_map(inp(0).value.shape(), axes);
                let mut d = vec![T::zero(); g.len()];
                for (o, &i) in map.iter().enumerate() {
                    d[i] = g[o];
                }
                accumulate(adj, node.inputs[0], d);
            }
            Op::Sum => {
                let n = inp(0).value.len();
                accumulate(adj, node.inputs[0], vec![g[0]; n]);
            }
            Op::Mean => {
                let n = inp(0).value.len();
                let v = g[0] / T::lit(n.max(1) as f64);
                accumulate(adj, node.inputs[0], vec![v; n]);
            }
        }
    }
}

fn accumulate<T: Scalar>(adj: &mut [Option<Vec<T>>], idx: usize, d: Vec<T>) {
    match &mut adj[idx] {
        Some(buf) => {
            for (b, x) in buf.iter_mut().zip(d) {
                *b += x;
            }
        }
        slot @ None => *slot = Some(d),
    }
}

pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// `(i0, t)` per output position: value = row[i0]*(1-t) + row[i0+1]*t.
fn interp_weights(from: usize, to: usize) -> Vec<(usize, f64)> {
    if from == 1 || to == 1 {
        return vec![(0, 0.0); to];
    }
    (0..to)
        .map(|j| {
            let pos = j as f64 * (from - 1) as f64 / (to - 1) as f64;
            let i0 = (pos.floor() as usize).min(from - 2);
            let t = pos - i0 as f64;
            if t == 0.0 {
                (i0, 0.0)
            } else if (t - 1.0).abs() < 1e-15 {
                (i0 + 1, 0.0)
            } else {
                (i0, t)
            }
        })
        .collect()
}

fn matmul_dims(sa: &[usize], sb: &[usize]) -> Result<(usize, usize, usize, usize, Vec<usize>)> {
    let err = || Error::Shape {
        op: "matmul",
        lhs: sa.to_vec(),
        rhs: sb.to_vec(),
    };
    match (sa.len(), sb.len()) {
        (2, 2) if sa[1] == sb[0] => Ok((1, sa[0], sa[1], sb[1], vec![sa[0], sb[1]])),
        (3, 2) if sa[2] == sb[0] => Ok((sa[0], sa[1], sa[2], sb[1], vec![sa[0], sa[1], sb[1]])),
        (3, 3) if sa[0] == sb[0] && sa[2] == sb[1] => {
            Ok((sa[0], sa[1], sa[2], sb[2], vec![sa[0], sa[1], sb[2]]))
        }
        _ => Err(err()),
    }
}

/// c[m,n] += a[m,k] * b[k,n]
fn gemm_nn<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cj, &bj) in crow.iter_mut().zip(brow) {
                *cj += aip * bj;
            }
        }
    }
}

/// c[m,k] += g[m,n] * b[k,n]^T
fn gemm_nt<T: Scalar>(g: &[T], b: &[T], c: &mut [T], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let dot: T = grow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
            c[i * k + p] += dot;
        }
    }
}

/// c[k,n] += a[m,k]^T * g[m,n]
fn gemm_tn<T: Scalar>(a: &[T], g: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for r in 0..m {
        let grow = &g[r * n..(r + 1) * n];
        for p in 0..k {
            let a_rp = a[r * k + p];
            if a_rp == T::zero() {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cj, &gj) in crow.iter_mut().zip(grow) {
                *cj += a_rp * gj;
            }
        }
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let r = a.len().max(b.len());
    let mut out = vec![0; r];
    for i in 0..r {
        let da = if i + a.len() >= r { a[i + a.len() - r] } else { 1 };
        let db = if i + b.len() >= r { b[i + b.len() - r] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Source flat index per output flat index, or `None` when the shapes match.
fn broadcast_index(src: &[usize], out: &[usize]) -> Option<Vec<usize>> {
    if src == out {
        return None;
    }
    let r = out.len();
    let mut strides = vec![0usize; r];
    let mut acc = 1;
    for i in (0..src.len()).rev() {
        let oi = i + r - src.len();
        strides[oi] = if src[i] == 1 { 0 } else { acc };
        acc *= src[i];
    }
    let n = numel(out);
    let mut idx = Vec::with_capacity(n);
    let mut counter = vec![0usize; r];
    let mut cur = 0usize;
    for _ in 0..n {
        idx.push(cur);
        for d in (0..r).rev() {
            counter[d] += 1;
            cur += strides[d];
            if counter[d] < out[d] {
                break;
            }
            cur -= strides[d] * counter[d];
            counter[d] = 0;
        }
    }
    Some(idx)
}

#[inline]
fn map_idx(map: &Option<Vec<usize>>, o: usize) -> usize {
    match map {
        Some(m) => m[o],
        None => o,
    }
}

/// Output shape and, per output flat index, the input flat index.
fn permute_map(shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let r = shape.len();
    let mut in_strides = vec![1usize; r];
    for i in (0..r.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n = numel(shape);
    let mut map = Vec::with_capacity(n);
    let mut counter = vec![0usize; r];
    let mut cur = 0usize;
    for _ in 0..n {
        map.push(cur);
        for d in (0..r).rev() {
            counter[d] += 1;
            cur += strides[d];
            if counter[d] < out_shape[d] {
                break;
            }
            cur -= strides[d] * counter[d];
            counter[d] = 0;
        }
    }
    (out_shape, map)
}
