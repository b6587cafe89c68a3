use crate::scalar::Scalar;

use super::broadcast::{self, Tiling};
use super::{AutodiffError, Tensor};

/// Handle to a node on a [`Tape`]; its index is the node id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Primitive operation kinds accepted by [`Tape::forward_op`].
#[derive(Debug, Clone, PartialEq)]
pub enum OpKind<S> {
    Add,
    Sub,
    Mul,
    Div,
    /// `[m, k] x [k, n] -> [m, n]`.
    MatMul,
    /// Sum of all elements to a scalar.
    Sum,
    /// Mean of all elements to a scalar.
    Mean,
    /// Sum over the last axis, keeping it as size 1.
    SumLast,
    Exp,
    Log,
    Tanh,
    Relu,
    Softplus,
    Sigmoid,
    Square,
    Neg,
    /// Multiply by a constant.
    Scale(S),
    /// Add a constant.
    Shift(S),
    /// `max(x, c)` elementwise; gradient passes only where `x > c`.
    ClampMin(S),
    Broadcast(Vec<usize>),
    Concat {
        axis: usize,
    },
    Slice {
        axis: usize,
        start: usize,
        end: usize,
    },
    /// Identity forward, zero backward.
    StopGradient,
}

impl<S> OpKind<S> {
    fn name(&self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Div => "div",
            OpKind::MatMul => "matmul",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::SumLast => "sum_last",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Tanh => "tanh",
            OpKind::Relu => "relu",
            OpKind::Softplus => "softplus",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Square => "square",
            OpKind::Neg => "neg",
            OpKind::Scale(_) => "scale",
            OpKind::Shift(_) => "shift",
            OpKind::ClampMin(_) => "clamp_min",
            OpKind::Broadcast(_) => "broadcast",
            OpKind::Concat { .. } => "concat",
            OpKind::Slice { .. } => "slice",
            OpKind::StopGradient => "stop_gradient",
        }
    }
}

#[derive(Debug)]
enum Backward<S> {
    /// Tracked input supplied by the caller.
    Leaf,
    /// No gradient flows through this node.
    Detached,
    Binary {
        kind: OpKind<S>,
        lhs: usize,
        rhs: usize,
        lhs_tiling: Tiling,
        rhs_tiling: Tiling,
    },
    MatMul {
        lhs: usize,
        rhs: usize,
    },
    Unary {
        kind: OpKind<S>,
        input: usize,
    },
    Concat {
        inputs: Vec<usize>,
        axis: usize,
    },
}

struct Node<S> {
    value: Tensor<S>,
    backward: Backward<S>,
}

impl<S> Node<S> {
    fn tracked(&self) -> bool {
        !matches!(self.backward, Backward::Detached)
    }
}

/// Ordered record of primitive operations.
///
/// Nodes are appended in evaluation order, so parents always precede
/// children.
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar root with respect to every tracked leaf.
#[derive(Debug, Clone)]
pub struct Gradients<S> {
    leaves: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient for a tracked leaf; zeros when the root does not depend on
    /// it. Panics if `v` is not a leaf of the tape that produced `self`.
    pub fn wrt(&self, v: Var) -> &Tensor<S> {
        self.leaves
            .get(v.0)
            .and_then(Option::as_ref)
            .expect("gradient requested for a node that is not a leaf on this tape")
    }

    /// Like [`wrt`](Self::wrt) but `None` for non-leaf nodes.
    pub fn get(&self, v: Var) -> Option<&Tensor<S>> {
        self.leaves.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<S>> {
        self.leaves.get_mut(v.0).and_then(Option::take)
    }
}

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis + 1..].iter().product(),
    )
}

#[inline]
fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

/// `tanh` through one `exp`, which is several times cheaper than the libm
/// routine; a short series keeps full relative precision near zero.
#[inline]
pub(crate) fn tanh<S: Scalar>(x: S) -> S {
    let a = x.abs();
    if a < S::lit(1e-2) {
        let x2 = x * x;
        return x
            * (S::one()
                - x2 * (S::lit(1.0 / 3.0)
                    - x2 * (S::lit(2.0 / 15.0) - x2 * S::lit(17.0 / 315.0))));
    }
    let t = (S::lit(-2.0) * a).exp();
    ((S::one() - t) / (S::one() + t)).copysign(x)
}

#[inline]
fn softplus<S: Scalar>(x: S) -> S {
    x.max(S::zero()) + (-x.abs()).exp().ln_1p()
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a tracked input whose gradient [`backward`](Self::backward)
    /// reports.
    pub fn leaf(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Backward::Leaf)
    }

    /// Records a constant; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Backward::Detached)
    }

    pub fn scalar(&mut self, v: S) -> Var {
        self.constant(Tensor::scalar(v))
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// The single value of a one-element node.
    pub fn item(&self, v: Var) -> S {
        self.nodes[v.0].value.item()
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked()
    }

    fn push(&mut self, value: Tensor<S>, backward: Backward<S>) -> Var {
        self.nodes.push(Node { value, backward });
        Var(self.nodes.len() - 1)
    }

    /// Evaluates one primitive and records it.
    ///
    /// The result is tracked only if at least one input is tracked and the
    /// op is not [`OpKind::StopGradient`].
    pub fn forward_op(&mut self, kind: OpKind<S>, inputs: &[Var]) -> Result<Var, AutodiffError> {
        let name = kind.name();
        let arity = match kind {
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div | OpKind::MatMul => Some(2),
            OpKind::Concat { .. } => None,
            _ => Some(1),
        };
        if let Some(expected) = arity {
            if inputs.len() != expected {
                return Err(AutodiffError::Arity {
                    op: name,
                    expected,
                    got: inputs.len(),
                });
            }
        } else if inputs.is_empty() {
            return Err(AutodiffError::Arity {
                op: name,
                expected: 1,
                got: 0,
            });
        }
        let tracked = !matches!(kind, OpKind::StopGradient)
            && inputs.iter().any(|&v| self.nodes[v.0].tracked());

        let (value, backward) = match kind {
            OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::Div => {
                self.eval_binary(kind, inputs[0], inputs[1])?
            }
            OpKind::MatMul => {
                let value = self.eval_matmul(inputs[0], inputs[1])?;
                (
                    value,
                    Backward::MatMul {
                        lhs: inputs[0].0,
                        rhs: inputs[1].0,
                    },
                )
            }
            OpKind::Concat { axis } => {
                let value = self.eval_concat(inputs, axis)?;
                (
                    value,
                    Backward::Concat {
                        inputs: inputs.iter().map(|v| v.0).collect(),
                        axis,
                    },
                )
            }
            kind => {
                let value = self.eval_unary(&kind, inputs[0])?;
                (
                    value,
                    Backward::Unary {
                        kind,
                        input: inputs[0].0,
                    },
                )
            }
        };
        Ok(self.push(
            value,
            if tracked {
                backward
            } else {
                Backward::Detached
            },
        ))
    }

    fn eval_binary(
        &self,
        kind: OpKind<S>,
        a: Var,
        b: Var,
    ) -> Result<(Tensor<S>, Backward<S>), AutodiffError> {
        let name = kind.name();
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let out_shape = broadcast::broadcast_shape(name, av.shape(), bv.shape())?;
        let lt = broadcast::tiling(av.shape(), &out_shape).expect("checked by broadcast_shape");
        let rt = broadcast::tiling(bv.shape(), &out_shape).expect("checked by broadcast_shape");
        let len = out_shape.iter().product();
        let data = match kind {
            OpKind::Add => broadcast::zip_tiled(av.data(), lt, bv.data(), rt, len, |x, y| x + y),
            OpKind::Sub => broadcast::zip_tiled(av.data(), lt, bv.data(), rt, len, |x, y| x - y),
            OpKind::Mul => broadcast::zip_tiled(av.data(), lt, bv.data(), rt, len, |x, y| x * y),
            OpKind::Div => broadcast::zip_tiled(av.data(), lt, bv.data(), rt, len, |x, y| x / y),
            _ => unreachable!(),
        };
        Ok((
            Tensor::new(out_shape, data)?,
            Backward::Binary {
                kind,
                lhs: a.0,
                rhs: b.0,
                lhs_tiling: lt,
                rhs_tiling: rt,
            },
        ))
    }

    fn eval_matmul(&self, a: Var, b: Var) -> Result<Tensor<S>, AutodiffError> {
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let mismatch = || AutodiffError::ShapeMismatch {
            op: "matmul",
            lhs: av.shape().to_vec(),
            rhs: bv.shape().to_vec(),
        };
        let (m, k) = av.dims2().ok_or_else(mismatch)?;
        let (k2, n) = bv.dims2().ok_or_else(mismatch)?;
        if k != k2 {
            return Err(mismatch());
        }
        let mut out = vec![S::zero(); m * n];
        S::gemm(
            m,
            k,
            n,
            S::one(),
            av.data(),
            k as isize,
            1,
            bv.data(),
            n as isize,
            1,
            S::zero(),
            &mut out,
            n as isize,
            1,
        );
        Tensor::new(vec![m, n], out)
    }

    fn eval_concat(&self, inputs: &[Var], axis: usize) -> Result<Tensor<S>, AutodiffError> {
        let first = self.nodes[inputs[0].0].value.shape().to_vec();
        if axis >= first.len() {
            return Err(AutodiffError::Invalid {
                op: "concat",
                msg: format!("axis {axis} out of range for shape {first:?}"),
            });
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.nodes[v.0].value.shape();
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let (outer, inner) = outer_inner(&first, axis);
        let mut out_shape = first.clone();
        out_shape[axis] = total;
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let t = &self.nodes[v.0].value;
                let block = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        Tensor::new(out_shape, data)
    }

    fn eval_unary(&self, kind: &OpKind<S>, x: Var) -> Result<Tensor<S>, AutodiffError> {
        let xv = &self.nodes[x.0].value;
        let name = kind.name();
        match kind {
            OpKind::Sum => Ok(Tensor::scalar(xv.sum())),
            OpKind::Mean => {
                if xv.is_empty() {
                    return Err(AutodiffError::Invalid {
                        op: name,
                        msg: "mean of empty tensor".into(),
                    });
                }
                Ok(Tensor::scalar(xv.sum() / S::lit(xv.len() as f64)))
            }
            OpKind::SumLast => {
                let shape = xv.shape();
                let Some(&last) = shape.last() else {
                    return Ok(xv.clone());
                };
                let mut out_shape = shape.to_vec();
                *out_shape.last_mut().unwrap() = 1;
                let data = if last == 0 {
                    vec![S::zero(); xv.len()]
                } else {
                    xv.data()
                        .chunks(last)
                        .map(|c| c.iter().copied().sum())
                        .collect()
                };
                Tensor::new(out_shape, data)
            }
            OpKind::Exp => Ok(xv.map(|v| v.exp())),
            OpKind::Log => Ok(xv.map(|v| v.ln())),
            OpKind::Tanh => Ok(xv.map(tanh)),
            OpKind::Relu => Ok(xv.map(|v| v.max(S::zero()))),
            OpKind::Softplus => Ok(xv.map(softplus)),
            OpKind::Sigmoid => Ok(xv.map(sigmoid)),
            OpKind::Square => Ok(xv.map(|v| v * v)),
            OpKind::Neg => Ok(xv.map(|v| -v)),
            OpKind::Scale(c) => Ok(xv.map(|v| v * *c)),
            OpKind::Shift(c) => Ok(xv.map(|v| v + *c)),
            OpKind::ClampMin(c) => Ok(xv.map(|v| v.max(*c))),
            OpKind::StopGradient => Ok(xv.clone()),
            OpKind::Broadcast(shape) => {
                let t = broadcast::tiling(xv.shape(), shape).ok_or_else(|| {
                    AutodiffError::ShapeMismatch {
                        op: name,
                        lhs: xv.shape().to_vec(),
                        rhs: shape.clone(),
                    }
                })?;
                Tensor::new(shape.clone(), broadcast::expand(xv.data(), t))
            }
            OpKind::Slice { axis, start, end } => {
                let shape = xv.shape();
                if *axis >= shape.len() || start > end || *end > shape[*axis] {
                    return Err(AutodiffError::Invalid {
                        op: name,
                        msg: format!("range {start}..{end} on axis {axis} of shape {shape:?}"),
                    });
                }
                let (outer, inner) = outer_inner(shape, *axis);
                let src_block = shape[*axis] * inner;
                let width = (end - start) * inner;
                let mut data = Vec::with_capacity(outer * width);
                for o in 0..outer {
                    let base = o * src_block + start * inner;
                    data.extend_from_slice(&xv.data()[base..base + width]);
                }
                let mut out_shape = shape.to_vec();
                out_shape[*axis] = end - start;
                Tensor::new(out_shape, data)
            }
            OpKind::Add
            | OpKind::Sub
            | OpKind::Mul
            | OpKind::Div
            | OpKind::MatMul
            | OpKind::Concat { .. } => unreachable!("not unary"),
        }
    }

    /// Reverse sweep from a scalar root.
    ///
    /// Returns a gradient for every tracked leaf; leaves the root does not
    /// reach get zeros.
    pub fn backward(&self, root: Var) -> Result<Gradients<S>, AutodiffError> {
        let rv = &self.nodes[root.0].value;
        if !rv.is_scalar() {
            return Err(AutodiffError::NonScalarRoot(rv.shape().to_vec()));
        }
        if !self.nodes[root.0].tracked() {
            return Err(AutodiffError::UntrackedRoot);
        }
        let mut grads: Vec<Option<Tensor<S>>> = Vec::new();
        grads.resize_with(root.0 + 1, || None);
        grads[root.0] = Some(Tensor::full(rv.shape(), S::one()));
        let mut leaves: Vec<Option<Tensor<S>>> = Vec::new();
        leaves.resize_with(self.nodes.len(), || None);

        for id in (0..=root.0).rev() {
            let node = &self.nodes[id];
            if let Backward::Leaf = node.backward {
                let g = grads[id]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                leaves[id] = Some(g);
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
        }
        for (id, node) in self.nodes.iter().enumerate().skip(root.0 + 1) {
            if let Backward::Leaf = node.backward {
                leaves[id] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { leaves })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<S>>], id: usize, g: Tensor<S>) {
        if !self.nodes[id].tracked() {
            return;
        }
        match &mut grads[id] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, id: usize, g: &Tensor<S>, grads: &mut [Option<Tensor<S>>]) {
        let node = &self.nodes[id];
        let out = &node.value;
        match &node.backward {
            Backward::Leaf | Backward::Detached => {}
            Backward::Binary {
                kind,
                lhs,
                rhs,
                lhs_tiling,
                rhs_tiling,
            } => {
                let a = &self.nodes[*lhs].value;
                let b = &self.nodes[*rhs].value;
                let gd = g.data();
                let need_a = self.nodes[*lhs].tracked();
                let need_b = self.nodes[*rhs].tracked();
                let id = broadcast::Tiling { outer: 1, inner: 1 };
                let n = gd.len();
                let (lt, rt) = (*lhs_tiling, *rhs_tiling);
                let (ga, gb): (Option<Vec<S>>, Option<Vec<S>>) = match kind {
                    OpKind::Add => (need_a.then(|| gd.to_vec()), need_b.then(|| gd.to_vec())),
                    OpKind::Sub => (
                        need_a.then(|| gd.to_vec()),
                        need_b.then(|| gd.iter().map(|&v| -v).collect()),
                    ),
                    OpKind::Mul => (
                        need_a.then(|| broadcast::zip_tiled(gd, id, b.data(), rt, n, |g, y| g * y)),
                        need_b.then(|| broadcast::zip_tiled(gd, id, a.data(), lt, n, |g, x| g * x)),
                    ),
                    OpKind::Div => (
                        need_a.then(|| broadcast::zip_tiled(gd, id, b.data(), rt, n, |g, y| g / y)),
                        need_b.then(|| {
                            let gx = broadcast::zip_tiled(gd, id, a.data(), lt, n, |g, x| g * x);
                            broadcast::zip_tiled(&gx, id, b.data(), rt, n, |t, y| -t / (y * y))
                        }),
                    ),
                    _ => unreachable!(),
                };
                if let Some(ga) = ga {
                    let r = broadcast::reduce(&ga, a.len(), *lhs_tiling);
                    self.accumulate(grads, *lhs, Tensor::new(a.shape().to_vec(), r).unwrap());
                }
                if let Some(gb) = gb {
                    let r = broadcast::reduce(&gb, b.len(), *rhs_tiling);
                    self.accumulate(grads, *rhs, Tensor::new(b.shape().to_vec(), r).unwrap());
                }
            }
            Backward::MatMul { lhs, rhs } => {
                let a = &self.nodes[*lhs].value;
                let b = &self.nodes[*rhs].value;
                let (m, k) = a.dims2().unwrap();
                let (_, n) = b.dims2().unwrap();
                if self.nodes[*lhs].tracked() {
                    // dA = dC · Bᵀ
                    let mut da = vec![S::zero(); m * k];
                    S::gemm(
                        m,
                        n,
                        k,
                        S::one(),
                        g.data(),
                        n as isize,
                        1,
                        b.data(),
                        1,
                        n as isize,
                        S::zero(),
                        &mut da,
                        k as isize,
                        1,
                    );
                    self.accumulate(grads, *lhs, Tensor::new(vec![m, k], da).unwrap());
                }
                if self.nodes[*rhs].tracked() {
                    // dB = Aᵀ · dC
                    let mut db = vec![S::zero(); k * n];
                    S::gemm(
                        k,
                        m,
                        n,
                        S::one(),
                        a.data(),
                        1,
                        k as isize,
                        g.data(),
                        n as isize,
                        1,
                        S::zero(),
                        &mut db,
                        n as isize,
                        1,
                    );
                    self.accumulate(grads, *rhs, Tensor::new(vec![k, n], db).unwrap());
                }
            }
            Backward::Concat { inputs, axis } => {
                let (outer, inner) = outer_inner(out.shape(), *axis);
                let total = out.shape()[*axis] * inner;
                let mut offset = 0;
                for &input in inputs {
                    let t = &self.nodes[input].value;
                    let block = t.shape()[*axis] * inner;
                    if self.nodes[input].tracked() {
                        let mut data = Vec::with_capacity(t.len());
                        for o in 0..outer {
                            let base = o * total + offset;
                            data.extend_from_slice(&g.data()[base..base + block]);
                        }
                        self.accumulate(
                            grads,
                            input,
                            Tensor::new(t.shape().to_vec(), data).unwrap(),
                        );
                    }
                    offset += block;
                }
            }
            Backward::Unary { kind, input } => {
                let x = &self.nodes[*input].value;
                let gd = g.data();
                fn zip<S: Scalar>(gd: &[S], v: &Tensor<S>, f: impl Fn(S, S) -> S) -> Vec<S> {
                    gd.iter().zip(v.data()).map(|(&g, &v)| f(g, v)).collect()
                }
                let data: Vec<S> = match kind {
                    OpKind::Sum => vec![gd[0]; x.len()],
                    OpKind::Mean => vec![gd[0] / S::lit(x.len() as f64); x.len()],
                    OpKind::SumLast => {
                        let last = x.shape().last().copied().unwrap_or(1).max(1);
                        gd.iter()
                            .flat_map(|&g| std::iter::repeat_n(g, last))
                            .take(x.len())
                            .collect()
                    }
                    OpKind::Exp => zip(gd, out, |g, y| g * y),
                    OpKind::Log => zip(gd, x, |g, x| g / x),
                    OpKind::Tanh => zip(gd, out, |g, y| g * (S::one() - y * y)),
                    OpKind::Relu => zip(gd, x, |g, x| if x > S::zero() { g } else { S::zero() }),
                    OpKind::Softplus => zip(gd, x, |g, x| g * sigmoid(x)),
                    OpKind::Sigmoid => zip(gd, out, |g, y| g * y * (S::one() - y)),
                    OpKind::Square => zip(gd, x, |g, x| g * (x + x)),
                    OpKind::Neg => gd.iter().map(|&g| -g).collect(),
                    OpKind::Scale(c) => gd.iter().map(|&g| g * *c).collect(),
                    OpKind::Shift(_) => gd.to_vec(),
                    OpKind::ClampMin(c) => zip(gd, x, |g, x| if x > *c { g } else { S::zero() }),
                    OpKind::StopGradient => return,
                    OpKind::Broadcast(_) => {
                        let t = broadcast::tiling(x.shape(), out.shape()).unwrap();
                        broadcast::reduce(gd, x.len(), t)
                    }
                    OpKind::Slice { axis, start, end } => {
                        let (outer, inner) = outer_inner(x.shape(), *axis);
                        let src_block = x.shape()[*axis] * inner;
                        let width = (end - start) * inner;
                        let mut data = vec![S::zero(); x.len()];
                        for o in 0..outer {
                            let base = o * src_block + start * inner;
                            data[base..base + width]
                                .copy_from_slice(&gd[o * width..(o + 1) * width]);
                        }
                        data
                    }
                    OpKind::Add
                    | OpKind::Sub
                    | OpKind::Mul
                    | OpKind::Div
                    | OpKind::MatMul
                    | OpKind::Concat { .. } => unreachable!(),
                };
                self.accumulate(
                    grads,
                    *input,
                    Tensor::new(x.shape().to_vec(), data).unwrap(),
                );
            }
        }
    }
}

macro_rules! binary_ops {
    ($($name:ident => $kind:ident),* $(,)?) => {
        impl<S: Scalar> Tape<S> {
            $(
                pub fn $name(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
                    self.forward_op(OpKind::$kind, &[a, b])
                }
            )*
        }
    };
}

macro_rules! unary_ops {
    ($($name:ident => $kind:ident),* $(,)?) => {
        impl<S: Scalar> Tape<S> {
            $(
                pub fn $name(&mut self, x: Var) -> Result<Var, AutodiffError> {
                    self.forward_op(OpKind::$kind, &[x])
                }
            )*
        }
    };
}

binary_ops! {
    add => Add,
    sub => Sub,
    mul => Mul,
    div => Div,
    matmul => MatMul,
}

unary_ops! {
    sum => Sum,
    mean => Mean,
    sum_last => SumLast,
    exp => Exp,
    log => Log,
    tanh => Tanh,
    relu => Relu,
    softplus => Softplus,
    sigmoid => Sigmoid,
    square => Square,
    neg => Neg,
    stop_gradient => StopGradient,
}

impl<S: Scalar> Tape<S> {
    pub fn scale(&mut self, x: Var, c: S) -> Result<Var, AutodiffError> {
        self.forward_op(OpKind::Scale(c), &[x])
    }

    pub fn shift(&mut self, x: Var, c: S) -> Result<Var, AutodiffError> {
        self.forward_op(OpKind::Shift(c), &[x])
    }

    pub fn clamp_min(&mut self, x: Var, c: S) -> Result<Var, AutodiffError> {
        self.forward_op(OpKind::ClampMin(c), &[x])
    }

    pub fn broadcast(&mut self, x: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        self.forward_op(OpKind::Broadcast(shape.to_vec()), &[x])
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var, AutodiffError> {
        self.forward_op(OpKind::Concat { axis }, xs)
    }

    pub fn slice(
        &mut self,
        x: Var,
        axis: usize,
        start: usize,
        end: usize,
    ) -> Result<Var, AutodiffError> {
        self.forward_op(OpKind::Slice { axis, start, end }, &[x])
    }

    /// `x · w + b` with `b` broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var, AutodiffError> {
        let xw = self.matmul(x, w)?;
        self.add(xw, b)
    }
}
