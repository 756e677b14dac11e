//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation on a [`Var`] appends a node holding its value and the
//! rule needed to push an incoming adjoint back to its operands. A tape is
//! built fresh for each forward pass and replayed once, in exact reverse
//! order of recording, by [`Tape::backward`].

use std::cell::{Cell, RefCell};
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{gemm_nt, gemm_tn, strides, Tensor};

type Derivative = Rc<dyn Fn(f64) -> f64>;

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    Offset(usize),
    Exp(usize),
    Log(usize),
    Sqrt(usize),
    Abs(usize),
    Relu(usize),
    ClampMin(usize, f64),
    Map(usize, Derivative),
    Sum(usize, Rc<[usize]>),
    MatMul(usize, usize),
    Reshape(usize),
    Gather(usize, Rc<[Option<usize>]>),
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    tracked: bool,
}

/// Recording of one forward pass.
///
/// Confined to a single thread; build one per evaluation.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grads: RefCell<Vec<Option<Rc<Tensor>>>>,
    backward_done: Cell<bool>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.nodes.borrow().len())
            .field("backward_done", &self.backward_done.get())
            .finish()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Leaf whose gradient is collected by [`Tape::backward`].
    pub fn var(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, tracked: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            tracked,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn tracked(&self, id: usize) -> bool {
        self.nodes.borrow()[id].tracked
    }

    /// Propagates `d root / d leaf` to every tracked leaf reachable from
    /// `root`. May be called once per tape unless [`Tape::reset_grads`] is
    /// called in between.
    pub fn backward(&self, root: Var<'_>) -> Result<()> {
        if !std::ptr::eq(root.tape, self) {
            return Err(Error::Contract("root belongs to a different tape".into()));
        }
        if self.backward_done.get() {
            return Err(Error::Contract(
                "backward already ran on this tape; reset_grads first".into(),
            ));
        }
        let nodes = self.nodes.borrow();
        let root_value = &nodes[root.id].value;
        if !root_value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {:?}",
                root_value.shape()
            )));
        }

        let n = root.id + 1;
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; n];
        adj[root.id] = Some(vec![1.0]);
        let mut leaf_grads: Vec<Option<Rc<Tensor>>> = vec![None; nodes.len()];

        for id in (0..n).rev() {
            let node = &nodes[id];
            if !node.tracked {
                continue;
            }
            let Some(g) = adj[id].take() else {
                continue;
            };
            let val = |i: usize| -> &Tensor { &nodes[i].value };
            let mut acc = |i: usize, f: &dyn Fn(&mut [f64])| {
                if !nodes[i].tracked {
                    return;
                }
                let slot = adj[i].get_or_insert_with(|| vec![0.0; nodes[i].value.numel()]);
                f(slot);
            };
            match &node.op {
                Op::Leaf => {
                    let t = Tensor::new(node.value.shape().to_vec(), g)?;
                    leaf_grads[id] = Some(Rc::new(t));
                }
                Op::Add(a, b) => {
                    acc(*a, &|s| add_into(s, &g));
                    acc(*b, &|s| add_into(s, &g));
                }
                Op::Sub(a, b) => {
                    acc(*a, &|s| add_into(s, &g));
                    acc(*b, &|s| {
                        for (o, gv) in s.iter_mut().zip(&g) {
                            *o -= gv;
                        }
                    });
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (val(*a).data(), val(*b).data());
                    acc(*a, &|s| {
                        for ((o, gv), y) in s.iter_mut().zip(&g).zip(vb) {
                            *o += gv * y;
                        }
                    });
                    acc(*b, &|s| {
                        for ((o, gv), x) in s.iter_mut().zip(&g).zip(va) {
                            *o += gv * x;
                        }
                    });
                }
                Op::Div(a, b) => {
                    let (va, vb) = (val(*a).data(), val(*b).data());
                    acc(*a, &|s| {
                        for ((o, gv), y) in s.iter_mut().zip(&g).zip(vb) {
                            *o += gv / y;
                        }
                    });
                    acc(*b, &|s| {
                        for (((o, gv), x), y) in s.iter_mut().zip(&g).zip(va).zip(vb) {
                            *o -= gv * x / (y * y);
                        }
                    });
                }
                Op::Scale(a, c) => acc(*a, &|s| {
                    for (o, gv) in s.iter_mut().zip(&g) {
                        *o += c * gv;
                    }
                }),
                Op::Offset(a) | Op::Reshape(a) => acc(*a, &|s| add_into(s, &g)),
                Op::Exp(a) => {
                    let out = node.value.data();
                    acc(*a, &|s| {
                        for ((o, gv), y) in s.iter_mut().zip(&g).zip(out) {
                            *o += gv * y;
                        }
                    })
                }
                Op::Log(a) => {
                    let x = val(*a).data();
                    acc(*a, &|s| {
                        for ((o, gv), xv) in s.iter_mut().zip(&g).zip(x) {
                            *o += gv / xv;
                        }
                    })
                }
                Op::Sqrt(a) => {
                    let out = node.value.data();
                    acc(*a, &|s| {
                        for ((o, gv), y) in s.iter_mut().zip(&g).zip(out) {
                            if *gv != 0.0 {
                                *o += gv / (2.0 * y);
                            }
                        }
                    })
                }
                Op::Abs(a) => {
                    let x = val(*a).data();
                    acc(*a, &|s| {
                        for ((o, gv), xv) in s.iter_mut().zip(&g).zip(x) {
                            if *xv > 0.0 {
                                *o += gv;
                            } else if *xv < 0.0 {
                                *o -= gv;
                            }
                        }
                    })
                }
                Op::Relu(a) => {
                    let x = val(*a).data();
                    acc(*a, &|s| {
                        for ((o, gv), xv) in s.iter_mut().zip(&g).zip(x) {
                            if *xv > 0.0 {
                                *o += gv;
                            }
                        }
                    })
                }
                Op::ClampMin(a, c) => {
                    let x = val(*a).data();
                    acc(*a, &|s| {
                        for ((o, gv), xv) in s.iter_mut().zip(&g).zip(x) {
                            if xv > c {
                                *o += gv;
                            }
                        }
                    })
                }
                Op::Map(a, d) => {
                    let x = val(*a).data();
                    acc(*a, &|s| {
                        for ((o, gv), xv) in s.iter_mut().zip(&g).zip(x) {
                            *o += gv * d(*xv);
                        }
                    })
                }
                Op::Sum(a, axes) => {
                    let in_shape = val(*a).shape();
                    let map = reduce_index_map(in_shape, axes);
                    acc(*a, &|s| {
                        for (o, &k) in s.iter_mut().zip(&map) {
                            *o += g[k];
                        }
                    })
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (val(*a), val(*b));
                    let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                    acc(*a, &|s| gemm_nt(&g, tb.data(), s, m, n, k));
                    acc(*b, &|s| gemm_tn(ta.data(), &g, s, k, m, n));
                }
                Op::Gather(a, index) => acc(*a, &|s| {
                    for (gv, idx) in g.iter().zip(index.iter()) {
                        if let Some(i) = idx {
                            s[*i] += gv;
                        }
                    }
                }),
            }
        }
        *self.grads.borrow_mut() = leaf_grads;
        self.backward_done.set(true);
        Ok(())
    }

    /// Gradient of the last backward root with respect to a tracked leaf.
    pub fn grad(&self, v: Var<'_>) -> Option<Tensor> {
        self.grads
            .borrow()
            .get(v.id)
            .and_then(|g| g.as_ref().map(|t| (**t).clone()))
    }

    pub fn reset_grads(&self) {
        self.grads.borrow_mut().clear();
        self.backward_done.set(false);
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (o, v) in dst.iter_mut().zip(src) {
        *o += v;
    }
}

fn reduced_shape(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let out: Vec<usize> = shape
        .iter()
        .enumerate()
        .filter(|(i, _)| !axes.contains(i))
        .map(|(_, &d)| d)
        .collect();
    if out.is_empty() {
        vec![1]
    } else {
        out
    }
}

/// For every input flat index, the flat index of the output cell it sums into.
fn reduce_index_map(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let out_shape = reduced_shape(shape, axes);
    let kept: Vec<usize> = (0..shape.len()).filter(|i| !axes.contains(i)).collect();
    let out_strides = if kept.is_empty() {
        vec![]
    } else {
        strides(&out_shape)
    };
    let in_strides = strides(shape);
    let n: usize = shape.iter().product();
    (0..n)
        .map(|flat| {
            kept.iter()
                .zip(&out_strides)
                .map(|(&ax, &os)| (flat / in_strides[ax]) % shape[ax] * os)
                .sum()
        })
        .collect()
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.value().numel()
    }

    pub fn item(&self) -> Result<f64> {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.tracked(self.id)
    }

    pub fn grad(&self) -> Option<Tensor> {
        self.tape.grad(*self)
    }

    /// Same value, cut off from gradient flow.
    pub fn detach(&self) -> Var<'t> {
        self.tape.constant((*self.value()).clone())
    }

    fn unary(&self, value: Tensor, op: Op) -> Var<'t> {
        let tracked = self.requires_grad();
        self.tape.push(value, op, tracked)
    }

    fn binary(
        &self,
        other: Var<'t>,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var<'t>> {
        self.same_tape(other)?;
        let (a, b) = (self.value(), other.value());
        let out = a
            .zip_map(&b, f)
            .map_err(|_| Error::dim(name, a.shape(), b.shape()))?;
        let tracked = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(out, op, tracked))
    }

    fn same_tape(&self, other: Var<'t>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::Contract(
                "operands recorded on different tapes".into(),
            ))
        }
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", |a, b| a + b, Op::Add(self.id, other.id))
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", |a, b| a - b, Op::Sub(self.id, other.id))
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", |a, b| a * b, Op::Mul(self.id, other.id))
    }

    pub fn div(&self, other: Var<'t>) -> Result<Var<'t>> {
        if other.value().data().contains(&0.0) {
            return Err(Error::domain("div", "division by zero"));
        }
        self.binary(other, "div", |a, b| a / b, Op::Div(self.id, other.id))
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        self.unary(self.value().scale(c), Op::Scale(self.id, c))
    }

    /// `self + c` elementwise.
    pub fn offset(&self, c: f64) -> Var<'t> {
        self.unary(self.value().map(|v| v + c), Op::Offset(self.id))
    }

    pub fn exp(&self) -> Var<'t> {
        self.unary(self.value().map(f64::exp), Op::Exp(self.id))
    }

    pub fn log(&self) -> Result<Var<'t>> {
        let x = self.value();
        if let Some(v) = x.data().iter().find(|&&v| v <= 0.0 || v.is_nan()) {
            return Err(Error::domain("log", format!("non-positive operand {v}")));
        }
        Ok(self.unary(x.map(f64::ln), Op::Log(self.id)))
    }

    pub fn sqrt(&self) -> Result<Var<'t>> {
        let x = self.value();
        if let Some(v) = x.data().iter().find(|&&v| v < 0.0 || v.is_nan()) {
            return Err(Error::domain("sqrt", format!("negative operand {v}")));
        }
        Ok(self.unary(x.map(f64::sqrt), Op::Sqrt(self.id)))
    }

    /// Subgradient 0 at the kink.
    pub fn abs(&self) -> Var<'t> {
        self.unary(self.value().map(f64::abs), Op::Abs(self.id))
    }

    pub fn relu(&self) -> Var<'t> {
        self.unary(self.value().map(|v| v.max(0.0)), Op::Relu(self.id))
    }

    /// `max(self, c)`; the gradient passes only where `self > c`.
    pub fn clamp_min(&self, c: f64) -> Var<'t> {
        self.unary(self.value().map(|v| v.max(c)), Op::ClampMin(self.id, c))
    }

    /// Elementwise map with a caller-supplied derivative.
    pub fn map_with(
        &self,
        f: impl Fn(f64) -> f64,
        derivative: impl Fn(f64) -> f64 + 'static,
    ) -> Var<'t> {
        self.unary(self.value().map(f), Op::Map(self.id, Rc::new(derivative)))
    }

    /// Sum of every element, as a one-element tensor.
    pub fn sum(&self) -> Var<'t> {
        let axes: Vec<usize> = (0..self.value().ndim()).collect();
        self.unary(
            Tensor::scalar(self.value().sum()),
            Op::Sum(self.id, axes.into()),
        )
    }

    /// Sums over `axes`, dropping them from the shape.
    pub fn sum_axes(&self, axes: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        let nd = x.ndim();
        let mut ax = axes.to_vec();
        ax.sort_unstable();
        ax.dedup();
        if ax.iter().any(|&a| a >= nd) {
            return Err(Error::dim("sum_axes", x.shape(), axes));
        }
        let out_shape = reduced_shape(x.shape(), &ax);
        let map = reduce_index_map(x.shape(), &ax);
        let mut out = vec![0.0; out_shape.iter().product()];
        for (v, &k) in x.data().iter().zip(&map) {
            out[k] += v;
        }
        Ok(self.unary(Tensor::new(out_shape, out)?, Op::Sum(self.id, ax.into())))
    }

    pub fn mean(&self) -> Var<'t> {
        let n = self.numel() as f64;
        self.sum().scale(1.0 / n)
    }

    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other)?;
        let (a, b) = (self.value(), other.value());
        let out = a.matmul(&b)?;
        let tracked = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(out, Op::MatMul(self.id, other.id), tracked))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        let t = x
            .reshape(shape)
            .map_err(|_| Error::dim("reshape", x.shape(), shape))?;
        Ok(self.unary(t, Op::Reshape(self.id)))
    }

    /// `out[i] = self[index[i]]`, or zero where the index is `None`.
    pub fn gather(&self, shape: &[usize], index: Rc<[Option<usize>]>) -> Result<Var<'t>> {
        let x = self.value();
        let n: usize = shape.iter().product();
        if n != index.len() {
            return Err(Error::dim("gather", shape, &[index.len()]));
        }
        let src = x.data();
        let mut out = Vec::with_capacity(n);
        for idx in index.iter() {
            match idx {
                Some(i) if *i < src.len() => out.push(src[*i]),
                Some(i) => {
                    return Err(Error::Contract(format!(
                        "gather index {i} out of range for {} elements",
                        src.len()
                    )))
                }
                None => out.push(0.0),
            }
        }
        Ok(self.unary(
            Tensor::new(shape.to_vec(), out)?,
            Op::Gather(self.id, index),
        ))
    }

    /// Reorders axes: output axis `k` is input axis `perm[k]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Var<'t>> {
        let shape = self.shape();
        let mut check = perm.to_vec();
        check.sort_unstable();
        if check != (0..shape.len()).collect::<Vec<_>>() {
            return Err(Error::dim("permute", &shape, perm));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let in_strides = strides(&shape);
        let out_strides = strides(&out_shape);
        let n: usize = shape.iter().product();
        let index: Vec<Option<usize>> = (0..n)
            .map(|flat| {
                let mut src = 0;
                for (k, &p) in perm.iter().enumerate() {
                    let coord = (flat / out_strides[k]) % out_shape[k];
                    src += coord * in_strides[p];
                }
                Some(src)
            })
            .collect();
        self.gather(&out_shape, index.into())
    }

    /// Swaps the last two axes.
    pub fn transpose(&self) -> Result<Var<'t>> {
        let nd = self.value().ndim();
        if nd < 2 {
            return Err(Error::dim("transpose", &self.shape(), &[]));
        }
        let mut perm: Vec<usize> = (0..nd).collect();
        perm.swap(nd - 2, nd - 1);
        self.permute(&perm)
    }

    /// Repeats along leading or unit axes, aligning shapes from the right.
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Var<'t>> {
        let src = self.shape();
        let src: Vec<usize> = if src == [1] && shape.len() > 1 {
            vec![1; shape.len()]
        } else {
            src
        };
        if src.len() > shape.len() {
            return Err(Error::dim("broadcast_to", &src, shape));
        }
        let pad = shape.len() - src.len();
        let full_src: Vec<usize> = std::iter::repeat_n(1, pad)
            .chain(src.iter().copied())
            .collect();
        for (s, t) in full_src.iter().zip(shape) {
            if *s != 1 && s != t {
                return Err(Error::dim("broadcast_to", &src, shape));
            }
        }
        let in_strides = strides(&full_src);
        let out_strides = strides(shape);
        let n: usize = shape.iter().product();
        let index: Vec<Option<usize>> = (0..n)
            .map(|flat| {
                let mut s = 0;
                for k in 0..shape.len() {
                    if full_src[k] != 1 {
                        s += (flat / out_strides[k]) % shape[k] * in_strides[k];
                    }
                }
                Some(s)
            })
            .collect();
        self.gather(shape, index.into())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_annihilator() {
        let tape = Tape::new();
        let a = tape.var(t(&[3, 2], &[1., 2., 3., 4., 5., 6.]));
        let i3 = tape.constant(Tensor::eye(3));
        assert_eq!(*i3.matmul(a).unwrap().value(), *a.value());
        let z = tape.constant(Tensor::zeros(&[2, 4]));
        assert_eq!(*a.matmul(z).unwrap().value(), Tensor::zeros(&[3, 4]));
    }

    #[test]
    fn matmul_adjoint() {
        let tape = Tape::new();
        let a = tape.var(t(&[1, 2], &[1., 2.]));
        let b = tape.constant(t(&[2, 1], &[3., 4.]));
        let root = a.matmul(b).unwrap().sum();
        tape.backward(root).unwrap();
        assert_eq!(a.grad().unwrap().data(), &[3., 4.]);
    }

    #[test]
    fn matmul_shape_error_names_both() {
        let tape = Tape::new();
        let a = tape.var(Tensor::zeros(&[2, 3]));
        let b = tape.var(Tensor::zeros(&[2, 3]));
        match a.matmul(b) {
            Err(Error::Dimension { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn elementwise_examples() {
        let tape = Tape::new();
        let x = tape.var(t(&[2], &[0., 1.]));
        let e = x.exp();
        assert_eq!(e.value().data(), &[1.0, std::f64::consts::E]);
        let y = tape.var(t(&[3], &[-1., 0., 2.]));
        let back = y.exp().log().unwrap();
        for (a, b) in back.value().data().iter().zip(&[-1., 0., 2.]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn square_gradient() {
        let tape = Tape::new();
        let x = tape.var(t(&[2], &[1., 2.]));
        let root = x.mul(x).unwrap().sum();
        tape.backward(root).unwrap();
        assert_eq!(x.grad().unwrap().data(), &[2., 4.]);
    }

    #[test]
    fn domain_errors() {
        let tape = Tape::new();
        let x = tape.var(t(&[2], &[1., 0.]));
        assert!(matches!(x.log(), Err(Error::Domain { .. })));
        let y = tape.var(t(&[2], &[1., 1.]));
        assert!(matches!(y.div(x), Err(Error::Domain { .. })));
        assert!(matches!(x.scale(-1.0).sqrt(), Err(Error::Domain { .. })));
    }

    #[test]
    fn reductions() {
        let tape = Tape::new();
        let x = tape.var(t(&[2, 2], &[1., 2., 3., 4.]));
        assert_eq!(x.sum().item().unwrap(), 10.0);
        assert_eq!(x.sum_axes(&[0]).unwrap().value().data(), &[4., 6.]);
        assert_eq!(x.sum_axes(&[1]).unwrap().value().data(), &[3., 7.]);
        assert!(matches!(x.sum_axes(&[2]), Err(Error::Dimension { .. })));
        let root = x.sum();
        tape.backward(root).unwrap();
        assert_eq!(x.grad().unwrap(), Tensor::ones(&[2, 2]));
    }

    #[test]
    fn sum_axes_gradient_broadcasts() {
        let tape = Tape::new();
        let x = tape.var(Tensor::from_fn(&[2, 3, 2], |i| i as f64));
        let w = tape.constant(t(&[2, 2], &[1., 2., 3., 4.]));
        let root = x.sum_axes(&[1]).unwrap().mul(w).unwrap().sum();
        tape.backward(root).unwrap();
        let g = x.grad().unwrap();
        for b in 0..2 {
            for j in 0..3 {
                for k in 0..2 {
                    assert_eq!(g.data()[b * 6 + j * 2 + k], w.value().data()[b * 2 + k]);
                }
            }
        }
    }

    #[test]
    fn scalar_and_linear_roots() {
        let tape = Tape::new();
        let x = tape.var(Tensor::scalar(5.0));
        tape.backward(x.scale(3.0)).unwrap();
        assert_eq!(x.grad().unwrap().data(), &[3.0]);

        let tape = Tape::new();
        let x = tape.var(Tensor::from_fn(&[2, 3], |i| i as f64 * 0.3));
        let w = tape.constant(Tensor::from_fn(&[3, 4], |i| (i as f64).sin()));
        tape.backward(x.matmul(w).unwrap().sum()).unwrap();
        let g = x.grad().unwrap();
        let wv = w.value();
        for r in 0..2 {
            for k in 0..3 {
                let row_sum: f64 = wv.data()[k * 4..k * 4 + 4].iter().sum();
                assert!((g.data()[r * 3 + k] - row_sum).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn backward_contract() {
        let tape = Tape::new();
        let x = tape.var(t(&[2], &[1., 2.]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
        let s = x.sum();
        tape.backward(s).unwrap();
        assert!(matches!(tape.backward(s), Err(Error::Contract(_))));
        tape.reset_grads();
        tape.backward(s).unwrap();
        assert_eq!(x.grad().unwrap().data(), &[1., 1.]);
    }

    #[test]
    fn constants_get_no_grad() {
        let tape = Tape::new();
        let x = tape.var(t(&[2], &[1., 2.]));
        let c = tape.constant(t(&[2], &[3., 4.]));
        tape.backward(x.mul(c).unwrap().sum()).unwrap();
        assert!(c.grad().is_none());
        let d = x.detach();
        assert!(!d.requires_grad());
    }

    #[test]
    fn permute_and_broadcast() {
        let tape = Tape::new();
        let x = tape.var(Tensor::from_fn(&[2, 3], |i| i as f64));
        let xt = x.transpose().unwrap();
        assert_eq!(xt.shape(), vec![3, 2]);
        assert_eq!(xt.value().data(), &[0., 3., 1., 4., 2., 5.]);
        let v = tape.var(t(&[3], &[1., 2., 3.]));
        let b = v.broadcast_to(&[2, 3]).unwrap();
        assert_eq!(b.value().data(), &[1., 2., 3., 1., 2., 3.]);
        let col = tape.var(t(&[2, 1], &[7., 8.]));
        let bc = col.broadcast_to(&[2, 3]).unwrap();
        assert_eq!(bc.value().data(), &[7., 7., 7., 8., 8., 8.]);
        tape.backward(b.sum()).unwrap();
        assert_eq!(v.grad().unwrap().data(), &[2., 2., 2.]);
        assert!(v.broadcast_to(&[2, 4]).is_err());
    }

    #[test]
    fn abs_relu_clamp() {
        let tape = Tape::new();
        let x = tape.var(t(&[4], &[-2., 0., 0.5, 3.]));
        let root = x
            .abs()
            .add(x.relu())
            .unwrap()
            .add(x.clamp_min(1.0))
            .unwrap()
            .sum();
        tape.backward(root).unwrap();
        assert_eq!(x.grad().unwrap().data(), &[-1., 0., 2., 3.]);
    }
}
