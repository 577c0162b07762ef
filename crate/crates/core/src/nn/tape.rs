//! Tape-based reverse-mode differentiation over 2-D tensors.
//!
//! Every operation appends a node holding its output value and the indices
//! of its inputs. [`Tape::backward`] walks the nodes in reverse order once,
//! applying each node's analytic backward rule and accumulating gradients
//! additively where a value feeds several consumers.
//!
//! Tensors are row-major `rows x cols` matrices; the leading dimension is
//! the batch (or batch times time) dimension throughout the crate.

use std::cell::{Ref, RefCell};
use std::collections::HashMap;

use ndarray::{s, Array2, Axis, Zip};

use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

pub type Tensor = Array2<f64>;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Pointwise nonlinearities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    /// `x + 1` for `x >= 0`, `exp(x)` otherwise; strictly positive.
    EluPlusOne,
    /// Row-wise softmax.
    Softmax,
    Tanh,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Affine(Var, f64),
    Recip(Var),
    Square(Var),
    Sqrt(Var),
    Exp(Var),
    Ln(Var),
    Relu(Var),
    EluPlusOne(Var),
    Tanh(Var),
    Softmax(Var),
    Floor(Var, f64),
    MatMul(Var, Var),
    Linear { x: Var, w: Var, b: Var },
    BroadcastRows(Var),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SelectRows(Vec<bool>, Var, Var),
    SegmentSum(Var, usize),
    SumAll(Var),
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

#[derive(Default)]
struct Inner {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// Records a forward computation for later differentiation.
#[derive(Default)]
pub struct Tape {
    inner: RefCell<Inner>,
}

fn shape_err(what: &str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::DimensionMismatch(format!("{what}: {}x{} vs {}x{}", a.0, a.1, b.0, b.1))
}

fn dims(t: &Tensor) -> (usize, usize) {
    t.dim()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node { op, value, requires_grad });
        Var(inner.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        let inner = self.inner.borrow();
        vars.iter().any(|v| inner.nodes[v.0].requires_grad)
    }

    /// Value of a recorded variable.
    pub fn value(&self, v: Var) -> Ref<'_, Tensor> {
        Ref::map(self.inner.borrow(), |i| &i.nodes[v.0].value)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    /// The single entry of a `1 x 1` variable.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    /// Records a constant (no gradient flows into it).
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn filled(&self, rows: usize, cols: usize, x: f64) -> Var {
        self.constant(Tensor::from_elem((rows, cols), x))
    }

    /// Records a trainable parameter. Repeated requests for the same
    /// parameter return the same variable so that gradients from every use
    /// accumulate into one place.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(v) = self.inner.borrow().params.get(&id) {
            return *v;
        }
        let v = self.push(Op::Leaf, store.value(id).clone(), true);
        self.inner.borrow_mut().params.insert(id, v);
        v
    }

    fn unary(&self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(x).mapv(f);
        let rg = self.needs(&[x]);
        self.push(op, value, rg)
    }

    fn binary(&self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let value = {
            let (va, vb) = (self.value(a), self.value(b));
            assert!(va.dim() == vb.dim(), "{}", shape_err(what, dims(&va), dims(&vb)));
            Zip::from(&*va).and(&*vb).map_collect(|&x, &y| f(x, y))
        };
        let rg = self.needs(&[a, b]);
        self.push(op, value, rg)
    }

    // Elementwise binary operations require equal shapes; a mismatch is a
    // programming error inside the crate and panics with the shapes.

    pub fn add(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    /// `scale * x + shift`.
    pub fn affine(&self, x: Var, scale: f64, shift: f64) -> Var {
        self.unary(x, |v| scale * v + shift, Op::Affine(x, scale))
    }

    pub fn scale(&self, x: Var, scale: f64) -> Var {
        self.affine(x, scale, 0.0)
    }

    pub fn neg(&self, x: Var) -> Var {
        self.affine(x, -1.0, 0.0)
    }

    pub fn recip(&self, x: Var) -> Var {
        self.unary(x, |v| 1.0 / v, Op::Recip(x))
    }

    pub fn square(&self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    pub fn sqrt(&self, x: Var) -> Var {
        self.unary(x, f64::sqrt, Op::Sqrt(x))
    }

    pub fn exp(&self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn ln(&self, x: Var) -> Var {
        self.unary(x, f64::ln, Op::Ln(x))
    }

    /// `max(x, floor)`; the gradient is zero where the floor is active.
    pub fn floor(&self, x: Var, floor: f64) -> Var {
        self.unary(x, |v| v.max(floor), Op::Floor(x, floor))
    }

    pub fn activation(&self, kind: Activation, x: Var) -> Var {
        match kind {
            Activation::Relu => self.unary(x, |v| v.max(0.0), Op::Relu(x)),
            Activation::EluPlusOne => self.unary(x, elu_plus_one, Op::EluPlusOne(x)),
            Activation::Tanh => self.unary(x, f64::tanh, Op::Tanh(x)),
            Activation::Softmax => {
                let mut value = self.value(x).clone();
                for mut row in value.rows_mut() {
                    let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                    row.mapv_inplace(|v| (v - max).exp());
                    let sum = row.sum();
                    row.mapv_inplace(|v| v / sum);
                }
                let rg = self.needs(&[x]);
                self.push(Op::Softmax(x), value, rg)
            }
        }
    }

    pub fn relu(&self, x: Var) -> Var {
        self.activation(Activation::Relu, x)
    }

    pub fn elu_plus_one(&self, x: Var) -> Var {
        self.activation(Activation::EluPlusOne, x)
    }

    pub fn softmax(&self, x: Var) -> Var {
        self.activation(Activation::Softmax, x)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let value = {
            let (va, vb) = (self.value(a), self.value(b));
            if va.ncols() != vb.nrows() {
                return Err(shape_err("matmul", va.dim(), vb.dim()));
            }
            va.dot(&*vb)
        };
        let rg = self.needs(&[a, b]);
        Ok(self.push(Op::MatMul(a, b), value, rg))
    }

    /// `x w^T + b` with `w: out x in` and `b: 1 x out`.
    pub fn linear(&self, x: Var, w: Var, b: Var) -> Result<Var> {
        let value = {
            let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
            if vx.ncols() != vw.ncols() {
                return Err(shape_err("linear input vs weight", vx.dim(), vw.dim()));
            }
            if vb.dim() != (1, vw.nrows()) {
                return Err(shape_err("linear bias vs weight", vb.dim(), vw.dim()));
            }
            vx.dot(&vw.t()) + &*vb
        };
        let rg = self.needs(&[x, w, b]);
        Ok(self.push(Op::Linear { x, w, b }, value, rg))
    }

    /// Repeats a `1 x c` row `rows` times.
    pub fn broadcast_rows(&self, x: Var, rows: usize) -> Var {
        let value = {
            let v = self.value(x);
            assert_eq!(v.nrows(), 1, "broadcast_rows expects a single row");
            v.broadcast((rows, v.ncols())).expect("row broadcast").to_owned()
        };
        let rg = self.needs(&[x]);
        self.push(Op::BroadcastRows(x), value, rg)
    }

    pub fn slice_cols(&self, x: Var, start: usize, len: usize) -> Var {
        let value = self.value(x).slice(s![.., start..start + len]).to_owned();
        let rg = self.needs(&[x]);
        self.push(Op::SliceCols(x, start), value, rg)
    }

    pub fn slice_rows(&self, x: Var, start: usize, len: usize) -> Var {
        let value = self.value(x).slice(s![start..start + len, ..]).to_owned();
        let rg = self.needs(&[x]);
        self.push(Op::SliceRows(x, start), value, rg)
    }

    pub fn concat_cols(&self, xs: &[Var]) -> Var {
        let value = {
            let vals: Vec<_> = xs.iter().map(|v| self.value(*v)).collect();
            let views: Vec<_> = vals.iter().map(|v| v.view()).collect();
            ndarray::concatenate(Axis(1), &views).expect("concat_cols needs equal row counts")
        };
        let rg = self.needs(xs);
        self.push(Op::ConcatCols(xs.to_vec()), value, rg)
    }

    pub fn concat_rows(&self, xs: &[Var]) -> Var {
        let value = {
            let vals: Vec<_> = xs.iter().map(|v| self.value(*v)).collect();
            let views: Vec<_> = vals.iter().map(|v| v.view()).collect();
            ndarray::concatenate(Axis(0), &views).expect("concat_rows needs equal column counts")
        };
        let rg = self.needs(xs);
        self.push(Op::ConcatRows(xs.to_vec()), value, rg)
    }

    /// Row `r` of the output is row `r` of `on_true` where `mask[r]`, else of `on_false`.
    pub fn select_rows(&self, mask: &[bool], on_true: Var, on_false: Var) -> Var {
        let value = {
            let (a, b) = (self.value(on_true), self.value(on_false));
            assert!(a.dim() == b.dim() && a.nrows() == mask.len(), "select_rows shape mismatch");
            let mut out = b.clone();
            for (r, &m) in mask.iter().enumerate() {
                if m {
                    out.row_mut(r).assign(&a.row(r));
                }
            }
            out
        };
        let rg = self.needs(&[on_true, on_false]);
        self.push(Op::SelectRows(mask.to_vec(), on_true, on_false), value, rg)
    }

    /// Sums consecutive groups of `group` rows: `(g * group) x c -> g x c`.
    pub fn segment_sum(&self, x: Var, group: usize) -> Var {
        let value = {
            let v = self.value(x);
            assert!(group > 0 && v.nrows().is_multiple_of(group), "segment_sum: rows not divisible by group");
            let g = v.nrows() / group;
            let mut out = Tensor::zeros((g, v.ncols()));
            for (r, row) in v.rows().into_iter().enumerate() {
                let mut o = out.row_mut(r / group);
                o += &row;
            }
            out
        };
        let rg = self.needs(&[x]);
        self.push(Op::SegmentSum(x, group), value, rg)
    }

    /// Sum of all entries as a `1 x 1` tensor.
    pub fn sum(&self, x: Var) -> Var {
        let total = self.value(x).sum();
        let rg = self.needs(&[x]);
        self.push(Op::SumAll(x), Tensor::from_elem((1, 1), total), rg)
    }

    /// Reverse sweep from a scalar `loss`, returning gradients of every node.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        let inner = self.inner.borrow();
        if inner.nodes.is_empty() {
            return Err(Error::EmptyTape);
        }
        let shape = inner.nodes[loss.0].value.dim();
        if shape != (1, 1) {
            return Err(Error::DimensionMismatch(format!("loss must be 1x1, got {}x{}", shape.0, shape.1)));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_elem((1, 1), 1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &inner.nodes[idx];
            if node.requires_grad {
                backprop(&inner.nodes, node, &node.value, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        let params = inner.params.iter().map(|(id, v)| (*id, *v)).collect();
        Ok(Gradients { grads, params })
    }

    /// Reverse sweep from `loss`, adding parameter gradients into `store`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        self.gradients(loss)?.accumulate_into(store);
        Ok(())
    }
}

/// `elu(v) + 1`, clamped below at the smallest positive normal so that very
/// negative inputs still give a usable variance.
pub fn elu_plus_one(v: f64) -> f64 {
    if v >= 0.0 {
        v + 1.0
    } else {
        v.exp().max(f64::MIN_POSITIVE)
    }
}

/// Gradients produced by [`Tape::gradients`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient with respect to `v`; `None` when `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for (id, v) in &self.params {
            if let Some(g) = self.get(*v) {
                *store.grad_mut(*id) += g;
            }
        }
    }
}

fn add_grad(grads: &mut [Option<Tensor>], nodes: &[Node], v: Var, g: Tensor) {
    if !nodes[v.0].requires_grad {
        return;
    }
    match &mut grads[v.0] {
        Some(acc) => *acc += &g,
        slot => *slot = Some(g),
    }
}

/// Adds `g` into a sub-block of `v`'s gradient, allocating it on first touch.
fn add_grad_block(
    grads: &mut [Option<Tensor>],
    nodes: &[Node],
    v: Var,
    rows: std::ops::Range<usize>,
    cols: std::ops::Range<usize>,
    g: ndarray::ArrayView2<f64>,
) {
    if !nodes[v.0].requires_grad {
        return;
    }
    let acc = grads[v.0].get_or_insert_with(|| Tensor::zeros(nodes[v.0].value.dim()));
    let mut block = acc.slice_mut(s![rows, cols]);
    block += &g;
}

fn backprop(nodes: &[Node], node: &Node, y: &Tensor, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let val = |v: &Var| &nodes[v.0].value;
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            add_grad(grads, nodes, *a, g.clone());
            add_grad(grads, nodes, *b, g.clone());
        }
        Op::Sub(a, b) => {
            add_grad(grads, nodes, *a, g.clone());
            add_grad(grads, nodes, *b, -g);
        }
        Op::Mul(a, b) => {
            add_grad(grads, nodes, *a, g * val(b));
            add_grad(grads, nodes, *b, g * val(a));
        }
        Op::Div(a, b) => {
            let (va, vb) = (val(a), val(b));
            add_grad(grads, nodes, *a, g / vb);
            let gb = Zip::from(g).and(va).and(vb).map_collect(|&g, &x, &y| -g * x / (y * y));
            add_grad(grads, nodes, *b, gb);
        }
        Op::Affine(x, scale) => add_grad(grads, nodes, *x, g * *scale),
        Op::Recip(x) => add_grad(grads, nodes, *x, Zip::from(g).and(y).map_collect(|&g, &y| -g * y * y)),
        Op::Square(x) => add_grad(grads, nodes, *x, Zip::from(g).and(val(x)).map_collect(|&g, &x| 2.0 * g * x)),
        Op::Sqrt(x) => add_grad(grads, nodes, *x, Zip::from(g).and(y).map_collect(|&g, &y| 0.5 * g / y)),
        Op::Exp(x) => add_grad(grads, nodes, *x, g * y),
        Op::Ln(x) => add_grad(grads, nodes, *x, g / val(x)),
        Op::Relu(x) => add_grad(
            grads,
            nodes,
            *x,
            Zip::from(g).and(val(x)).map_collect(|&g, &x| if x > 0.0 { g } else { 0.0 }),
        ),
        Op::EluPlusOne(x) => add_grad(
            grads,
            nodes,
            *x,
            Zip::from(g).and(val(x)).and(y).map_collect(|&g, &x, &y| if x >= 0.0 { g } else { g * y }),
        ),
        Op::Tanh(x) => add_grad(grads, nodes, *x, Zip::from(g).and(y).map_collect(|&g, &y| g * (1.0 - y * y))),
        Op::Softmax(x) => {
            let mut gx = g * y;
            for (mut row, yrow) in gx.rows_mut().into_iter().zip(y.rows()) {
                let dot = row.sum();
                row.zip_mut_with(&yrow, |r, &yv| *r -= yv * dot);
            }
            add_grad(grads, nodes, *x, gx);
        }
        Op::Floor(x, floor) => add_grad(
            grads,
            nodes,
            *x,
            Zip::from(g).and(val(x)).map_collect(|&g, &x| if x >= *floor { g } else { 0.0 }),
        ),
        Op::MatMul(a, b) => {
            if nodes[a.0].requires_grad {
                add_grad(grads, nodes, *a, g.dot(&val(b).t()));
            }
            if nodes[b.0].requires_grad {
                add_grad(grads, nodes, *b, val(a).t().dot(g));
            }
        }
        Op::Linear { x, w, b } => {
            if nodes[x.0].requires_grad {
                add_grad(grads, nodes, *x, g.dot(val(w)));
            }
            if nodes[w.0].requires_grad {
                add_grad(grads, nodes, *w, g.t().dot(val(x)));
            }
            if nodes[b.0].requires_grad {
                add_grad(grads, nodes, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            }
        }
        Op::BroadcastRows(x) => add_grad(grads, nodes, *x, g.sum_axis(Axis(0)).insert_axis(Axis(0))),
        Op::SliceCols(x, start) => {
            let rows = val(x).nrows();
            add_grad_block(grads, nodes, *x, 0..rows, *start..*start + g.ncols(), g.view());
        }
        Op::SliceRows(x, start) => {
            let cols = val(x).ncols();
            add_grad_block(grads, nodes, *x, *start..*start + g.nrows(), 0..cols, g.view());
        }
        Op::ConcatCols(xs) => {
            let mut offset = 0;
            for x in xs {
                let c = val(x).ncols();
                add_grad(grads, nodes, *x, g.slice(s![.., offset..offset + c]).to_owned());
                offset += c;
            }
        }
        Op::ConcatRows(xs) => {
            let mut offset = 0;
            for x in xs {
                let r = val(x).nrows();
                add_grad(grads, nodes, *x, g.slice(s![offset..offset + r, ..]).to_owned());
                offset += r;
            }
        }
        Op::SelectRows(mask, a, b) => {
            let mut ga = g.clone();
            let mut gb = g.clone();
            for (r, &m) in mask.iter().enumerate() {
                if m {
                    gb.row_mut(r).fill(0.0);
                } else {
                    ga.row_mut(r).fill(0.0);
                }
            }
            add_grad(grads, nodes, *a, ga);
            add_grad(grads, nodes, *b, gb);
        }
        Op::SegmentSum(x, group) => {
            let rows = val(x).nrows();
            let mut gx = Tensor::zeros((rows, g.ncols()));
            for (r, mut row) in gx.rows_mut().into_iter().enumerate() {
                row.assign(&g.row(r / group));
            }
            add_grad(grads, nodes, *x, gx);
        }
        Op::SumAll(x) => add_grad(grads, nodes, *x, Tensor::from_elem(val(x).dim(), g[[0, 0]])),
    }
}
