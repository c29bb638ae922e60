//! Reverse-mode differentiation over batched matrices.
//!
//! Every value on a [`Tape`] is a `[batch, rows, cols]` array. Gradients are
//! themselves recorded on the tape as ordinary nodes, so a gradient can be
//! differentiated again; the gradient penalty relies on this to get exact
//! parameter gradients of a critic's input-gradient norm.
//!
//! Nodes are appended in evaluation order, so a node's parents always have
//! smaller ids and reverse id order is a valid topological order.

use std::cell::{Ref, RefCell};
use std::rc::Rc;

use ndarray::{s, Array3, ArrayView2, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};

pub type Shape = [usize; 3];

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    id: usize,
    shape: Shape,
}

impl Var {
    pub fn id(self) -> usize {
        self.id
    }

    pub fn shape(self) -> Shape {
        self.shape
    }

    pub fn batch(self) -> usize {
        self.shape[0]
    }

    pub fn rows(self) -> usize {
        self.shape[1]
    }

    pub fn cols(self) -> usize {
        self.shape[2]
    }

    pub fn len(self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Tanh(usize),
    Softmax(usize),
    Powf(usize, f64),
    SqrtSafe(usize),
    RecipSafe(usize),
    SumCols(usize),
    ExpandCols(usize),
    SumRows(usize),
    ExpandRows(usize),
    SumBatch(usize),
    ExpandBatch(usize),
    Reshape(usize),
    GatherRows(usize, Rc<[usize]>),
    ScatterRows(usize, Rc<[usize]>),
    SliceCols(usize, usize),
    PadCols(usize, usize),
}

struct Node {
    value: Array3<f64>,
    shape: Shape,
    op: Op,
}

/// Append-only computation record.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

fn dims(a: &Array3<f64>) -> Shape {
    let (b, r, c) = a.dim();
    [b, r, c]
}

const PAR_MIN_BATCH: usize = 8;
/// Products with fewer multiply-adds than this skip the blocked kernel.
const SMALL_GEMM: usize = 1 << 14;

fn gemm(a: ArrayView2<f64>, b: ArrayView2<f64>, mut out: ndarray::ArrayViewMut2<f64>) {
    let (r, k) = a.dim();
    let c = b.ncols();
    if r * k * c >= SMALL_GEMM {
        ndarray::linalg::general_mat_mul(1.0, &a, &b, 0.0, &mut out);
        return;
    }
    let a = a.as_standard_layout();
    let b = b.as_standard_layout();
    let (a, b) = (a.as_slice().unwrap(), b.as_slice().unwrap());
    let Some(o) = out.as_slice_mut() else {
        let (a, b) = (
            ArrayView2::from_shape((r, k), a).unwrap(),
            ArrayView2::from_shape((k, c), b).unwrap(),
        );
        ndarray::linalg::general_mat_mul(1.0, &a, &b, 0.0, &mut out);
        return;
    };
    o.fill(0.0);
    if c == 0 {
        return;
    }
    for (i, row) in o.chunks_exact_mut(c).enumerate() {
        for p in 0..k {
            let av = a[i * k + p];
            for (x, &bv) in row.iter_mut().zip(&b[p * c..(p + 1) * c]) {
                *x += av * bv;
            }
        }
    }
}

fn batched_matmul(a: &Array3<f64>, b: &Array3<f64>) -> Array3<f64> {
    let [ba, r, k] = dims(a);
    let [bb, k2, c] = dims(b);
    assert_eq!(k, k2, "matmul inner dimensions {k} vs {k2}");
    let batch = ba.max(bb);
    assert!(ba == bb || ba == 1 || bb == 1, "matmul batch {ba} vs {bb}");
    let mut out = Array3::<f64>::zeros((batch, r, c));
    if bb == 1 && ba > 1 && a.is_standard_layout() {
        // shared right factor: one tall product
        let a2 = a.view().into_shape_with_order((ba * r, k)).unwrap();
        let o2 = out.view_mut().into_shape_with_order((ba * r, c)).unwrap();
        gemm(a2, b.index_axis(Axis(0), 0), o2);
        return out;
    }
    let kernel = |i: usize, o: ndarray::ArrayViewMut2<f64>| {
        let ai = a.index_axis(Axis(0), if ba == 1 { 0 } else { i });
        let bi = b.index_axis(Axis(0), if bb == 1 { 0 } else { i });
        gemm(ai, bi, o);
    };
    if batch >= PAR_MIN_BATCH && rayon::current_num_threads() > 1 {
        out.axis_iter_mut(Axis(0))
            .into_par_iter()
            .enumerate()
            .for_each(|(i, o)| kernel(i, o));
    } else {
        for (i, o) in out.axis_iter_mut(Axis(0)).enumerate() {
            kernel(i, o);
        }
    }
    out
}

fn softmax_last(a: &Array3<f64>) -> Array3<f64> {
    let mut out = a.clone();
    for mut row in out.lanes_mut(Axis(2)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
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

    pub fn value(&self, v: Var) -> Ref<'_, Array3<f64>> {
        Ref::map(self.nodes.borrow(), |n| &n[v.id].value)
    }

    /// Value of a `[1, 1, 1]` node.
    pub fn scalar(&self, v: Var) -> f64 {
        assert_eq!(v.len(), 1, "scalar() on shape {:?}", v.shape);
        self.value(v)[[0, 0, 0]]
    }

    fn push(&self, value: Array3<f64>, op: Op) -> Var {
        let shape = dims(&value);
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, shape, op });
        Var {
            id: nodes.len() - 1,
            shape,
        }
    }

    fn unary(&self, a: Var, op: Op, f: impl FnOnce(&Array3<f64>) -> Array3<f64>) -> Var {
        let value = f(&self.nodes.borrow()[a.id].value);
        self.push(value, op)
    }

    fn binary(
        &self,
        a: Var,
        b: Var,
        op: Op,
        f: impl FnOnce(&Array3<f64>, &Array3<f64>) -> Array3<f64>,
    ) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            f(&nodes[a.id].value, &nodes[b.id].value)
        };
        self.push(value, op)
    }

    pub fn leaf(&self, value: Array3<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn zeros(&self, shape: Shape) -> Var {
        self.leaf(Array3::zeros((shape[0], shape[1], shape[2])))
    }

    pub fn constant(&self, shape: Shape, value: f64) -> Var {
        self.leaf(Array3::from_elem((shape[0], shape[1], shape[2]), value))
    }

    /// Batched product; a batch of 1 on either side broadcasts.
    pub fn matmul(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::MatMul(a.id, b.id), batched_matmul)
    }

    pub fn transpose(&self, a: Var) -> Var {
        self.unary(a, Op::Transpose(a.id), |x| {
            x.view()
                .permuted_axes([0, 2, 1])
                .as_standard_layout()
                .to_owned()
        })
    }

    fn check_same(a: Var, b: Var, what: &str) {
        assert_eq!(a.shape, b.shape, "{what}: shape mismatch");
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        Self::check_same(a, b, "add");
        self.binary(a, b, Op::Add(a.id, b.id), |x, y| x + y)
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        Self::check_same(a, b, "sub");
        self.binary(a, b, Op::Sub(a.id, b.id), |x, y| x - y)
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        Self::check_same(a, b, "mul");
        self.binary(a, b, Op::Mul(a.id, b.id), |x, y| x * y)
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a.id, c), |x| x * c)
    }

    pub fn add_scalar(&self, a: Var, c: f64) -> Var {
        self.unary(a, Op::AddScalar(a.id), |x| x + c)
    }

    pub fn tanh(&self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a.id), |x| x.mapv(f64::tanh))
    }

    /// Softmax along the last axis.
    pub fn softmax(&self, a: Var) -> Var {
        self.unary(a, Op::Softmax(a.id), softmax_last)
    }

    pub fn powf(&self, a: Var, p: f64) -> Var {
        self.unary(a, Op::Powf(a.id, p), |x| x.mapv(|v| v.powf(p)))
    }

    /// Square root whose derivative is taken as 0 at 0.
    pub fn sqrt_safe(&self, a: Var) -> Var {
        self.unary(a, Op::SqrtSafe(a.id), |x| x.mapv(|v| v.max(0.0).sqrt()))
    }

    /// `1/x`, with 0 mapped to 0.
    pub fn recip_safe(&self, a: Var) -> Var {
        self.unary(a, Op::RecipSafe(a.id), |x| {
            x.mapv(|v| if v == 0.0 { 0.0 } else { 1.0 / v })
        })
    }

    /// `[b, r, c] -> [b, r, 1]`
    pub fn sum_cols(&self, a: Var) -> Var {
        self.unary(a, Op::SumCols(a.id), |x| {
            x.sum_axis(Axis(2)).insert_axis(Axis(2))
        })
    }

    /// `[b, r, 1] -> [b, r, cols]`
    pub fn expand_cols(&self, a: Var, cols: usize) -> Var {
        assert_eq!(a.cols(), 1);
        self.unary(a, Op::ExpandCols(a.id), |x| {
            x.broadcast((a.batch(), a.rows(), cols)).unwrap().to_owned()
        })
    }

    /// `[b, r, c] -> [b, 1, c]`
    pub fn sum_rows(&self, a: Var) -> Var {
        self.unary(a, Op::SumRows(a.id), |x| {
            x.sum_axis(Axis(1)).insert_axis(Axis(1))
        })
    }

    /// `[b, 1, c] -> [b, rows, c]`
    pub fn expand_rows(&self, a: Var, rows: usize) -> Var {
        assert_eq!(a.rows(), 1);
        self.unary(a, Op::ExpandRows(a.id), |x| {
            x.broadcast((a.batch(), rows, a.cols())).unwrap().to_owned()
        })
    }

    /// `[b, r, c] -> [1, r, c]`
    pub fn sum_batch(&self, a: Var) -> Var {
        self.unary(a, Op::SumBatch(a.id), |x| {
            x.sum_axis(Axis(0)).insert_axis(Axis(0))
        })
    }

    /// `[1, r, c] -> [batch, r, c]`
    pub fn expand_batch(&self, a: Var, batch: usize) -> Var {
        assert_eq!(a.batch(), 1);
        self.unary(a, Op::ExpandBatch(a.id), |x| {
            x.broadcast((batch, a.rows(), a.cols())).unwrap().to_owned()
        })
    }

    pub fn sum_all(&self, a: Var) -> Var {
        let c = self.sum_cols(a);
        let r = self.sum_rows(c);
        self.sum_batch(r)
    }

    pub fn mean_all(&self, a: Var) -> Var {
        let n = a.len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Broadcasts a `[1, 1, c]`, `[1, r, c]` or `[b, 1, c]` node to `shape`.
    pub fn broadcast(&self, a: Var, shape: Shape) -> Var {
        let mut v = a;
        if v.rows() != shape[1] {
            v = self.expand_rows(v, shape[1]);
        }
        if v.batch() != shape[0] {
            v = self.expand_batch(v, shape[0]);
        }
        assert_eq!(
            v.shape, shape,
            "cannot broadcast {:?} to {shape:?}",
            a.shape
        );
        v
    }

    pub fn reshape(&self, a: Var, shape: Shape) -> Var {
        assert_eq!(
            a.len(),
            shape.iter().product::<usize>(),
            "reshape {:?} -> {shape:?}",
            a.shape
        );
        self.unary(a, Op::Reshape(a.id), |x| {
            x.as_standard_layout()
                .to_owned()
                .into_shape_with_order((shape[0], shape[1], shape[2]))
                .unwrap()
        })
    }

    /// Picks rows of the flattened `[b * r, c]` view into a `[batch, rows, c]`
    /// result (`batch * rows == idx.len()`).
    pub fn gather_rows(&self, a: Var, idx: Rc<[usize]>, batch: usize) -> Var {
        assert_eq!(idx.len() % batch, 0);
        let rows = idx.len() / batch;
        let cols = a.cols();
        let total = a.batch() * a.rows();
        assert!(idx.iter().all(|&i| i < total), "gather index out of range");
        let op = Op::GatherRows(a.id, idx.clone());
        self.unary(a, op, |x| {
            let flat = x.view().into_shape_with_order((total, cols)).unwrap();
            let mut out = Array3::zeros((batch, rows, cols));
            for (k, &i) in idx.iter().enumerate() {
                out.slice_mut(s![k / rows, k % rows, ..])
                    .assign(&flat.row(i));
            }
            out
        })
    }

    /// Adds each row of `a` (flattened) into row `idx[k]` of a zero
    /// `shape`-sized result.
    pub fn scatter_rows(&self, a: Var, idx: Rc<[usize]>, shape: Shape) -> Var {
        assert_eq!(idx.len(), a.batch() * a.rows());
        assert_eq!(a.cols(), shape[2]);
        let total = shape[0] * shape[1];
        assert!(idx.iter().all(|&i| i < total), "scatter index out of range");
        let op = Op::ScatterRows(a.id, idx.clone());
        self.unary(a, op, |x| {
            let cols = shape[2];
            let src = x.view().into_shape_with_order((idx.len(), cols)).unwrap();
            let mut out = ndarray::Array2::<f64>::zeros((total, cols));
            for (k, &i) in idx.iter().enumerate() {
                let mut row = out.row_mut(i);
                row += &src.row(k);
            }
            out.into_shape_with_order((shape[0], shape[1], cols))
                .unwrap()
        })
    }

    pub fn slice_cols(&self, a: Var, start: usize, len: usize) -> Var {
        assert!(start + len <= a.cols());
        self.unary(a, Op::SliceCols(a.id, start), |x| {
            x.slice(s![.., .., start..start + len]).to_owned()
        })
    }

    /// Places `a` at column `start` of a zero array with `total` columns.
    pub fn pad_cols(&self, a: Var, start: usize, total: usize) -> Var {
        assert!(start + a.cols() <= total);
        self.unary(a, Op::PadCols(a.id, start), |x| {
            let mut out = Array3::zeros((a.batch(), a.rows(), total));
            out.slice_mut(s![.., .., start..start + a.cols()]).assign(x);
            out
        })
    }

    fn shape_of(&self, id: usize) -> Shape {
        self.nodes.borrow()[id].shape
    }

    fn var(&self, id: usize) -> Var {
        Var {
            id,
            shape: self.shape_of(id),
        }
    }

    /// Reduces a gradient that was computed at a broadcast batch size.
    fn unbroadcast_batch(&self, g: Var, target: Shape) -> Var {
        if g.batch() != target[0] {
            self.sum_batch(g)
        } else {
            g
        }
    }

    /// Vector-Jacobian products of node `id` with respect to its parents.
    fn vjp(&self, id: usize, g: Var) -> Vec<(usize, Var)> {
        let op = self.nodes.borrow()[id].op.clone();
        let me = self.var(id);
        match op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let (va, vb) = (self.var(a), self.var(b));
                let bt = self.transpose(vb);
                let ga = self.matmul(g, bt);
                let ga = self.unbroadcast_batch(ga, va.shape);
                let gb = if vb.batch() == 1 && va.batch() > 1 {
                    let rows = va.batch() * va.rows();
                    let a2 = self.reshape(va, [1, rows, va.cols()]);
                    let g2 = self.reshape(g, [1, rows, g.cols()]);
                    self.matmul(self.transpose(a2), g2)
                } else {
                    let at = self.transpose(va);
                    self.unbroadcast_batch(self.matmul(at, g), vb.shape)
                };
                vec![(a, ga), (b, gb)]
            }
            Op::Transpose(a) => vec![(a, self.transpose(g))],
            Op::Add(a, b) => vec![(a, g), (b, g)],
            Op::Sub(a, b) => vec![(a, g), (b, self.scale(g, -1.0))],
            Op::Mul(a, b) => {
                let (va, vb) = (self.var(a), self.var(b));
                vec![(a, self.mul(g, vb)), (b, self.mul(g, va))]
            }
            Op::Scale(a, c) => vec![(a, self.scale(g, c))],
            Op::AddScalar(a) => vec![(a, g)],
            Op::Tanh(a) => {
                let sq = self.mul(me, me);
                let d = self.add_scalar(self.scale(sq, -1.0), 1.0);
                vec![(a, self.mul(g, d))]
            }
            Op::Softmax(a) => {
                let gy = self.mul(g, me);
                let s = self.expand_cols(self.sum_cols(gy), me.cols());
                vec![(a, self.mul(me, self.sub(g, s)))]
            }
            Op::Powf(a, p) => {
                let va = self.var(a);
                let d = self.scale(self.powf(va, p - 1.0), p);
                vec![(a, self.mul(g, d))]
            }
            Op::SqrtSafe(a) => {
                let d = self.scale(self.recip_safe(me), 0.5);
                vec![(a, self.mul(g, d))]
            }
            Op::RecipSafe(a) => {
                let d = self.scale(self.mul(me, me), -1.0);
                vec![(a, self.mul(g, d))]
            }
            Op::SumCols(a) => vec![(a, self.expand_cols(g, self.shape_of(a)[2]))],
            Op::ExpandCols(a) => vec![(a, self.sum_cols(g))],
            Op::SumRows(a) => vec![(a, self.expand_rows(g, self.shape_of(a)[1]))],
            Op::ExpandRows(a) => vec![(a, self.sum_rows(g))],
            Op::SumBatch(a) => vec![(a, self.expand_batch(g, self.shape_of(a)[0]))],
            Op::ExpandBatch(a) => vec![(a, self.sum_batch(g))],
            Op::Reshape(a) => vec![(a, self.reshape(g, self.shape_of(a)))],
            Op::GatherRows(a, idx) => vec![(a, self.scatter_rows(g, idx, self.shape_of(a)))],
            Op::ScatterRows(a, idx) => {
                let sa = self.shape_of(a);
                let gathered = self.gather_rows(g, idx, sa[0]);
                vec![(a, gathered)]
            }
            Op::SliceCols(a, start) => {
                vec![(a, self.pad_cols(g, start, self.shape_of(a)[2]))]
            }
            Op::PadCols(a, start) => {
                vec![(a, self.slice_cols(g, start, self.shape_of(a)[2]))]
            }
        }
    }

    fn parents(&self, id: usize) -> Vec<usize> {
        match &self.nodes.borrow()[id].op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Tanh(a)
            | Op::Softmax(a)
            | Op::Powf(a, _)
            | Op::SqrtSafe(a)
            | Op::RecipSafe(a)
            | Op::SumCols(a)
            | Op::ExpandCols(a)
            | Op::SumRows(a)
            | Op::ExpandRows(a)
            | Op::SumBatch(a)
            | Op::ExpandBatch(a)
            | Op::Reshape(a)
            | Op::GatherRows(a, _)
            | Op::ScatterRows(a, _)
            | Op::SliceCols(a, _)
            | Op::PadCols(a, _) => vec![*a],
        }
    }

    /// Gradients of `sum(y)` with respect to each of `xs`, recorded on the
    /// tape so they can be differentiated again. Inputs `y` does not depend
    /// on get an all-zero gradient.
    pub fn grad(&self, y: Var, xs: &[Var]) -> Result<Vec<Var>> {
        let len = self.len();
        if y.id >= len || self.shape_of(y.id) != y.shape {
            return Err(Error::BackwardBeforeForward);
        }
        if xs.iter().any(|x| x.id >= len) {
            return Err(Error::BackwardBeforeForward);
        }
        let top = y.id;
        let mut requires = vec![false; top + 1];
        for x in xs {
            if x.id <= top {
                requires[x.id] = true;
            }
        }
        for id in 0..=top {
            if !requires[id] && self.parents(id).iter().any(|&p| requires[p]) {
                requires[id] = true;
            }
        }

        let mut adj: Vec<Option<Var>> = vec![None; top + 1];
        if requires[top] {
            adj[top] = Some(self.constant(y.shape, 1.0));
        }
        for id in (0..=top).rev() {
            let Some(g) = adj[id] else { continue };
            if !requires[id] {
                continue;
            }
            for (parent, contrib) in self.vjp(id, g) {
                if !requires[parent] {
                    continue;
                }
                adj[parent] = Some(match adj[parent] {
                    None => contrib,
                    Some(prev) => self.add(prev, contrib),
                });
            }
        }
        Ok(xs
            .iter()
            .map(|x| match adj.get(x.id).copied().flatten() {
                Some(g) => g,
                None => self.zeros(x.shape),
            })
            .collect())
    }
}

/// Elementwise product with a constant array, used for masks.
pub fn hadamard_const(tape: &Tape, a: Var, c: Array3<f64>) -> Var {
    let k = tape.leaf(c);
    tape.mul(a, k)
}

/// Squared Frobenius norm of an array.
pub fn sq_norm(a: &Array3<f64>) -> f64 {
    a.iter().map(|v| v * v).sum()
}

/// Componentwise `|a - b| / max(|a|, |b|, floor)` maximised over entries.
pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
