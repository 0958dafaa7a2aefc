//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Graph`] is a tape of matrix-valued nodes; ops append nodes and record
//! their inputs, `backward` walks the tape in reverse accumulating gradients.
//! Scalars are 1x1 matrices, vectors are 1xD rows.  The op set is exactly what
//! the sequence models need: affine maps, attention pieces (masked softmax,
//! transposed matmul, per-head column slicing), row normalization, GELU /
//! sigmoid / abs / square pointwise maps, gather for embeddings, and fused
//! mean-reduction losses.
//!
//! Shape agreement between op inputs is a programming error and panics;
//! fallible validation belongs to the public model APIs on top.

use ndarray::{s, Array2, Axis};

use crate::scalar::{s as sc, Scalar};

/// Index of a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

/// Epsilon inside row normalization's variance square root.
pub const NORM_EPS: f64 = 1e-5;

enum Op<T: Scalar> {
    Leaf,
    /// A · B
    Matmul(NodeId, NodeId),
    /// A · Bᵀ
    MatmulNT(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// Broadcast-add a 1xD row to every row of A.
    AddRow(NodeId, NodeId),
    /// Broadcast-multiply every row of A by a 1xD row.
    MulRow(NodeId, NodeId),
    Scale(NodeId, f64),
    /// Per-row standardization to mean 0 / variance 1; stores 1/sqrt(var+eps).
    NormalizeRows(NodeId, Vec<T>),
    /// Row softmax; `false` mask entries get exactly zero probability.
    SoftmaxRows(NodeId, Option<Array2<bool>>),
    Gelu(NodeId),
    Sigmoid(NodeId),
    Abs(NodeId),
    Square(NodeId),
    /// out[r] = a[indices[r]]
    GatherRows(NodeId, Vec<usize>),
    ConcatRows(NodeId, NodeId),
    ConcatCols(NodeId, NodeId),
    SliceCols(NodeId, usize, usize),
    MeanAll(NodeId),
    Pick(NodeId, usize, usize),
    /// Mean binary cross-entropy of logits against constant targets.
    BceLogitsMean(NodeId, Array2<T>),
    /// Mean token cross-entropy of row logits against constant class ids.
    CeMean(NodeId, Vec<usize>),
}

struct Node<T: Scalar> {
    value: Array2<T>,
    op: Op<T>,
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`NodeId`].
pub struct Grads<T: Scalar> {
    g: Vec<Option<Array2<T>>>,
}

impl<T: Scalar> Grads<T> {
    pub fn get(&self, id: NodeId) -> Option<&Array2<T>> {
        self.g.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a node, zeros if the loss does not depend on it.
    pub fn get_or_zeros(&self, id: NodeId, shape: (usize, usize)) -> Array2<T> {
        match self.get(id) {
            Some(g) => g.clone(),
            None => Array2::zeros(shape),
        }
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array2<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        let v = &self.nodes[id.0].value;
        (v.nrows(), v.ncols())
    }

    fn push(&mut self, value: Array2<T>, op: Op<T>) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Array2<T>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(av.ncols(), bv.nrows(), "matmul inner dims");
        let value = av.dot(bv);
        self.push(value, Op::Matmul(a, b))
    }

    /// A · Bᵀ (attention scores; avoids materializing transposes on the tape).
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(av.ncols(), bv.ncols(), "matmul_nt inner dims");
        let value = av.dot(&bv.t());
        self.push(value, Op::MatmulNT(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = {
            let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
            assert_eq!(av.dim(), bv.dim(), "add shapes");
            av + bv
        };
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = {
            let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
            assert_eq!(av.dim(), bv.dim(), "sub shapes");
            av - bv
        };
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = {
            let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
            assert_eq!(av.dim(), bv.dim(), "mul shapes");
            av * bv
        };
        self.push(value, Op::Mul(a, b))
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let value = {
            let (av, rv) = (&self.nodes[a.0].value, &self.nodes[row.0].value);
            assert_eq!(rv.nrows(), 1, "add_row broadcast row");
            assert_eq!(av.ncols(), rv.ncols(), "add_row widths");
            av + &rv.row(0)
        };
        self.push(value, Op::AddRow(a, row))
    }

    pub fn mul_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let value = {
            let (av, rv) = (&self.nodes[a.0].value, &self.nodes[row.0].value);
            assert_eq!(rv.nrows(), 1, "mul_row broadcast row");
            assert_eq!(av.ncols(), rv.ncols(), "mul_row widths");
            av * &rv.row(0)
        };
        self.push(value, Op::MulRow(a, row))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = self.nodes[a.0].value.mapv(|x| x * sc::<T>(c));
        self.push(value, Op::Scale(a, c))
    }

    /// Per-row (x - mean) / sqrt(var + eps) with population variance.
    pub fn normalize_rows(&mut self, a: NodeId) -> NodeId {
        let av = &self.nodes[a.0].value;
        let cols = av.ncols();
        let mut value = av.clone();
        let mut inv_s = Vec::with_capacity(av.nrows());
        for mut row in value.rows_mut() {
            let n = sc::<T>(cols as f64);
            let mean = row.sum() / n;
            let mut var = T::zero();
            for &x in row.iter() {
                let d = x - mean;
                var += d * d;
            }
            var /= n;
            let s = (var + sc::<T>(NORM_EPS)).sqrt();
            let inv = T::one() / s;
            for x in row.iter_mut() {
                *x = (*x - mean) * inv;
            }
            inv_s.push(inv);
        }
        self.push(value, Op::NormalizeRows(a, inv_s))
    }

    /// Row softmax with numerically stable max subtraction.  `mask[i][j] ==
    /// false` forces probability exactly 0; a fully masked row is a caller
    /// bug (validated by public APIs) and panics here.
    pub fn softmax_rows(&mut self, a: NodeId, mask: Option<Array2<bool>>) -> NodeId {
        let av = &self.nodes[a.0].value;
        if let Some(m) = &mask {
            assert_eq!(m.dim(), av.dim(), "softmax mask shape");
        }
        let mut value = Array2::zeros(av.dim());
        for (i, row) in av.rows().into_iter().enumerate() {
            let allowed = |j: usize| mask.as_ref().is_none_or(|m| m[[i, j]]);
            let mut max: Option<T> = None;
            for (j, &x) in row.iter().enumerate() {
                if allowed(j) {
                    max = Some(match max {
                        Some(m) if m >= x => m,
                        _ => x,
                    });
                }
            }
            let max = max.unwrap_or_else(|| panic!("softmax row {i} fully masked"));
            let mut denom = T::zero();
            for (j, &x) in row.iter().enumerate() {
                if allowed(j) {
                    let e = (x - max).exp();
                    value[[i, j]] = e;
                    denom += e;
                }
            }
            for j in 0..row.len() {
                if allowed(j) {
                    value[[i, j]] /= denom;
                }
            }
        }
        self.push(value, Op::SoftmaxRows(a, mask))
    }

    /// GELU, tanh approximation (the derivative matches this approximation).
    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a.0].value.mapv(gelu_value);
        self.push(value, Op::Gelu(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a.0].value.mapv(sigmoid_value);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a.0].value.mapv(|x| x.abs());
        self.push(value, Op::Abs(a))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a.0].value.mapv(|x| x * x);
        self.push(value, Op::Square(a))
    }

    pub fn gather_rows(&mut self, a: NodeId, indices: &[usize]) -> NodeId {
        let av = &self.nodes[a.0].value;
        let mut value = Array2::zeros((indices.len(), av.ncols()));
        for (r, &i) in indices.iter().enumerate() {
            assert!(i < av.nrows(), "gather index {i} out of {}", av.nrows());
            value.row_mut(r).assign(&av.row(i));
        }
        self.push(value, Op::GatherRows(a, indices.to_vec()))
    }

    pub fn concat_rows(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = {
            let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
            assert_eq!(av.ncols(), bv.ncols(), "concat_rows widths");
            ndarray::concatenate(Axis(0), &[av.view(), bv.view()]).expect("concat rows")
        };
        self.push(value, Op::ConcatRows(a, b))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = {
            let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
            assert_eq!(av.nrows(), bv.nrows(), "concat_cols heights");
            ndarray::concatenate(Axis(1), &[av.view(), bv.view()]).expect("concat cols")
        };
        self.push(value, Op::ConcatCols(a, b))
    }

    pub fn slice_cols(&mut self, a: NodeId, c0: usize, c1: usize) -> NodeId {
        let av = &self.nodes[a.0].value;
        assert!(c0 < c1 && c1 <= av.ncols(), "slice_cols range");
        let value = av.slice(s![.., c0..c1]).to_owned();
        self.push(value, Op::SliceCols(a, c0, c1))
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let av = &self.nodes[a.0].value;
        let n = sc::<T>((av.nrows() * av.ncols()) as f64);
        let value = Array2::from_elem((1, 1), av.sum() / n);
        self.push(value, Op::MeanAll(a))
    }

    pub fn pick(&mut self, a: NodeId, i: usize, j: usize) -> NodeId {
        let value = Array2::from_elem((1, 1), self.nodes[a.0].value[[i, j]]);
        self.push(value, Op::Pick(a, i, j))
    }

    /// Mean over all entries of the stable binary cross-entropy
    /// `max(z,0) - z*t + ln(1 + e^{-|z|})` between logits and targets.
    pub fn bce_logits_mean(&mut self, logits: NodeId, targets: Array2<T>) -> NodeId {
        let lv = &self.nodes[logits.0].value;
        assert_eq!(lv.dim(), targets.dim(), "bce shapes");
        let mut total = T::zero();
        for (&z, &t) in lv.iter().zip(targets.iter()) {
            let zmax = if z > T::zero() { z } else { T::zero() };
            total += zmax - z * t + (T::one() + (-z.abs()).exp()).ln();
        }
        let n = sc::<T>((lv.nrows() * lv.ncols()) as f64);
        let value = Array2::from_elem((1, 1), total / n);
        self.push(value, Op::BceLogitsMean(logits, targets))
    }

    /// Mean cross-entropy of each row's logits against its target class id.
    pub fn ce_mean(&mut self, logits: NodeId, targets: &[usize]) -> NodeId {
        let lv = &self.nodes[logits.0].value;
        assert_eq!(lv.nrows(), targets.len(), "ce row count");
        let mut total = T::zero();
        for (row, &t) in lv.rows().into_iter().zip(targets.iter()) {
            assert!(t < row.len(), "ce target id {t} out of {}", row.len());
            let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
            let mut denom = T::zero();
            for &x in row.iter() {
                denom += (x - max).exp();
            }
            total += denom.ln() + max - row[t];
        }
        let n = sc::<T>(targets.len() as f64);
        let value = Array2::from_elem((1, 1), total / n);
        self.push(value, Op::CeMean(logits, targets.to_vec()))
    }

    /// Reverse pass from a 1x1 loss node.
    pub fn backward(&self, loss: NodeId) -> Grads<T> {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar loss");
        let mut g: Vec<Option<Array2<T>>> = vec![None; self.nodes.len()];
        g[loss.0] = Some(Array2::from_elem((1, 1), T::one()));

        // Interior gradients are dropped once consumed; leaf gradients are
        // retained for the caller.
        for i in (0..self.nodes.len()).rev() {
            let Some(gi) = g[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Leaf => {
                    g[i] = Some(gi);
                }
                Op::Matmul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    accumulate(&mut g, *a, gi.dot(&bv.t()));
                    accumulate(&mut g, *b, av.t().dot(&gi));
                }
                Op::MatmulNT(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    accumulate(&mut g, *a, gi.dot(bv));
                    accumulate(&mut g, *b, gi.t().dot(av));
                }
                Op::Add(a, b) => {
                    accumulate(&mut g, *a, gi.clone());
                    accumulate(&mut g, *b, gi);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut g, *b, gi.mapv(|x| -x));
                    accumulate(&mut g, *a, gi);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    accumulate(&mut g, *a, &gi * bv);
                    accumulate(&mut g, *b, &gi * av);
                }
                Op::AddRow(a, row) => {
                    let row_grad = gi.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut g, *row, row_grad);
                    accumulate(&mut g, *a, gi);
                }
                Op::MulRow(a, row) => {
                    let (av, rv) = (&self.nodes[a.0].value, &self.nodes[row.0].value);
                    let row_grad = (&gi * av).sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut g, *row, row_grad);
                    accumulate(&mut g, *a, &gi * &rv.row(0));
                }
                Op::Scale(a, c) => {
                    accumulate(&mut g, *a, gi.mapv(|x| x * sc::<T>(*c)));
                }
                Op::NormalizeRows(a, inv_s) => {
                    let y = &self.nodes[i].value; // x-hat
                    let cols = sc::<T>(y.ncols() as f64);
                    let mut da = Array2::zeros(y.dim());
                    for r in 0..y.nrows() {
                        let gr = gi.row(r);
                        let yr = y.row(r);
                        let mean_g = gr.sum() / cols;
                        let mut mean_gy = T::zero();
                        for (&gv, &yv) in gr.iter().zip(yr.iter()) {
                            mean_gy += gv * yv;
                        }
                        mean_gy /= cols;
                        for c in 0..y.ncols() {
                            da[[r, c]] = inv_s[r] * (gr[c] - mean_g - yr[c] * mean_gy);
                        }
                    }
                    accumulate(&mut g, *a, da);
                }
                Op::SoftmaxRows(a, _mask) => {
                    let y = &self.nodes[i].value;
                    let mut da = Array2::zeros(y.dim());
                    for r in 0..y.nrows() {
                        let mut dot = T::zero();
                        for c in 0..y.ncols() {
                            dot += gi[[r, c]] * y[[r, c]];
                        }
                        for c in 0..y.ncols() {
                            da[[r, c]] = y[[r, c]] * (gi[[r, c]] - dot);
                        }
                    }
                    accumulate(&mut g, *a, da);
                }
                Op::Gelu(a) => {
                    let x = &self.nodes[a.0].value;
                    let da = ndarray::Zip::from(&gi).and(x).map_collect(|&gv, &xv| gv * gelu_grad(xv));
                    accumulate(&mut g, *a, da);
                }
                Op::Sigmoid(a) => {
                    let y = &self.nodes[i].value;
                    let da = ndarray::Zip::from(&gi)
                        .and(y)
                        .map_collect(|&gv, &yv| gv * yv * (T::one() - yv));
                    accumulate(&mut g, *a, da);
                }
                Op::Abs(a) => {
                    let x = &self.nodes[a.0].value;
                    let da = ndarray::Zip::from(&gi).and(x).map_collect(|&gv, &xv| {
                        if xv > T::zero() {
                            gv
                        } else if xv < T::zero() {
                            -gv
                        } else {
                            T::zero()
                        }
                    });
                    accumulate(&mut g, *a, da);
                }
                Op::Square(a) => {
                    let x = &self.nodes[a.0].value;
                    let two = sc::<T>(2.0);
                    let da = ndarray::Zip::from(&gi).and(x).map_collect(|&gv, &xv| gv * two * xv);
                    accumulate(&mut g, *a, da);
                }
                Op::GatherRows(a, indices) => {
                    let av = &self.nodes[a.0].value;
                    let mut da = Array2::zeros(av.dim());
                    for (r, &idx) in indices.iter().enumerate() {
                        let mut dst = da.row_mut(idx);
                        dst += &gi.row(r);
                    }
                    accumulate(&mut g, *a, da);
                }
                Op::ConcatRows(a, b) => {
                    let ra = self.nodes[a.0].value.nrows();
                    accumulate(&mut g, *a, gi.slice(s![..ra, ..]).to_owned());
                    accumulate(&mut g, *b, gi.slice(s![ra.., ..]).to_owned());
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.nodes[a.0].value.ncols();
                    accumulate(&mut g, *a, gi.slice(s![.., ..ca]).to_owned());
                    accumulate(&mut g, *b, gi.slice(s![.., ca..]).to_owned());
                }
                Op::SliceCols(a, c0, _c1) => {
                    let av = &self.nodes[a.0].value;
                    let mut da = Array2::zeros(av.dim());
                    da.slice_mut(s![.., *c0..*c0 + gi.ncols()]).assign(&gi);
                    accumulate(&mut g, *a, da);
                }
                Op::MeanAll(a) => {
                    let av = &self.nodes[a.0].value;
                    let n = sc::<T>((av.nrows() * av.ncols()) as f64);
                    let v = gi[[0, 0]] / n;
                    accumulate(&mut g, *a, Array2::from_elem(av.dim(), v));
                }
                Op::Pick(a, r, c) => {
                    let av = &self.nodes[a.0].value;
                    let mut da = Array2::zeros(av.dim());
                    da[[*r, *c]] = gi[[0, 0]];
                    accumulate(&mut g, *a, da);
                }
                Op::BceLogitsMean(logits, targets) => {
                    let lv = &self.nodes[logits.0].value;
                    let n = sc::<T>((lv.nrows() * lv.ncols()) as f64);
                    let scale = gi[[0, 0]] / n;
                    let da = ndarray::Zip::from(lv)
                        .and(targets)
                        .map_collect(|&z, &t| (sigmoid_value(z) - t) * scale);
                    accumulate(&mut g, *logits, da);
                }
                Op::CeMean(logits, targets) => {
                    let lv = &self.nodes[logits.0].value;
                    let n = sc::<T>(targets.len() as f64);
                    let scale = gi[[0, 0]] / n;
                    let mut da = Array2::zeros(lv.dim());
                    for (r, &t) in targets.iter().enumerate() {
                        let row = lv.row(r);
                        let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
                        let mut denom = T::zero();
                        for &x in row.iter() {
                            denom += (x - max).exp();
                        }
                        for c in 0..row.len() {
                            let p = (row[c] - max).exp() / denom;
                            let y = if c == t { T::one() } else { T::zero() };
                            da[[r, c]] = (p - y) * scale;
                        }
                    }
                    accumulate(&mut g, *logits, da);
                }
            }
        }
        Grads { g }
    }
}

fn accumulate<T: Scalar>(g: &mut [Option<Array2<T>>], id: NodeId, grad: Array2<T>) {
    match &mut g[id.0] {
        Some(acc) => *acc += &grad,
        slot @ None => *slot = Some(grad),
    }
}

fn sigmoid_value<T: Scalar>(z: T) -> T {
    // Stable in both tails.
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

const GELU_C0: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C1: f64 = 0.044_715;

fn gelu_value<T: Scalar>(x: T) -> T {
    let half = sc::<T>(0.5);
    let u = sc::<T>(GELU_C0) * (x + sc::<T>(GELU_C1) * x * x * x);
    half * x * (T::one() + u.tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let half = sc::<T>(0.5);
    let u = sc::<T>(GELU_C0) * (x + sc::<T>(GELU_C1) * x * x * x);
    let t = u.tanh();
    let sech2 = T::one() - t * t;
    let du = sc::<T>(GELU_C0) * (T::one() + sc::<T>(3.0 * GELU_C1) * x * x);
    half * (T::one() + t) + half * x * sech2 * du
}
