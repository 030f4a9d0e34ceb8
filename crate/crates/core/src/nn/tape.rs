//! Tape-based reverse-mode differentiation over row-major matrices.
//!
//! Every operation appends a node holding its forward value; [`Tape::backward`]
//! walks the nodes in reverse and accumulates adjoints. Summation order is
//! fixed by node order, so repeated runs are bitwise identical.
//!
//! Operations panic on shape mismatch. Public model entry points validate
//! their inputs before recording anything.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length");
        Mat { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Mat { rows: rows.len(), cols, data }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    fn add_assign(&mut self, other: &Mat) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Act {
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    MatMulT(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    MaskMul(NodeId, Vec<f64>),
    Act(NodeId, Act),
    Softmax(NodeId),
    LogSoftmax(NodeId),
    ConcatCols(NodeId, NodeId),
    EmbedMean(NodeId, Vec<Vec<usize>>),
    EmbedConcat(NodeId, Vec<Vec<usize>>),
    Pick(NodeId, Vec<usize>),
    Sum(NodeId),
    Mean(NodeId),
    WeightedSum(NodeId, Vec<f64>),
    Square(NodeId),
    LnFloor(NodeId, f64),
    SmoothL1(NodeId),
    BceLogits(NodeId, Vec<f64>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Mat,
    op: Op,
}

#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn wrt(&self, id: NodeId) -> Option<&Mat> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Mat {
        &self.nodes[id.0].value
    }

    /// Value of a 1×1 node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        assert_eq!(v.data.len(), 1, "node is not a scalar");
        v.data[0]
    }

    pub fn leaf(&mut self, value: Mat) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.cols, bv.rows, "matmul inner dimension");
        let mut out = Mat::zeros(av.rows, bv.cols);
        for i in 0..av.rows {
            for k in 0..av.cols {
                let x = av.data[i * av.cols + k];
                if x == 0.0 {
                    continue;
                }
                let brow = bv.row(k);
                let orow = &mut out.data[i * bv.cols..(i + 1) * bv.cols];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += x * b;
                }
            }
        }
        self.push(out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.cols, bv.cols, "matmul_t inner dimension");
        let mut out = Mat::zeros(av.rows, bv.rows);
        for i in 0..av.rows {
            for j in 0..bv.rows {
                out.data[i * bv.rows + j] = math::dot(av.row(i), bv.row(j));
            }
        }
        self.push(out, Op::MatMulT(a, b))
    }

    /// Adds a 1×c row to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(bias));
        assert_eq!(bv.data.len(), av.cols, "bias width");
        let mut out = av.clone();
        for i in 0..out.rows {
            for (o, b) in out.row_mut(i).iter_mut().zip(&bv.data) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, bias))
    }

    fn zip_with(&self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Mat {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!((av.rows, av.cols), (bv.rows, bv.cols), "elementwise shapes");
        let data = av.data.iter().zip(&bv.data).map(|(x, y)| f(*x, *y)).collect();
        Mat::from_vec(av.rows, av.cols, data)
    }

    fn map(&self, a: NodeId, f: impl Fn(f64) -> f64) -> Mat {
        let av = self.value(a);
        Mat::from_vec(av.rows, av.cols, av.data.iter().map(|x| f(*x)).collect())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.zip_with(a, b, |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.zip_with(a, b, |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.zip_with(a, b, |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.map(a, |x| x * c);
        self.push(v, Op::Scale(a, c))
    }

    /// Elementwise product with a constant mask (dropout, fixed weights).
    pub fn mask_mul(&mut self, a: NodeId, mask: Vec<f64>) -> NodeId {
        let av = self.value(a);
        assert_eq!(av.data.len(), mask.len(), "mask length");
        let data = av.data.iter().zip(&mask).map(|(x, m)| x * m).collect();
        let v = Mat::from_vec(av.rows, av.cols, data);
        self.push(v, Op::MaskMul(a, mask))
    }

    pub fn act(&mut self, a: NodeId, act: Act) -> NodeId {
        let v = match act {
            Act::Relu => self.map(a, |x| if x > 0.0 { x } else { 0.0 }),
            Act::LeakyRelu(s) => self.map(a, |x| if x > 0.0 { x } else { s * x }),
            Act::Tanh => self.map(a, math::tanh),
            Act::Sigmoid => self.map(a, math::sigmoid),
        };
        self.push(v, Op::Act(a, act))
    }

    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        for i in 0..v.rows {
            math::softmax_in_place(v.row_mut(i));
        }
        self.push(v, Op::Softmax(a))
    }

    pub fn log_softmax(&mut self, a: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        for i in 0..v.rows {
            math::log_softmax_in_place(v.row_mut(i));
        }
        self.push(v, Op::LogSoftmax(a))
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.rows, bv.rows, "concat rows");
        let cols = av.cols + bv.cols;
        let mut data = Vec::with_capacity(av.rows * cols);
        for i in 0..av.rows {
            data.extend_from_slice(av.row(i));
            data.extend_from_slice(bv.row(i));
        }
        let v = Mat::from_vec(av.rows, cols, data);
        self.push(v, Op::ConcatCols(a, b))
    }

    /// Mean of embedding-table rows per bag; an empty bag yields zeros.
    pub fn embed_mean(&mut self, table: NodeId, bags: Vec<Vec<usize>>) -> NodeId {
        let tv = self.value(table);
        let d = tv.cols;
        let mut out = Mat::zeros(bags.len(), d);
        for (b, bag) in bags.iter().enumerate() {
            if bag.is_empty() {
                continue;
            }
            let inv = 1.0 / bag.len() as f64;
            let orow = out.row_mut(b);
            for &t in bag {
                assert!(t < tv.rows, "token id out of embedding range");
                for (o, e) in orow.iter_mut().zip(tv.row(t)) {
                    *o += e;
                }
            }
            for o in orow.iter_mut() {
                *o *= inv;
            }
        }
        self.push(out, Op::EmbedMean(table, bags))
    }

    /// Concatenation of embedding-table rows per window; all windows share
    /// one length.
    pub fn embed_concat(&mut self, table: NodeId, windows: Vec<Vec<usize>>) -> NodeId {
        let tv = self.value(table);
        let d = tv.cols;
        let w = windows.first().map_or(0, Vec::len);
        let mut out = Mat::zeros(windows.len(), w * d);
        for (b, win) in windows.iter().enumerate() {
            assert_eq!(win.len(), w, "window length");
            let orow = out.row_mut(b);
            for (j, &t) in win.iter().enumerate() {
                assert!(t < tv.rows, "token id out of embedding range");
                orow[j * d..(j + 1) * d].copy_from_slice(tv.row(t));
            }
        }
        self.push(out, Op::EmbedConcat(table, windows))
    }

    /// Picks `a[i, cols[i]]` for every row, giving an r×1 column.
    pub fn pick(&mut self, a: NodeId, cols: Vec<usize>) -> NodeId {
        let av = self.value(a);
        assert_eq!(av.rows, cols.len(), "pick rows");
        let data = cols
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                assert!(c < av.cols, "pick column out of range");
                av.data[i * av.cols + c]
            })
            .collect();
        let v = Mat::from_vec(av.rows, 1, data);
        self.push(v, Op::Pick(a, cols))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data.iter().sum();
        self.push(Mat::from_vec(1, 1, vec![s]), Op::Sum(a))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let s: f64 = av.data.iter().sum();
        let m = s / av.data.len() as f64;
        self.push(Mat::from_vec(1, 1, vec![m]), Op::Mean(a))
    }

    pub fn weighted_sum(&mut self, a: NodeId, weights: Vec<f64>) -> NodeId {
        let av = self.value(a);
        assert_eq!(av.data.len(), weights.len(), "weight count");
        let s = math::dot(&av.data, &weights);
        self.push(Mat::from_vec(1, 1, vec![s]), Op::WeightedSum(a, weights))
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let v = self.map(a, |x| x * x);
        self.push(v, Op::Square(a))
    }

    /// `ln(max(x, floor))`; the gradient is zero below the floor.
    pub fn ln_floor(&mut self, a: NodeId, floor: f64) -> NodeId {
        let v = self.map(a, |x| math::ln(if x < floor { floor } else { x }));
        self.push(v, Op::LnFloor(a, floor))
    }

    /// Elementwise smooth-L1 of a difference.
    pub fn smooth_l1(&mut self, diff: NodeId) -> NodeId {
        let v = self.map(diff, |d| {
            let ad = math::abs(d);
            if ad < 1.0 {
                0.5 * d * d
            } else {
                ad - 0.5
            }
        });
        self.push(v, Op::SmoothL1(diff))
    }

    /// Elementwise binary cross-entropy of logits against 0/1 targets.
    pub fn bce_logits(&mut self, logits: NodeId, targets: Vec<f64>) -> NodeId {
        let av = self.value(logits);
        assert_eq!(av.data.len(), targets.len(), "target count");
        let data = av
            .data
            .iter()
            .zip(&targets)
            .map(|(&x, &y)| math::softplus(x) - y * x)
            .collect();
        let v = Mat::from_vec(av.rows, av.cols, data);
        self.push(v, Op::BceLogits(logits, targets))
    }

    /// Back-propagates from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Gradients {
        assert_eq!(self.value(loss).data.len(), 1, "backward from non-scalar");
        let mut grads: Vec<Option<Mat>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Mat::from_vec(1, 1, vec![1.0]));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, node: &Node, g: &Mat, grads: &mut [Option<Mat>]) {
        let accumulate = |grads: &mut [Option<Mat>], id: NodeId, delta: Mat| match &mut grads[id.0] {
            Some(existing) => existing.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        };
        let shaped = |id: NodeId, data: Vec<f64>| {
            let v = self.value(id);
            Mat::from_vec(v.rows, v.cols, data)
        };

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                // dA = G·Bᵀ
                let mut da = Mat::zeros(av.rows, av.cols);
                for i in 0..av.rows {
                    for k in 0..av.cols {
                        da.data[i * av.cols + k] = math::dot(g.row(i), bv.row(k));
                    }
                }
                // dB = Aᵀ·G
                let mut db = Mat::zeros(bv.rows, bv.cols);
                for i in 0..av.rows {
                    let grow = g.row(i);
                    for k in 0..av.cols {
                        let x = av.data[i * av.cols + k];
                        if x == 0.0 {
                            continue;
                        }
                        for (d, gv) in db.row_mut(k).iter_mut().zip(grow) {
                            *d += x * gv;
                        }
                    }
                }
                accumulate(grads, *a, da);
                accumulate(grads, *b, db);
            }
            Op::MatMulT(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                // C = A·Bᵀ: dA = G·B, dB = Gᵀ·A
                let mut da = Mat::zeros(av.rows, av.cols);
                let mut db = Mat::zeros(bv.rows, bv.cols);
                for i in 0..av.rows {
                    for j in 0..bv.rows {
                        let gij = g.data[i * bv.rows + j];
                        if gij == 0.0 {
                            continue;
                        }
                        for (d, x) in da.row_mut(i).iter_mut().zip(bv.row(j)) {
                            *d += gij * x;
                        }
                        for (d, x) in db.row_mut(j).iter_mut().zip(av.row(i)) {
                            *d += gij * x;
                        }
                    }
                }
                accumulate(grads, *a, da);
                accumulate(grads, *b, db);
            }
            Op::AddRow(a, bias) => {
                let mut db = vec![0.0; g.cols];
                for i in 0..g.rows {
                    for (d, x) in db.iter_mut().zip(g.row(i)) {
                        *d += x;
                    }
                }
                accumulate(grads, *a, g.clone());
                accumulate(grads, *bias, shaped(*bias, db));
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                let neg = g.data.iter().map(|x| -x).collect();
                accumulate(grads, *b, shaped(*b, neg));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let da = g.data.iter().zip(&bv.data).map(|(g, y)| g * y).collect();
                let db = g.data.iter().zip(&av.data).map(|(g, x)| g * x).collect();
                accumulate(grads, *a, shaped(*a, da));
                accumulate(grads, *b, shaped(*b, db));
            }
            Op::Scale(a, c) => {
                let da = g.data.iter().map(|x| x * c).collect();
                accumulate(grads, *a, shaped(*a, da));
            }
            Op::MaskMul(a, mask) => {
                let da = g.data.iter().zip(mask).map(|(x, m)| x * m).collect();
                accumulate(grads, *a, shaped(*a, da));
            }
            Op::Act(a, act) => {
                let x = &self.value(*a).data;
                let y = &node.value.data;
                let da = match act {
                    Act::Relu => g.data.iter().zip(x).map(|(g, x)| if *x > 0.0 { *g } else { 0.0 }).collect(),
                    Act::LeakyRelu(s) => g
                        .data
                        .iter()
                        .zip(x)
                        .map(|(g, x)| if *x > 0.0 { *g } else { s * g })
                        .collect(),
                    Act::Tanh => g.data.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect(),
                    Act::Sigmoid => g.data.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect(),
                };
                accumulate(grads, *a, shaped(*a, da));
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let mut da = Mat::zeros(y.rows, y.cols);
                for i in 0..y.rows {
                    let s = math::dot(g.row(i), y.row(i));
                    for ((d, gv), yv) in da.row_mut(i).iter_mut().zip(g.row(i)).zip(y.row(i)) {
                        *d = yv * (gv - s);
                    }
                }
                accumulate(grads, *a, da);
            }
            Op::LogSoftmax(a) => {
                let y = &node.value;
                let mut da = Mat::zeros(y.rows, y.cols);
                for i in 0..y.rows {
                    let s: f64 = g.row(i).iter().sum();
                    for ((d, gv), yv) in da.row_mut(i).iter_mut().zip(g.row(i)).zip(y.row(i)) {
                        *d = gv - math::exp(*yv) * s;
                    }
                }
                accumulate(grads, *a, da);
            }
            Op::ConcatCols(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let mut da = Mat::zeros(av.rows, av.cols);
                let mut db = Mat::zeros(bv.rows, bv.cols);
                for i in 0..g.rows {
                    let row = g.row(i);
                    da.row_mut(i).copy_from_slice(&row[..av.cols]);
                    db.row_mut(i).copy_from_slice(&row[av.cols..]);
                }
                accumulate(grads, *a, da);
                accumulate(grads, *b, db);
            }
            Op::EmbedMean(table, bags) => {
                let tv = self.value(*table);
                let mut dt = Mat::zeros(tv.rows, tv.cols);
                for (b, bag) in bags.iter().enumerate() {
                    if bag.is_empty() {
                        continue;
                    }
                    let inv = 1.0 / bag.len() as f64;
                    for &t in bag {
                        for (d, gv) in dt.row_mut(t).iter_mut().zip(g.row(b)) {
                            *d += gv * inv;
                        }
                    }
                }
                accumulate(grads, *table, dt);
            }
            Op::EmbedConcat(table, windows) => {
                let tv = self.value(*table);
                let d = tv.cols;
                let mut dt = Mat::zeros(tv.rows, tv.cols);
                for (b, win) in windows.iter().enumerate() {
                    let grow = g.row(b);
                    for (j, &t) in win.iter().enumerate() {
                        for (dv, gv) in dt.row_mut(t).iter_mut().zip(&grow[j * d..(j + 1) * d]) {
                            *dv += gv;
                        }
                    }
                }
                accumulate(grads, *table, dt);
            }
            Op::Pick(a, cols) => {
                let av = self.value(*a);
                let mut da = Mat::zeros(av.rows, av.cols);
                for (i, &c) in cols.iter().enumerate() {
                    da.data[i * av.cols + c] = g.data[i];
                }
                accumulate(grads, *a, da);
            }
            Op::Sum(a) => {
                let n = self.value(*a).data.len();
                accumulate(grads, *a, shaped(*a, vec![g.data[0]; n]));
            }
            Op::Mean(a) => {
                let n = self.value(*a).data.len();
                accumulate(grads, *a, shaped(*a, vec![g.data[0] / n as f64; n]));
            }
            Op::WeightedSum(a, w) => {
                let da = w.iter().map(|w| w * g.data[0]).collect();
                accumulate(grads, *a, shaped(*a, da));
            }
            Op::Square(a) => {
                let x = &self.value(*a).data;
                let da = g.data.iter().zip(x).map(|(g, x)| 2.0 * x * g).collect();
                accumulate(grads, *a, shaped(*a, da));
            }
            Op::LnFloor(a, floor) => {
                let x = &self.value(*a).data;
                let da = g
                    .data
                    .iter()
                    .zip(x)
                    .map(|(g, x)| if *x < *floor { 0.0 } else { g / x })
                    .collect();
                accumulate(grads, *a, shaped(*a, da));
            }
            Op::SmoothL1(a) => {
                let x = &self.value(*a).data;
                let da = g
                    .data
                    .iter()
                    .zip(x)
                    .map(|(g, d)| {
                        if math::abs(*d) < 1.0 {
                            g * d
                        } else if *d > 0.0 {
                            *g
                        } else {
                            -*g
                        }
                    })
                    .collect();
                accumulate(grads, *a, shaped(*a, da));
            }
            Op::BceLogits(a, targets) => {
                let x = &self.value(*a).data;
                let da = g
                    .data
                    .iter()
                    .zip(x)
                    .zip(targets)
                    .map(|((g, x), y)| g * (math::sigmoid(*x) - y))
                    .collect();
                accumulate(grads, *a, shaped(*a, da));
            }
        }
    }
}
