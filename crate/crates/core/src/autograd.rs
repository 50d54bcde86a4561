//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters are
//! borrowed from a [`ParamStore`] rather than copied, so many tapes (one per
//! document) can run concurrently against the same immutable store.
//! [`Tape::backward`] returns gradients for every recorded node and for
//! every parameter that took part in the pass.

use crate::objectives::{atl_row, bce_row};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{gemm, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    AddScalarVar(Var, Var),
    MulCol(Var, Var),
    MulConst(Var, Tensor),
    Scale(Var, f64),
    AddScalar(Var),
    Recip(Var),
    Tanh(Var),
    Sigmoid(Var),
    LeakyRelu(Var, f64),
    SoftmaxRows(Var),
    RowSum(Var),
    SumAll(Var),
    GatherRows(Var, Vec<usize>),
    SegmentSum(Var, Vec<usize>),
    SegmentSoftmax(Var, Vec<usize>),
    SegmentLogSumExp(Var, Vec<Vec<usize>>),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    AdditiveScores(Var, Var, Var),
    Bilinear(Var, Var, Var, Option<usize>),
    AtlLoss(Var, Vec<Vec<usize>>, f64),
    BceSum(Var, Vec<Option<Vec<f64>>>, f64),
}

struct Node {
    /// `None` for parameter nodes, whose value lives in the store.
    value: Option<Tensor>,
    op: Op,
}

pub struct Tape<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

static EMPTY_STORE: ParamStore = ParamStore::new();

impl Tape<'static> {
    /// A tape without parameters; every input is a leaf.
    pub fn detached() -> Self {
        Tape::new(&EMPTY_STORE)
    }
}

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_vars: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.store.get(*id),
            (None, _) => unreachable!("non-parameter node without a value"),
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant or input. Gradients are still reported for it.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Parameter node; repeated calls with the same id return the same var.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`; with `b` a `out × in` weight this is a row-wise linear map.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul_t(self.value(b));
        self.push(out, Op::MatMulT(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(out, Op::Mul(a, b))
    }

    /// Adds the `1 × n` row `row` to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (av, rv) = (self.value(a), self.value(row));
        assert_eq!(
            rv.shape(),
            (1, av.cols()),
            "add_row expects a 1x{} row",
            av.cols()
        );
        let mut out = av.clone();
        for r in 0..out.rows() {
            for (x, b) in out.row_mut(r).iter_mut().zip(rv.data()) {
                *x += b;
            }
        }
        self.push(out, Op::AddRow(a, row))
    }

    /// Adds the `1 × 1` tensor `s` to every entry of `a`.
    pub fn add_scalar_var(&mut self, a: Var, s: Var) -> Var {
        let sv = self.value(s).item();
        let out = self.value(a).map(|x| x + sv);
        self.push(out, Op::AddScalarVar(a, s))
    }

    /// Scales row `i` of `a` by `col[i]` (`col` is `m × 1`).
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (av, cv) = (self.value(a), self.value(col));
        assert_eq!(
            cv.shape(),
            (av.rows(), 1),
            "mul_col expects a {}x1 column",
            av.rows()
        );
        let mut out = av.clone();
        for r in 0..out.rows() {
            let f = cv.data()[r];
            out.row_mut(r).iter_mut().for_each(|x| *x *= f);
        }
        self.push(out, Op::MulCol(a, col))
    }

    /// Elementwise product with a constant (e.g. a dropout mask).
    pub fn mul_const(&mut self, a: Var, mask: Tensor) -> Var {
        let out = self.value(a).zip_map(&mask, |x, m| x * m);
        self.push(out, Op::MulConst(a, mask))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).scaled(factor);
        self.push(out, Op::Scale(a, factor))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x + c);
        self.push(out, Op::AddScalar(a))
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| 1.0 / x);
        self.push(out, Op::Recip(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push(out, Op::LeakyRelu(a, slope))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.leaky_relu(a, 0.0)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    /// `m × n → m × 1` sums across each row.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let sums: Vec<f64> = (0..av.rows()).map(|r| av.row(r).iter().sum()).collect();
        self.push(Tensor::col_vector(&sums), Op::RowSum(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let out = self.value(a).select_rows(&idx);
        self.push(out, Op::GatherRows(a, idx))
    }

    /// Sums row `e` of `a` into output row `segments[e]`.
    pub fn segment_sum(&mut self, a: Var, segments: Vec<usize>, n_segments: usize) -> Var {
        let av = self.value(a);
        assert_eq!(
            segments.len(),
            av.rows(),
            "segment_sum needs one segment id per row"
        );
        let mut out = Tensor::zeros(n_segments, av.cols());
        for (e, &s) in segments.iter().enumerate() {
            for (o, x) in out.row_mut(s).iter_mut().zip(av.row(e)) {
                *o += x;
            }
        }
        self.push(out, Op::SegmentSum(a, segments))
    }

    /// [`Tape::segment_sum`] whose result does not depend on the order of
    /// rows within a segment: each column is added in ascending order.
    pub fn segment_sum_unordered(
        &mut self,
        a: Var,
        segments: Vec<usize>,
        n_segments: usize,
    ) -> Var {
        let av = self.value(a);
        assert_eq!(
            segments.len(),
            av.rows(),
            "segment_sum needs one segment id per row"
        );
        let mut members = vec![Vec::new(); n_segments];
        for (e, &s) in segments.iter().enumerate() {
            members[s].push(e);
        }
        let mut out = Tensor::zeros(n_segments, av.cols());
        let mut column = Vec::new();
        for (s, rows) in members.iter().enumerate() {
            for c in 0..av.cols() {
                column.clear();
                column.extend(rows.iter().map(|&e| av.get(e, c)));
                column.sort_by(f64::total_cmp);
                out.set(s, c, column.iter().sum());
            }
        }
        self.push(out, Op::SegmentSum(a, segments))
    }

    /// Mean of rows per segment; empty segments yield zero rows.
    pub fn segment_mean(&mut self, a: Var, segments: Vec<usize>, n_segments: usize) -> Var {
        let mut counts = vec![0usize; n_segments];
        for &s in &segments {
            counts[s] += 1;
        }
        let sums = self.segment_sum(a, segments, n_segments);
        let inv: Vec<f64> = counts
            .iter()
            .map(|&c| if c == 0 { 0.0 } else { 1.0 / c as f64 })
            .collect();
        let inv = self.leaf(Tensor::col_vector(&inv));
        self.mul_col(sums, inv)
    }

    /// Softmax of an `E × 1` column within each segment.
    pub fn segment_softmax(&mut self, a: Var, segments: Vec<usize>, n_segments: usize) -> Var {
        let av = self.value(a);
        assert_eq!(av.cols(), 1, "segment_softmax works on a column");
        assert_eq!(
            segments.len(),
            av.rows(),
            "segment_softmax needs one segment id per row"
        );
        let mut max = vec![f64::NEG_INFINITY; n_segments];
        for (e, &s) in segments.iter().enumerate() {
            max[s] = max[s].max(av.data()[e]);
        }
        let mut out = Tensor::zeros(av.rows(), 1);
        let mut denom = vec![0.0; n_segments];
        for (e, &s) in segments.iter().enumerate() {
            let z = (av.data()[e] - max[s]).exp();
            out.data_mut()[e] = z;
            denom[s] += z;
        }
        for (e, &s) in segments.iter().enumerate() {
            out.data_mut()[e] /= denom[s];
        }
        self.push(out, Op::SegmentSoftmax(a, segments))
    }

    /// Columnwise log-sum-exp over the rows listed in each group.
    pub fn segment_logsumexp(&mut self, a: Var, groups: Vec<Vec<usize>>) -> Var {
        let av = self.value(a);
        let mut out = Tensor::zeros(groups.len(), av.cols());
        for (g, rows) in groups.iter().enumerate() {
            assert!(!rows.is_empty(), "log-sum-exp over an empty group");
            for c in 0..av.cols() {
                let m = rows
                    .iter()
                    .map(|&r| av.get(r, c))
                    .fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = rows.iter().map(|&r| (av.get(r, c) - m).exp()).sum();
                out.set(g, c, m + s.ln());
            }
        }
        self.push(out, Op::SegmentLogSumExp(a, groups))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let av = self.value(a);
        assert!(start <= end && end <= av.cols(), "slice_cols out of range");
        let mut out = Tensor::zeros(av.rows(), end - start);
        for r in 0..av.rows() {
            out.row_mut(r).copy_from_slice(&av.row(r)[start..end]);
        }
        self.push(out, Op::SliceCols(a, start))
    }

    pub fn concat_cols(&mut self, parts: Vec<Var>) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in &parts {
            let pv = self.value(p);
            assert_eq!(pv.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                out.row_mut(r)[off..off + pv.cols()].copy_from_slice(pv.row(r));
            }
            off += pv.cols();
        }
        self.push(out, Op::ConcatCols(parts))
    }

    pub fn concat_rows(&mut self, parts: Vec<Var>) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in &parts {
            let pv = self.value(p);
            assert_eq!(pv.cols(), cols, "concat_rows column mismatch");
            data.extend_from_slice(pv.data());
            rows += pv.rows();
        }
        self.push(Tensor::from_vec(rows, cols, data), Op::ConcatRows(parts))
    }

    /// Additive attention scores: `out[p, b] = Σ_k w_k · tanh(a[p, k] + b[b, k])`.
    pub fn additive_scores(&mut self, a: Var, b: Var, w: Var) -> Var {
        let (av, bv, wv) = (self.value(a), self.value(b), self.value(w));
        let k = av.cols();
        assert_eq!(bv.cols(), k, "additive_scores width mismatch");
        assert_eq!(wv.len(), k, "additive_scores weight length mismatch");
        let mut out = Tensor::zeros(av.rows(), bv.rows());
        for p in 0..av.rows() {
            let ar = av.row(p);
            for q in 0..bv.rows() {
                let br = bv.row(q);
                let s: f64 = (0..k).map(|i| wv.data()[i] * (ar[i] + br[i]).tanh()).sum();
                out.set(p, q, s);
            }
        }
        self.push(out, Op::AdditiveScores(a, b, w))
    }

    /// Per-row bilinear forms: `out[p, r] = zs[p]ᵀ · W[r] · zo[p]`, where row
    /// `r` of `w` holds a row-major `d × d` matrix. With `block = Some(k)` only
    /// entries inside the same `k`-wide diagonal block contribute.
    pub fn bilinear(&mut self, zs: Var, zo: Var, w: Var, block: Option<usize>) -> Var {
        let (sv, ov, wv) = (self.value(zs), self.value(zo), self.value(w));
        let d = sv.cols();
        assert_eq!(ov.shape(), sv.shape(), "bilinear operands differ in shape");
        assert_eq!(
            wv.cols(),
            d * d,
            "bilinear weight rows must hold d*d entries"
        );
        if let Some(k) = block {
            assert!(k > 0 && d % k == 0, "block size must divide the dimension");
        }
        let mut out = Tensor::zeros(sv.rows(), wv.rows());
        for p in 0..sv.rows() {
            let (s, o) = (sv.row(p), ov.row(p));
            for r in 0..wv.rows() {
                let wr = wv.row(r);
                let mut acc = 0.0;
                for i in 0..d {
                    let (lo, hi) = block_range(i, d, block);
                    let wi = &wr[i * d..(i + 1) * d];
                    let inner: f64 = (lo..hi).map(|j| wi[j] * o[j]).sum();
                    acc += s[i] * inner;
                }
                out.set(p, r, acc);
            }
        }
        self.push(out, Op::Bilinear(zs, zo, w, block))
    }

    /// Adaptive-thresholding loss summed over rows and multiplied by `weight`.
    /// Column 0 of `logits` is the threshold class.
    pub fn atl_loss(&mut self, logits: Var, positives: Vec<Vec<usize>>, weight: f64) -> Var {
        let lv = self.value(logits);
        assert_eq!(positives.len(), lv.rows(), "one positive set per row");
        let total: f64 = (0..lv.rows())
            .map(|r| atl_row(lv.row(r), &positives[r]).0)
            .sum();
        self.push(
            Tensor::scalar(weight * total),
            Op::AtlLoss(logits, positives, weight),
        )
    }

    /// Binary cross-entropy summed over sentences of every row with targets,
    /// multiplied by `weight`. Rows with `None` targets are skipped.
    pub fn bce_sum(&mut self, probs: Var, targets: Vec<Option<Vec<f64>>>, weight: f64) -> Var {
        let pv = self.value(probs);
        assert_eq!(targets.len(), pv.rows(), "one target entry per row");
        let total: f64 = targets
            .iter()
            .enumerate()
            .filter_map(|(r, t)| t.as_ref().map(|t| bce_row(pv.row(r), t).0))
            .sum();
        self.push(
            Tensor::scalar(weight * total),
            Op::BceSum(probs, targets, weight),
        )
    }

    /// Gradients of the scalar `loss` with respect to every recorded node.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(
            self.value(loss).shape(),
            (1, 1),
            "backward needs a scalar loss"
        );
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let (lo, hi) = grads.split_at_mut(i);
            let Some(g) = hi[0].as_ref() else { continue };
            self.backprop_node(i, g, lo);
        }
        let mut params: Vec<Option<Tensor>> = (0..self.store.len()).map(|_| None).collect();
        for (pid, var) in self.param_vars.iter().enumerate() {
            if let Some(v) = var {
                params[pid] = grads[v.0].clone();
            }
        }
        Grads {
            nodes: grads,
            params,
        }
    }

    fn backprop_node(&self, i: usize, g: &Tensor, lo: &mut [Option<Tensor>]) {
        let y = self.nodes[i].value.as_ref();
        match &self.nodes[i].op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                accumulate_gemm(lo, *a, g, false, bv, true);
                accumulate_gemm(lo, *b, av, true, g, false);
            }
            Op::MatMulT(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                accumulate_gemm(lo, *a, g, false, bv, false);
                accumulate_gemm(lo, *b, g, true, av, false);
            }
            Op::Transpose(a) => accumulate(lo, *a, g.transpose()),
            Op::Add(a, b) => {
                accumulate(lo, *a, g.clone());
                accumulate(lo, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(lo, *a, g.clone());
                accumulate(lo, *b, g.scaled(-1.0));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                accumulate(lo, *a, g.zip_map(bv, |x, y| x * y));
                accumulate(lo, *b, g.zip_map(av, |x, y| x * y));
            }
            Op::AddRow(a, row) => {
                accumulate(lo, *a, g.clone());
                let mut gr = Tensor::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (o, x) in gr.data_mut().iter_mut().zip(g.row(r)) {
                        *o += x;
                    }
                }
                accumulate(lo, *row, gr);
            }
            Op::AddScalarVar(a, s) => {
                accumulate(lo, *a, g.clone());
                accumulate(lo, *s, Tensor::scalar(g.sum()));
            }
            Op::MulCol(a, col) => {
                let (av, cv) = (self.value(*a), self.value(*col));
                let mut ga = g.clone();
                let mut gc = Tensor::zeros(cv.rows(), 1);
                for r in 0..g.rows() {
                    let f = cv.data()[r];
                    ga.row_mut(r).iter_mut().for_each(|x| *x *= f);
                    gc.data_mut()[r] = g.row(r).iter().zip(av.row(r)).map(|(x, y)| x * y).sum();
                }
                accumulate(lo, *a, ga);
                accumulate(lo, *col, gc);
            }
            Op::MulConst(a, mask) => accumulate(lo, *a, g.zip_map(mask, |x, m| x * m)),
            Op::Scale(a, f) => accumulate(lo, *a, g.scaled(*f)),
            Op::AddScalar(a) => accumulate(lo, *a, g.clone()),
            Op::Recip(a) => {
                let y = y.expect("value");
                accumulate(lo, *a, g.zip_map(y, |gx, yx| -gx * yx * yx));
            }
            Op::Tanh(a) => {
                let y = y.expect("value");
                accumulate(lo, *a, g.zip_map(y, |gx, yx| gx * (1.0 - yx * yx)));
            }
            Op::Sigmoid(a) => {
                let y = y.expect("value");
                accumulate(lo, *a, g.zip_map(y, |gx, yx| gx * yx * (1.0 - yx)));
            }
            Op::LeakyRelu(a, slope) => {
                let av = self.value(*a);
                accumulate(
                    lo,
                    *a,
                    g.zip_map(av, |gx, x| if x > 0.0 { gx } else { slope * gx }),
                );
            }
            Op::SoftmaxRows(a) => {
                let y = y.expect("value");
                let mut ga = Tensor::zeros(g.rows(), g.cols());
                for r in 0..g.rows() {
                    let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                    for ((o, gx), yx) in ga.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                        *o = yx * (gx - dot);
                    }
                }
                accumulate(lo, *a, ga);
            }
            Op::RowSum(a) => {
                let av = self.value(*a);
                let mut ga = Tensor::zeros(av.rows(), av.cols());
                for r in 0..av.rows() {
                    ga.row_mut(r).fill(g.data()[r]);
                }
                accumulate(lo, *a, ga);
            }
            Op::SumAll(a) => {
                let av = self.value(*a);
                accumulate(lo, *a, Tensor::filled(av.rows(), av.cols(), g.item()));
            }
            Op::GatherRows(a, idx) => {
                let av = self.value(*a);
                let mut ga = Tensor::zeros(av.rows(), av.cols());
                for (o, &src) in idx.iter().enumerate() {
                    for (x, gx) in ga.row_mut(src).iter_mut().zip(g.row(o)) {
                        *x += gx;
                    }
                }
                accumulate(lo, *a, ga);
            }
            Op::SegmentSum(a, segments) => {
                accumulate(lo, *a, g.select_rows(segments));
            }
            Op::SegmentSoftmax(a, segments) => {
                let y = y.expect("value");
                let n_seg = segments.iter().copied().max().map_or(0, |m| m + 1);
                let mut dot = vec![0.0; n_seg];
                for (e, &s) in segments.iter().enumerate() {
                    dot[s] += g.data()[e] * y.data()[e];
                }
                let data = segments
                    .iter()
                    .enumerate()
                    .map(|(e, &s)| y.data()[e] * (g.data()[e] - dot[s]))
                    .collect();
                accumulate(lo, *a, Tensor::from_vec(segments.len(), 1, data));
            }
            Op::SegmentLogSumExp(a, groups) => {
                let (av, y) = (self.value(*a), y.expect("value"));
                let mut ga = Tensor::zeros(av.rows(), av.cols());
                for (gi, rows) in groups.iter().enumerate() {
                    for &r in rows {
                        for c in 0..av.cols() {
                            let w = (av.get(r, c) - y.get(gi, c)).exp();
                            ga.row_mut(r)[c] += g.get(gi, c) * w;
                        }
                    }
                }
                accumulate(lo, *a, ga);
            }
            Op::SliceCols(a, start) => {
                let av = self.value(*a);
                let mut ga = Tensor::zeros(av.rows(), av.cols());
                for r in 0..g.rows() {
                    ga.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                accumulate(lo, *a, ga);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    let mut gp = Tensor::zeros(g.rows(), w);
                    for r in 0..g.rows() {
                        gp.row_mut(r).copy_from_slice(&g.row(r)[off..off + w]);
                    }
                    accumulate(lo, p, gp);
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let h = self.value(p).rows();
                    let slice = g.data()[off * g.cols()..(off + h) * g.cols()].to_vec();
                    accumulate(lo, p, Tensor::from_vec(h, g.cols(), slice));
                    off += h;
                }
            }
            Op::AdditiveScores(a, b, w) => {
                let (av, bv, wv) = (self.value(*a), self.value(*b), self.value(*w));
                let k = av.cols();
                let mut ga = Tensor::zeros(av.rows(), k);
                let mut gb = Tensor::zeros(bv.rows(), k);
                let mut gw = vec![0.0; k];
                for p in 0..av.rows() {
                    for q in 0..bv.rows() {
                        let go = g.get(p, q);
                        if go == 0.0 {
                            continue;
                        }
                        for i in 0..k {
                            let t = (av.get(p, i) + bv.get(q, i)).tanh();
                            let dt = go * wv.data()[i] * (1.0 - t * t);
                            ga.row_mut(p)[i] += dt;
                            gb.row_mut(q)[i] += dt;
                            gw[i] += go * t;
                        }
                    }
                }
                accumulate(lo, *a, ga);
                accumulate(lo, *b, gb);
                accumulate(lo, *w, Tensor::from_vec(wv.rows(), wv.cols(), gw));
            }
            Op::Bilinear(zs, zo, w, block) => {
                let (sv, ov, wv) = (self.value(*zs), self.value(*zo), self.value(*w));
                let d = sv.cols();
                let mut gs = Tensor::zeros(sv.rows(), d);
                let mut go = Tensor::zeros(ov.rows(), d);
                let mut gw = Tensor::zeros(wv.rows(), wv.cols());
                for p in 0..sv.rows() {
                    let (s, o) = (sv.row(p), ov.row(p));
                    for r in 0..wv.rows() {
                        let gpr = g.get(p, r);
                        if gpr == 0.0 {
                            continue;
                        }
                        let wr = wv.row(r);
                        for i in 0..d {
                            let (lo_j, hi_j) = block_range(i, d, *block);
                            let wi = &wr[i * d..(i + 1) * d];
                            let mut inner = 0.0;
                            for j in lo_j..hi_j {
                                inner += wi[j] * o[j];
                                go.row_mut(p)[j] += gpr * s[i] * wi[j];
                                gw.row_mut(r)[i * d + j] += gpr * s[i] * o[j];
                            }
                            gs.row_mut(p)[i] += gpr * inner;
                        }
                    }
                }
                accumulate(lo, *zs, gs);
                accumulate(lo, *zo, go);
                accumulate(lo, *w, gw);
            }
            Op::AtlLoss(logits, positives, weight) => {
                let lv = self.value(*logits);
                let scale = g.item() * weight;
                let mut gl = Tensor::zeros(lv.rows(), lv.cols());
                for r in 0..lv.rows() {
                    let (_, grad) = atl_row(lv.row(r), &positives[r]);
                    for (o, x) in gl.row_mut(r).iter_mut().zip(grad) {
                        *o = scale * x;
                    }
                }
                accumulate(lo, *logits, gl);
            }
            Op::BceSum(probs, targets, weight) => {
                let pv = self.value(*probs);
                let scale = g.item() * weight;
                let mut gp = Tensor::zeros(pv.rows(), pv.cols());
                for (r, t) in targets.iter().enumerate() {
                    if let Some(t) = t {
                        let (_, grad) = bce_row(pv.row(r), t);
                        for (o, x) in gp.row_mut(r).iter_mut().zip(grad) {
                            *o = scale * x;
                        }
                    }
                }
                accumulate(lo, *probs, gp);
            }
        }
    }
}

/// Gradients produced by [`Tape::backward`].
pub struct Grads {
    nodes: Vec<Option<Tensor>>,
    params: Vec<Option<Tensor>>,
}

impl Grads {
    /// Gradient for a node, or `None` if the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].as_ref()
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params[id.0].as_ref()
    }

    pub fn into_param_grads(self) -> Vec<Option<Tensor>> {
        self.params
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in row.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    row.iter_mut().for_each(|x| *x /= s);
}

#[inline]
fn block_range(i: usize, d: usize, block: Option<usize>) -> (usize, usize) {
    match block {
        Some(k) => {
            let lo = (i / k) * k;
            (lo, lo + k)
        }
        None => (0, d),
    }
}

fn accumulate(lo: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut lo[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn accumulate_gemm(lo: &mut [Option<Tensor>], v: Var, a: &Tensor, ta: bool, b: &Tensor, tb: bool) {
    let rows = if ta { a.cols() } else { a.rows() };
    let cols = if tb { b.rows() } else { b.cols() };
    match &mut lo[v.0] {
        Some(existing) => gemm(a, ta, b, tb, existing, 1.0),
        slot @ None => {
            let mut out = Tensor::zeros(rows, cols);
            gemm(a, ta, b, tb, &mut out, 0.0);
            *slot = Some(out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_leaf_gradients;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_t(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::uniform(r, c, 1.0, rng)
    }

    #[test]
    fn elementwise_and_matrix_ops_pass_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let inputs = vec![
            rand_t(&mut rng, 3, 4),
            rand_t(&mut rng, 4, 2),
            rand_t(&mut rng, 1, 2),
            rand_t(&mut rng, 3, 1),
        ];
        let err = crate::gradcheck::leaf_gradient_report(&inputs, |tape, v| {
            let m = tape.matmul(v[0], v[1]);
            let m = tape.add_row(m, v[2]);
            let t = tape.tanh(m);
            let s = tape.sigmoid(t);
            let l = tape.leaky_relu(s, 0.2);
            let c = tape.mul_col(l, v[3]);
            let sm = tape.softmax_rows(c);
            let tr = tape.transpose(sm);
            let mt = tape.matmul_t(tr, tr);
            tape.sum_all(mt)
        });
        assert!(err.max_rel_err < 1e-4, "{err:?}");
    }

    #[test]
    fn segment_ops_pass_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let inputs = vec![rand_t(&mut rng, 5, 3), rand_t(&mut rng, 5, 1)];
        let err = check_leaf_gradients(&inputs, |tape, v| {
            let soft = tape.segment_softmax(v[1], vec![0, 0, 1, 1, 1], 2);
            let weighted = tape.mul_col(v[0], soft);
            let summed = tape.segment_sum(weighted, vec![1, 0, 1, 0, 1], 2);
            let lse = tape.segment_logsumexp(v[0], vec![vec![0, 2], vec![1, 3, 4]]);
            let both = tape.concat_rows(vec![summed, lse]);
            let sl = tape.slice_cols(both, 1, 3);
            let gathered = tape.gather_rows(sl, vec![0, 0, 3]);
            let cc = tape.concat_cols(vec![gathered, gathered]);
            let rs = tape.row_sum(cc);
            let shifted = tape_add_two(tape, rs);
            let r = tape.recip(shifted);
            tape.sum_all(r)
        });
        assert!(err < 1e-4, "relative error {err}");
    }

    fn tape_add_two(tape: &mut Tape<'_>, v: Var) -> Var {
        let sq = tape.mul(v, v);
        tape.add_scalar(sq, 2.0)
    }

    #[test]
    fn fused_ops_pass_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let inputs = vec![
            rand_t(&mut rng, 3, 4),
            rand_t(&mut rng, 2, 4),
            rand_t(&mut rng, 4, 1),
            rand_t(&mut rng, 3, 16),
            rand_t(&mut rng, 3, 4),
        ];
        for block in [None, Some(2)] {
            let err = check_leaf_gradients(&inputs, |tape, v| {
                let sc = tape.additive_scores(v[0], v[1], v[2]);
                let bl = tape.bilinear(v[0], v[4], v[3], block);
                let s1 = tape.sum_all(sc);
                let bl2 = tape.mul(bl, bl);
                let s2 = tape.sum_all(bl2);
                tape.add(s1, s2)
            });
            assert!(err < 1e-4, "block {block:?}: relative error {err}");
        }
    }

    #[test]
    fn loss_ops_pass_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let logits = rand_t(&mut rng, 3, 4);
        let probs = Tensor::uniform(3, 2, 0.4, &mut rng).map(|x| x + 0.5);
        let err = check_leaf_gradients(&[logits, probs], |tape, v| {
            let a = tape.atl_loss(v[0], vec![vec![1, 3], vec![], vec![2]], 0.5);
            let b = tape.bce_sum(
                v[1],
                vec![Some(vec![1.0, 0.0]), None, Some(vec![0.0, 0.0])],
                0.1,
            );
            tape.add(a, b)
        });
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn parameters_are_shared_not_copied() {
        let mut store = ParamStore::new();
        let id = store.add("w", crate::params::ParamGroup::Rest, Tensor::scalar(3.0));
        let mut tape = Tape::new(&store);
        let a = tape.param(id);
        let b = tape.param(id);
        assert_eq!(a, b);
        let y = tape.mul(a, b);
        let g = tape.backward(y);
        assert_eq!(g.param(id).unwrap().item(), 6.0);
    }
}
