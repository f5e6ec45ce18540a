use super::tape::{Op, Tape, Var};
use super::{ELU_ALPHA, KL_FLOOR, LEAKY_SLOPE};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{matmul_into, Tensor};

fn matrix_dims<S: Scalar>(op: &'static str, t: &Tensor<S>) -> Result<(usize, usize)> {
    if t.shape().len() != 2 {
        return Err(Error::shape(op, format!("expected a matrix, got {:?}", t.shape())));
    }
    Ok((t.rows(), t.cols()))
}

fn same_shape<S: Scalar>(op: &'static str, a: &Tensor<S>, b: &Tensor<S>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn check_offsets(op: &'static str, offsets: &[usize], len: usize) -> Result<()> {
    if offsets.first() != Some(&0) || offsets.last() != Some(&len) {
        return Err(Error::shape(op, "segment offsets must span all rows"));
    }
    if offsets.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Contract(format!("{op}: empty segment")));
    }
    Ok(())
}

fn softmax_row<S: Scalar>(z: &[S], out: &mut [S]) -> bool {
    let max = z
        .iter()
        .copied()
        .filter(|x| x.is_finite())
        .fold(S::neg_infinity(), S::max);
    if !max.is_finite() {
        return false;
    }
    let mut total = S::zero();
    for (o, &x) in out.iter_mut().zip(z) {
        *o = if x.is_finite() { (x - max).exp() } else { S::zero() };
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
    true
}

/// dx = y * (dy - <dy, y>) on one softmax row.
fn softmax_row_backward<S: Scalar>(y: &[S], dy: &[S], dx: &mut [S]) {
    let dot: S = y.iter().zip(dy).map(|(&a, &b)| a * b).sum();
    for ((d, &yi), &gi) in dx.iter_mut().zip(y).zip(dy) {
        *d = yi * (gi - dot);
    }
}

fn log_sigmoid<S: Scalar>(x: S) -> S {
    // -softplus(-x), stable on both tails
    if x >= S::zero() {
        -((-x).exp().ln_1p())
    } else {
        x - x.exp().ln_1p()
    }
}

fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

fn kl_tolerance<S: Scalar>() -> f64 {
    f64::max(1e-6, 100.0 * S::epsilon().as_f64())
}

fn check_distribution<S: Scalar>(which: &'static str, t: &Tensor<S>) -> Result<()> {
    let tol = kl_tolerance::<S>();
    for r in 0..t.rows() {
        let row = t.row(r);
        if row.iter().any(|&x| x < S::zero() || !x.is_finite()) {
            return Err(Error::Normalization {
                which,
                detail: format!("row {r} has a negative or non-finite entry"),
            });
        }
        let s: f64 = row.iter().map(|x| x.as_f64()).sum();
        if (s - 1.0).abs() > tol {
            return Err(Error::Normalization {
                which,
                detail: format!("row {r} sums to {s}"),
            });
        }
    }
    Ok(())
}

impl<'a, S: Scalar> Tape<'a, S> {
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push("matmul", out, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        matrix_dims("transpose", self.value(a))?;
        let out = self.value(a).transpose();
        self.push("transpose", out, Op::Transpose(a))
    }

    fn zip_with(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(S, S) -> S) -> Result<Tensor<S>> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(op, ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(ta.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("add", a, b, |x, y| x + y)?;
        self.push("add", out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("sub", a, b, |x, y| x - y)?;
        self.push("sub", out, Op::Sub(a, b))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("mul", a, b, |x, y| x * y)?;
        self.push("mul", out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let s = S::of(s);
        let out = self.value(a).map(|x| x * s);
        self.push("scale", out, Op::Scale(a, s))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let out = Tensor::from_vec(shape, t.data().to_vec())?;
        self.push("reshape", out, Op::Reshape(a))
    }

    /// Selects rows by index; repeated indices are allowed.
    pub fn row_gather(&mut self, a: Var, indices: Vec<usize>) -> Result<Var> {
        let t = self.value(a);
        let (rows, cols) = matrix_dims("row_gather", t)?;
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in &indices {
            if i >= rows {
                return Err(Error::shape("row_gather", format!("row {i} out of {rows}")));
            }
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::from_vec(&[indices.len(), cols], data)?;
        self.push("row_gather", out, Op::RowGather(a, indices))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        let (rows, cols) = matrix_dims("slice_rows", t)?;
        if start + len > rows {
            return Err(Error::shape("slice_rows", format!("{start}+{len} > {rows}")));
        }
        let data = t.data()[start * cols..(start + len) * cols].to_vec();
        let out = Tensor::from_vec(&[len, cols], data)?;
        self.push("slice_rows", out, Op::SliceRows(a, start))
    }

    /// Concatenates matrices along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, vars: &[Var], axis: usize) -> Result<Var> {
        if vars.is_empty() {
            return Err(Error::shape("concat", "no inputs"));
        }
        let dims: Vec<(usize, usize)> = vars
            .iter()
            .map(|&v| matrix_dims("concat", self.value(v)))
            .collect::<Result<_>>()?;
        match axis {
            0 => {
                let cols = dims[0].1;
                if dims.iter().any(|d| d.1 != cols) {
                    return Err(Error::shape("concat", "column counts differ"));
                }
                let mut data = Vec::new();
                for &v in vars {
                    data.extend_from_slice(self.value(v).data());
                }
                let rows = dims.iter().map(|d| d.0).sum();
                let out = Tensor::from_vec(&[rows, cols], data)?;
                self.push("concat", out, Op::ConcatRows(vars.to_vec()))
            }
            1 => {
                let rows = dims[0].0;
                if dims.iter().any(|d| d.0 != rows) {
                    return Err(Error::shape("concat", "row counts differ"));
                }
                let cols: usize = dims.iter().map(|d| d.1).sum();
                let mut data = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    for &v in vars {
                        data.extend_from_slice(self.value(v).row(r));
                    }
                }
                let out = Tensor::from_vec(&[rows, cols], data)?;
                self.push("concat", out, Op::ConcatCols(vars.to_vec()))
            }
            _ => Err(Error::shape("concat", format!("axis {axis}"))),
        }
    }

    pub fn elu(&mut self, a: Var) -> Result<Var> {
        let alpha = S::of(ELU_ALPHA);
        let out = self
            .value(a)
            .map(|x| if x > S::zero() { x } else { alpha * x.exp_m1() });
        self.push("elu", out, Op::Elu(a))
    }

    pub fn leaky_relu(&mut self, a: Var) -> Result<Var> {
        let slope = S::of(LEAKY_SLOPE);
        let out = self.value(a).map(|x| if x > S::zero() { x } else { slope * x });
        self.push("leaky_relu", out, Op::LeakyRelu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(sigmoid);
        self.push("sigmoid", out, Op::Sigmoid(a))
    }

    /// `ln(sigmoid(x))`, evaluated without overflow.
    pub fn log_sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(log_sigmoid);
        self.push("log_sigmoid", out, Op::LogSigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x.exp());
        self.push("exp", out, Op::Exp(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let (lo, hi) = (S::of(lo), S::of(hi));
        let out = self.value(a).map(|x| x.max(lo).min(hi));
        self.push("clamp", out, Op::Clamp(a, lo, hi))
    }

    /// Row-wise softmax of `logits + mask`, where `mask` holds `0` or `-inf`.
    ///
    /// Masked entries come out exactly zero. A row with no finite entry is a
    /// [`Error::DegenerateRow`].
    pub fn masked_softmax(&mut self, logits: Var, mask: Option<&Tensor<S>>) -> Result<Var> {
        let x = self.value(logits);
        let (rows, cols) = matrix_dims("masked_softmax", x)?;
        if let Some(m) = mask {
            same_shape("masked_softmax", x, m)?;
        }
        let mut out = vec![S::zero(); rows * cols];
        let mut z = vec![S::zero(); cols];
        for r in 0..rows {
            for (c, zi) in z.iter_mut().enumerate() {
                *zi = x.get(r, c) + mask.map_or(S::zero(), |m| m.get(r, c));
            }
            if !softmax_row(&z, &mut out[r * cols..(r + 1) * cols]) {
                return Err(Error::DegenerateRow { row: r });
            }
        }
        let out = Tensor::from_vec(&[rows, cols], out)?;
        self.push("masked_softmax", out, Op::MaskedSoftmax(logits))
    }

    /// Softmax within contiguous row segments of a column vector.
    /// `offsets` has one entry per segment start plus the total length.
    pub fn segment_softmax(&mut self, scores: Var, offsets: Vec<usize>) -> Result<Var> {
        let x = self.value(scores);
        let (rows, cols) = matrix_dims("segment_softmax", x)?;
        if cols != 1 {
            return Err(Error::shape("segment_softmax", "expected a column vector"));
        }
        check_offsets("segment_softmax", &offsets, rows)?;
        let mut out = vec![S::zero(); rows];
        for w in offsets.windows(2) {
            if !softmax_row(&x.data()[w[0]..w[1]], &mut out[w[0]..w[1]]) {
                return Err(Error::DegenerateRow { row: w[0] });
            }
        }
        let out = Tensor::from_vec(&[rows, 1], out)?;
        self.push("segment_softmax", out, Op::SegmentSoftmax(scores, offsets))
    }

    /// For each segment s: `out[s] = sum_{e in s} weights[e] * values[e]`.
    pub fn segment_weighted_sum(&mut self, weights: Var, values: Var, offsets: Vec<usize>) -> Result<Var> {
        let (w, v) = (self.value(weights), self.value(values));
        let (rows, one) = matrix_dims("segment_weighted_sum", w)?;
        let (vrows, cols) = matrix_dims("segment_weighted_sum", v)?;
        if one != 1 || rows != vrows {
            return Err(Error::shape("segment_weighted_sum", "weights must be rows x 1"));
        }
        check_offsets("segment_weighted_sum", &offsets, rows)?;
        let segs = offsets.len() - 1;
        let mut out = vec![S::zero(); segs * cols];
        for (s, win) in offsets.windows(2).enumerate() {
            let orow = &mut out[s * cols..(s + 1) * cols];
            for e in win[0]..win[1] {
                let we = w.data()[e];
                for (o, &x) in orow.iter_mut().zip(v.row(e)) {
                    *o += we * x;
                }
            }
        }
        let out = Tensor::from_vec(&[segs, cols], out)?;
        self.push(
            "segment_weighted_sum",
            out,
            Op::SegmentWeightedSum(weights, values, offsets),
        )
    }

    /// Inner product of matching rows: `[n x d] . [n x d] -> [n x 1]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("row_dot", ta, tb)?;
        let (rows, _) = matrix_dims("row_dot", ta)?;
        let data = (0..rows)
            .map(|r| ta.row(r).iter().zip(tb.row(r)).map(|(&x, &y)| x * y).sum())
            .collect();
        let out = Tensor::from_vec(&[rows, 1], data)?;
        self.push("row_dot", out, Op::RowDot(a, b))
    }

    /// Per-block `Q_b K_b^T` for inputs stacked as `blocks * w` rows.
    pub fn block_scores(&mut self, q: Var, k: Var, w: usize) -> Result<Var> {
        let (tq, tk) = (self.value(q), self.value(k));
        same_shape("block_scores", tq, tk)?;
        let (rows, _) = matrix_dims("block_scores", tq)?;
        if w == 0 || rows % w != 0 {
            return Err(Error::shape(
                "block_scores",
                format!("{rows} rows not divisible by {w}"),
            ));
        }
        let mut out = vec![S::zero(); rows * w];
        for b in 0..rows / w {
            for i in 0..w {
                let qi = tq.row(b * w + i);
                for j in 0..w {
                    out[(b * w + i) * w + j] = qi.iter().zip(tk.row(b * w + j)).map(|(&x, &y)| x * y).sum();
                }
            }
        }
        let out = Tensor::from_vec(&[rows, w], out)?;
        self.push("block_scores", out, Op::BlockScores(q, k, w))
    }

    /// Per-block `beta_b V_b` where `beta` is `blocks * w` rows of width `w`.
    pub fn block_mix(&mut self, beta: Var, v: Var, w: usize) -> Result<Var> {
        let (tb, tv) = (self.value(beta), self.value(v));
        let (rows, bw) = matrix_dims("block_mix", tb)?;
        let (vrows, cols) = matrix_dims("block_mix", tv)?;
        if bw != w || vrows != rows || w == 0 || rows % w != 0 {
            return Err(Error::shape(
                "block_mix",
                format!("{:?} vs {:?}", tb.shape(), tv.shape()),
            ));
        }
        let mut out = vec![S::zero(); rows * cols];
        for b in 0..rows / w {
            let vb = &tv.data()[b * w * cols..(b + 1) * w * cols];
            let betab = &tb.data()[b * w * w..(b + 1) * w * w];
            matmul_into(betab, vb, &mut out[b * w * cols..(b + 1) * w * cols], w, w, cols);
        }
        let out = Tensor::from_vec(&[rows, cols], out)?;
        self.push("block_mix", out, Op::BlockMix(beta, v, w))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel();
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// `sum_i weights[i] * a[i]` over the flattened values of `a`.
    pub fn weighted_sum(&mut self, a: Var, weights: Vec<S>) -> Result<Var> {
        let t = self.value(a);
        if t.numel() != weights.len() {
            return Err(Error::shape(
                "weighted_sum",
                format!("{} values, {} weights", t.numel(), weights.len()),
            ));
        }
        let s = t.data().iter().zip(&weights).map(|(&x, &w)| x * w).sum();
        self.push("weighted_sum", Tensor::scalar(s), Op::WeightedSum(a, weights))
    }

    /// Sum over rows of `KL(p_r || q_r) = sum_i p_i ln(p_i / q_i)`.
    ///
    /// Both operands must hold one probability distribution per row. Entries
    /// are floored at [`KL_FLOOR`] before the log.
    pub fn kl_div(&mut self, p: Var, q: Var) -> Result<Var> {
        let (tp, tq) = (self.value(p), self.value(q));
        same_shape("kl_div", tp, tq)?;
        check_distribution("p", tp)?;
        check_distribution("q", tq)?;
        let floor = S::of(KL_FLOOR);
        let s = tp
            .data()
            .iter()
            .zip(tq.data())
            .map(|(&a, &b)| {
                let (a, b) = (a.max(floor), b.max(floor));
                a * (a / b).ln()
            })
            .sum();
        self.push("kl_div", Tensor::scalar(s), Op::KlDiv(p, q))
    }

    pub(super) fn op_backward(&self, node: usize, g: &Tensor<S>) -> Result<Vec<(Var, Tensor<S>)>> {
        let out = &*self.nodes[node].value;
        let val = |v: Var| self.value(v);
        Ok(match &self.nodes[node].op {
            Op::Constant | Op::Param(_) => vec![],
            Op::MatMul(a, b) => {
                let da = g.matmul(&val(*b).transpose())?;
                let db = val(*a).transpose().matmul(g)?;
                vec![(*a, da), (*b, db)]
            }
            Op::Transpose(a) => vec![(*a, g.transpose())],
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|x| -x))],
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let da = zip(g, tb, |x, y| x * y);
                let db = zip(g, ta, |x, y| x * y);
                vec![(*a, da), (*b, db)]
            }
            Op::Scale(a, s) => vec![(*a, g.map(|x| x * *s))],
            Op::Reshape(a) => vec![(*a, Tensor::from_vec(val(*a).shape(), g.data().to_vec())?)],
            Op::RowGather(a, idx) => {
                let mut d = Tensor::zeros(val(*a).shape());
                for (r, &i) in idx.iter().enumerate() {
                    for (x, &y) in d.row_mut(i).iter_mut().zip(g.row(r)) {
                        *x += y;
                    }
                }
                vec![(*a, d)]
            }
            Op::SliceRows(a, start) => {
                let mut d = Tensor::zeros(val(*a).shape());
                let cols = g.cols();
                d.data_mut()[start * cols..start * cols + g.numel()].copy_from_slice(g.data());
                vec![(*a, d)]
            }
            Op::ConcatCols(vs) => {
                let rows = g.rows();
                let mut offset = 0;
                let mut res = Vec::with_capacity(vs.len());
                for &v in vs {
                    let c = val(v).cols();
                    let mut data = Vec::with_capacity(rows * c);
                    for r in 0..rows {
                        data.extend_from_slice(&g.row(r)[offset..offset + c]);
                    }
                    offset += c;
                    res.push((v, Tensor::from_vec(&[rows, c], data)?));
                }
                res
            }
            Op::ConcatRows(vs) => {
                let cols = g.cols();
                let mut offset = 0;
                let mut res = Vec::with_capacity(vs.len());
                for &v in vs {
                    let r = val(v).rows();
                    let data = g.data()[offset * cols..(offset + r) * cols].to_vec();
                    offset += r;
                    res.push((v, Tensor::from_vec(&[r, cols], data)?));
                }
                res
            }
            Op::Elu(a) => {
                let alpha = S::of(ELU_ALPHA);
                let d = zip3(
                    g,
                    val(*a),
                    out,
                    |gi, x, y| if x > S::zero() { gi } else { gi * (y + alpha) },
                );
                vec![(*a, d)]
            }
            Op::LeakyRelu(a) => {
                let slope = S::of(LEAKY_SLOPE);
                let d = zip(g, val(*a), |gi, x| if x > S::zero() { gi } else { gi * slope });
                vec![(*a, d)]
            }
            Op::Sigmoid(a) => vec![(*a, zip(g, out, |gi, y| gi * y * (S::one() - y)))],
            Op::LogSigmoid(a) => vec![(*a, zip(g, val(*a), |gi, x| gi * sigmoid(-x)))],
            Op::Exp(a) => vec![(*a, zip(g, out, |gi, y| gi * y))],
            Op::Clamp(a, lo, hi) => {
                let d = zip(g, val(*a), |gi, x| if x >= *lo && x <= *hi { gi } else { S::zero() });
                vec![(*a, d)]
            }
            Op::MaskedSoftmax(a) => {
                let cols = out.cols();
                let mut d = Tensor::zeros(out.shape());
                for r in 0..out.rows() {
                    softmax_row_backward(out.row(r), g.row(r), &mut d.data_mut()[r * cols..(r + 1) * cols]);
                }
                vec![(*a, d)]
            }
            Op::SegmentSoftmax(a, offsets) => {
                let mut d = Tensor::zeros(out.shape());
                for w in offsets.windows(2) {
                    softmax_row_backward(
                        &out.data()[w[0]..w[1]],
                        &g.data()[w[0]..w[1]],
                        &mut d.data_mut()[w[0]..w[1]],
                    );
                }
                vec![(*a, d)]
            }
            Op::SegmentWeightedSum(wv, vv, offsets) => {
                let (w, v) = (val(*wv), val(*vv));
                let mut dw = Tensor::zeros(w.shape());
                let mut dv = Tensor::zeros(v.shape());
                for (s, win) in offsets.windows(2).enumerate() {
                    let gs = g.row(s);
                    for e in win[0]..win[1] {
                        dw.data_mut()[e] = gs.iter().zip(v.row(e)).map(|(&x, &y)| x * y).sum();
                        let we = w.data()[e];
                        for (x, &y) in dv.row_mut(e).iter_mut().zip(gs) {
                            *x += we * y;
                        }
                    }
                }
                vec![(*wv, dw), (*vv, dv)]
            }
            Op::RowDot(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let mut da = Tensor::zeros(ta.shape());
                let mut db = Tensor::zeros(tb.shape());
                for r in 0..ta.rows() {
                    let gr = g.data()[r];
                    for (x, &y) in da.row_mut(r).iter_mut().zip(tb.row(r)) {
                        *x = gr * y;
                    }
                    for (x, &y) in db.row_mut(r).iter_mut().zip(ta.row(r)) {
                        *x = gr * y;
                    }
                }
                vec![(*a, da), (*b, db)]
            }
            Op::BlockScores(q, k, w) => {
                let (tq, tk, w) = (val(*q), val(*k), *w);
                let mut dq = Tensor::zeros(tq.shape());
                let mut dk = Tensor::zeros(tk.shape());
                for b in 0..tq.rows() / w {
                    for i in 0..w {
                        for j in 0..w {
                            let gij = g.get(b * w + i, j);
                            if gij == S::zero() {
                                continue;
                            }
                            for (x, &y) in dq.row_mut(b * w + i).iter_mut().zip(tk.row(b * w + j)) {
                                *x += gij * y;
                            }
                            for (x, &y) in dk.row_mut(b * w + j).iter_mut().zip(tq.row(b * w + i)) {
                                *x += gij * y;
                            }
                        }
                    }
                }
                vec![(*q, dq), (*k, dk)]
            }
            Op::BlockMix(beta, v, w) => {
                let (tb, tv, w) = (val(*beta), val(*v), *w);
                let mut dbeta = Tensor::zeros(tb.shape());
                let mut dv = Tensor::zeros(tv.shape());
                for b in 0..tb.rows() / w {
                    for i in 0..w {
                        let gi = g.row(b * w + i);
                        for j in 0..w {
                            let vj = tv.row(b * w + j);
                            dbeta.data_mut()[(b * w + i) * w + j] = gi.iter().zip(vj).map(|(&x, &y)| x * y).sum();
                            let bij = tb.get(b * w + i, j);
                            for (x, &y) in dv.row_mut(b * w + j).iter_mut().zip(gi) {
                                *x += bij * y;
                            }
                        }
                    }
                }
                vec![(*beta, dbeta), (*v, dv)]
            }
            Op::Sum(a) => vec![(*a, Tensor::full(val(*a).shape(), g.item()))],
            Op::WeightedSum(a, weights) => {
                let gi = g.item();
                let data = weights.iter().map(|&w| w * gi).collect();
                vec![(*a, Tensor::from_vec(val(*a).shape(), data)?)]
            }
            Op::KlDiv(p, q) => {
                let (tp, tq) = (val(*p), val(*q));
                let floor = S::of(KL_FLOOR);
                let gi = g.item();
                let mut dp = Tensor::zeros(tp.shape());
                let mut dq = Tensor::zeros(tq.shape());
                for (i, (&a, &b)) in tp.data().iter().zip(tq.data()).enumerate() {
                    let (ca, cb) = (a.max(floor), b.max(floor));
                    if a >= floor {
                        dp.data_mut()[i] = gi * ((ca / cb).ln() + S::one());
                    }
                    if b >= floor {
                        dq.data_mut()[i] = -gi * ca / cb;
                    }
                }
                vec![(*p, dp), (*q, dq)]
            }
        })
    }
}

fn zip<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, f: impl Fn(S, S) -> S) -> Tensor<S> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.shape(), data).expect("same shape")
}

fn zip3<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, c: &Tensor<S>, f: impl Fn(S, S, S) -> S) -> Tensor<S> {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .zip(c.data())
        .map(|((&x, &y), &z)| f(x, y, z))
        .collect();
    Tensor::from_vec(a.shape(), data).expect("same shape")
}
