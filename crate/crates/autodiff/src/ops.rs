//! Forward definitions and local derivatives of every tape operator.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::sync::Arc;

use crate::error::{DiffError, Result};
use crate::tape::{Op, Tape, Var};
use crate::tensor::{gemm, Real, Tensor};

fn shape_err<T>(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Result<T> {
    Err(DiffError::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    })
}

/// `b` broadcasts over `a` when its shape is a suffix of `a`'s shape.
fn broadcasts(a: &[usize], b: &[usize]) -> bool {
    b.len() <= a.len() && a[a.len() - b.len()..] == *b
}

#[inline]
fn gelu_fwd<F: Real>(x: F) -> F {
    let half = F::from_f64(0.5);
    half * x * (F::one() + (x * F::from_f64(FRAC_1_SQRT_2)).erf())
}

#[inline]
fn gelu_grad<F: Real>(x: F) -> F {
    let half = F::from_f64(0.5);
    let cdf = half * (F::one() + (x * F::from_f64(FRAC_1_SQRT_2)).erf());
    let pdf = (-half * x * x).exp() * F::from_f64(1.0 / (2.0 * PI).sqrt());
    cdf + x * pdf
}

/// Splits `[.., T, N, C]` into `(batch, T, N, C)`.
fn conv_dims(shape: &[usize]) -> Option<(usize, usize, usize, usize)> {
    match *shape {
        [t, n, c] => Some((1, t, n, c)),
        [b, t, n, c] => Some((b, t, n, c)),
        _ => None,
    }
}

/// Source time offset range for kernel tap `k`: output frames `lo..hi` read
/// input frames `lo + k - half .. hi + k - half`.
fn tap_range(t: usize, k: usize, half: usize) -> (usize, usize) {
    let lo = half.saturating_sub(k);
    let hi = (t + half).saturating_sub(k).min(t);
    (lo, hi.max(lo))
}

impl<F: Real> Tape<F> {
    /// `a[.., k] @ b[k, n]`; every leading axis of `a` is a row axis.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.is_empty() || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return shape_err("matmul", sa, sb);
        }
        let (k, n) = (sb[0], sb[1]);
        let rows = self.value(a).len() / k.max(1);
        let mut shape = sa[..sa.len() - 1].to_vec();
        shape.push(n);
        let mut out = Tensor::zeros(&shape);
        gemm(
            false,
            false,
            rows,
            k,
            n,
            self.value(a).data(),
            self.value(b).data(),
            out.data_mut(),
            false,
        );
        self.push(out, Op::MatMul(a, b))
    }

    /// Elementwise `a + b`, with `b` broadcast over the leading axes of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if !broadcasts(sa, sb) {
            return shape_err("add", sa, sb);
        }
        let mut out = self.value(a).clone();
        let bv = self.value(b).data();
        for chunk in out.data_mut().chunks_exact_mut(bv.len()) {
            for (o, &y) in chunk.iter_mut().zip(bv) {
                *o += y;
            }
        }
        self.push(out, Op::Add(a, b))
    }

    /// Elementwise `a * b`, with `b` broadcast over the leading axes of `a`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if !broadcasts(sa, sb) {
            return shape_err("mul", sa, sb);
        }
        let mut out = self.value(a).clone();
        let bv = self.value(b).data();
        for chunk in out.data_mut().chunks_exact_mut(bv.len()) {
            for (o, &y) in chunk.iter_mut().zip(bv) {
                *o *= y;
            }
        }
        self.push(out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let f = F::from_f64(s);
        let v = self.value(x);
        let out = Tensor::new(
            v.shape().to_vec(),
            v.data().iter().map(|&e| e * f).collect(),
        )?;
        self.push(out, Op::Scale(x, s))
    }

    /// Exact GeLU, `x * Phi(x)`.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let out = Tensor::new(
            v.shape().to_vec(),
            v.data().iter().map(|&e| gelu_fwd(e)).collect(),
        )?;
        self.push(out, Op::Gelu(x))
    }

    /// Normalizes over the last axis, then applies `gamma * xhat + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let c = self.value(x).last_dim();
        for p in [gamma, beta] {
            if self.shape(p) != [c] {
                return shape_err("layer_norm", self.shape(x), self.shape(p));
            }
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_exact_mut(c) {
            let (mean, inv) = row_stats(row, eps);
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - mean) * inv * g[j] + b[j];
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                eps,
            },
        )
    }

    /// Convolution along the time axis of `[B, T, N, Cin]` (or `[T, N, Cin]`)
    /// with weights `[K, Cin, Cout]`, zero padded to keep `T`. Each node is an
    /// independent sequence; channels mix densely.
    pub fn conv1d_time(&mut self, x: Var, w: Var) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        let Some((batch, t, n, cin)) = conv_dims(sx) else {
            return shape_err("conv1d_time", sx, sw);
        };
        if sw.len() != 3 || sw[1] != cin || sw[0] % 2 == 0 {
            return shape_err("conv1d_time", sx, sw);
        }
        let (k, cout) = (sw[0], sw[2]);
        let half = (k - 1) / 2;
        let mut shape = sx.to_vec();
        *shape.last_mut().unwrap() = cout;
        let mut out = Tensor::zeros(&shape);
        let (xv, wv) = (self.value(x).data(), self.value(w).data());
        let od = out.data_mut();
        for bi in 0..batch {
            let xb = &xv[bi * t * n * cin..(bi + 1) * t * n * cin];
            let ob = &mut od[bi * t * n * cout..(bi + 1) * t * n * cout];
            for tap in 0..k {
                let (lo, hi) = tap_range(t, tap, half);
                if lo >= hi {
                    continue;
                }
                let src = (lo + tap - half) * n;
                let rows = (hi - lo) * n;
                gemm(
                    false,
                    false,
                    rows,
                    cin,
                    cout,
                    &xb[src * cin..],
                    &wv[tap * cin * cout..(tap + 1) * cin * cout],
                    &mut ob[lo * n * cout..],
                    true,
                );
            }
        }
        self.push(out, Op::Conv1dTime { x, w })
    }

    /// Selects rows (first-axis slices) of `x`.
    pub fn gather_rows(&mut self, x: Var, idx: Arc<[usize]>) -> Result<Var> {
        let sx = self.shape(x);
        if sx.is_empty() {
            return shape_err("gather_rows", sx, &[idx.len()]);
        }
        let rows = sx[0];
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(DiffError::InvalidArgument(format!(
                "gather_rows: index {bad} out of range for {rows} rows"
            )));
        }
        let width = self.value(x).len() / rows.max(1);
        let mut shape = sx.to_vec();
        shape[0] = idx.len();
        let xv = self.value(x).data();
        let mut data = Vec::with_capacity(idx.len() * width);
        for &i in idx.iter() {
            data.extend_from_slice(&xv[i * width..(i + 1) * width]);
        }
        self.push(Tensor::new(shape, data)?, Op::GatherRows { x, idx })
    }

    /// Sums rows of `x` into `num_segments` buckets chosen by `seg`.
    pub fn segment_sum(&mut self, x: Var, seg: Arc<[usize]>, num_segments: usize) -> Result<Var> {
        let sx = self.shape(x);
        if sx.is_empty() || sx[0] != seg.len() {
            return shape_err("segment_sum", sx, &[seg.len()]);
        }
        if let Some(&bad) = seg.iter().find(|&&s| s >= num_segments) {
            return Err(DiffError::InvalidArgument(format!(
                "segment_sum: segment {bad} out of range for {num_segments} segments"
            )));
        }
        let width = self.value(x).len() / sx[0].max(1);
        let mut shape = sx.to_vec();
        shape[0] = num_segments;
        let mut out = Tensor::zeros(&shape);
        let xv = self.value(x).data();
        let od = out.data_mut();
        for (r, &s) in seg.iter().enumerate() {
            for (o, &v) in od[s * width..(s + 1) * width]
                .iter_mut()
                .zip(&xv[r * width..(r + 1) * width])
            {
                *o += v;
            }
        }
        self.push(out, Op::SegmentSum { x, seg })
    }

    /// Mean over the listed axes, which are removed from the shape.
    pub fn mean_over_axes(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let mut axes = axes.to_vec();
        axes.sort_unstable();
        axes.dedup();
        if axes.iter().any(|&a| a >= sx.len()) {
            return shape_err("mean_over_axes", &sx, &axes);
        }
        let out_shape: Vec<usize> = (0..sx.len())
            .filter(|a| !axes.contains(a))
            .map(|a| sx[a])
            .collect();
        let count: usize = axes.iter().map(|&a| sx[a]).product();
        let map = reduce_map(&sx, &axes);
        let mut out = Tensor::zeros(&out_shape);
        let inv = F::from_f64(1.0 / count.max(1) as f64);
        {
            let od = out.data_mut();
            for (i, &v) in self.value(x).data().iter().enumerate() {
                od[map(i)] += v;
            }
            for o in od.iter_mut() {
                *o *= inv;
            }
        }
        self.push(out, Op::MeanOverAxes { x, axes })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total = self.value(x).data().iter().fold(F::zero(), |a, &b| a + b);
        self.push(Tensor::scalar(total), Op::Sum(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshaped(shape)?;
        self.push(out, Op::Reshape(x))
    }

    /// Mean over rows of `-log softmax(logits)[label]`; `logits` is `[B, C]`
    /// or `[C]` with one label per row.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: Arc<[usize]>) -> Result<Var> {
        let s = self.shape(logits);
        let c = self.value(logits).last_dim();
        let rows = self.value(logits).len() / c.max(1);
        if s.is_empty() || s.len() > 2 || rows != labels.len() {
            return shape_err("softmax_cross_entropy", s, &[labels.len()]);
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(DiffError::InvalidArgument(format!(
                "softmax_cross_entropy: label {bad} out of range for {c} classes"
            )));
        }
        let lv = self.value(logits).data();
        let mut total = 0.0f64;
        for (r, &label) in labels.iter().enumerate() {
            let row = &lv[r * c..(r + 1) * c];
            let max = row
                .iter()
                .fold(F::neg_infinity(), |m, &v| m.max(v))
                .as_f64();
            let lse = max
                + row
                    .iter()
                    .map(|v| (v.as_f64() - max).exp())
                    .sum::<f64>()
                    .ln();
            total += lse - row[label].as_f64();
        }
        let loss = F::from_f64(total / rows as f64);
        self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy { logits, labels },
        )
    }

    pub(crate) fn backprop(
        &self,
        op: &Op,
        g: Tensor<F>,
        grads: &mut [Option<Tensor<F>>],
    ) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (k, n) = (bv.shape()[0], bv.shape()[1]);
                let rows = av.len() / k.max(1);
                if self.requires_grad(*a) {
                    let mut da = Tensor::zeros(av.shape());
                    gemm(
                        false,
                        true,
                        rows,
                        n,
                        k,
                        g.data(),
                        bv.data(),
                        da.data_mut(),
                        false,
                    );
                    self.accumulate(grads, *a, da);
                }
                if self.requires_grad(*b) {
                    let mut db = Tensor::zeros(bv.shape());
                    gemm(
                        true,
                        false,
                        k,
                        rows,
                        n,
                        av.data(),
                        g.data(),
                        db.data_mut(),
                        false,
                    );
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                if self.requires_grad(*b) {
                    let bs = self.value(*b).shape();
                    let mut db = Tensor::zeros(bs);
                    let w = db.len();
                    for chunk in g.data().chunks_exact(w) {
                        for (d, &v) in db.data_mut().iter_mut().zip(chunk) {
                            *d += v;
                        }
                    }
                    self.accumulate(grads, *b, db);
                }
                self.accumulate(grads, *a, g);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let w = bv.len();
                if self.requires_grad(*b) {
                    let mut db = Tensor::zeros(bv.shape());
                    for (gc, ac) in g.data().chunks_exact(w).zip(av.data().chunks_exact(w)) {
                        for ((d, &gv), &x) in db.data_mut().iter_mut().zip(gc).zip(ac) {
                            *d += gv * x;
                        }
                    }
                    self.accumulate(grads, *b, db);
                }
                if self.requires_grad(*a) {
                    let mut da = g;
                    for chunk in da.data_mut().chunks_exact_mut(w) {
                        for (d, &y) in chunk.iter_mut().zip(bv.data()) {
                            *d *= y;
                        }
                    }
                    self.accumulate(grads, *a, da);
                }
            }
            Op::Scale(x, s) => {
                let f = F::from_f64(*s);
                let mut dx = g;
                dx.data_mut().iter_mut().for_each(|v| *v *= f);
                self.accumulate(grads, *x, dx);
            }
            Op::Gelu(x) => {
                let mut dx = g;
                for (d, &v) in dx.data_mut().iter_mut().zip(self.value(*x).data()) {
                    *d *= gelu_grad(v);
                }
                self.accumulate(grads, *x, dx);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                eps,
            } => {
                let xv = self.value(*x);
                let c = xv.last_dim();
                let gv = self.value(*gamma).data();
                let mut dx = Tensor::zeros(xv.shape());
                let mut dgamma = Tensor::zeros(&[c]);
                let mut dbeta = Tensor::zeros(&[c]);
                let inv_c = F::from_f64(1.0 / c as f64);
                let mut xhat = vec![F::zero(); c];
                let mut dxhat = vec![F::zero(); c];
                for ((row, grow), drow) in xv
                    .data()
                    .chunks_exact(c)
                    .zip(g.data().chunks_exact(c))
                    .zip(dx.data_mut().chunks_exact_mut(c))
                {
                    let (mean, inv) = row_stats(row, *eps);
                    let (mut s1, mut s2) = (F::zero(), F::zero());
                    for j in 0..c {
                        xhat[j] = (row[j] - mean) * inv;
                        dxhat[j] = grow[j] * gv[j];
                        s1 += dxhat[j];
                        s2 += dxhat[j] * xhat[j];
                        dgamma.data_mut()[j] += grow[j] * xhat[j];
                        dbeta.data_mut()[j] += grow[j];
                    }
                    for j in 0..c {
                        drow[j] = inv * (dxhat[j] - inv_c * s1 - xhat[j] * inv_c * s2);
                    }
                }
                self.accumulate(grads, *x, dx);
                self.accumulate(grads, *gamma, dgamma);
                self.accumulate(grads, *beta, dbeta);
            }
            Op::Conv1dTime { x, w } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (batch, t, n, cin) = conv_dims(xv.shape()).expect("checked in forward");
                let (k, cout) = (wv.shape()[0], wv.shape()[2]);
                let half = (k - 1) / 2;
                let need_x = self.requires_grad(*x);
                let need_w = self.requires_grad(*w);
                let mut dx = Tensor::zeros(if need_x { xv.shape() } else { &[0] });
                let mut dw = Tensor::zeros(if need_w { wv.shape() } else { &[0] });
                for bi in 0..batch {
                    let xb = &xv.data()[bi * t * n * cin..(bi + 1) * t * n * cin];
                    let gb = &g.data()[bi * t * n * cout..(bi + 1) * t * n * cout];
                    for tap in 0..k {
                        let (lo, hi) = tap_range(t, tap, half);
                        if lo >= hi {
                            continue;
                        }
                        let src = (lo + tap - half) * n;
                        let rows = (hi - lo) * n;
                        let wk = &wv.data()[tap * cin * cout..(tap + 1) * cin * cout];
                        if need_x {
                            let dxb = &mut dx.data_mut()[bi * t * n * cin..(bi + 1) * t * n * cin];
                            gemm(
                                false,
                                true,
                                rows,
                                cout,
                                cin,
                                &gb[lo * n * cout..],
                                wk,
                                &mut dxb[src * cin..],
                                true,
                            );
                        }
                        if need_w {
                            let dwk = &mut dw.data_mut()[tap * cin * cout..(tap + 1) * cin * cout];
                            gemm(
                                true,
                                false,
                                cin,
                                rows,
                                cout,
                                &xb[src * cin..],
                                &gb[lo * n * cout..],
                                dwk,
                                true,
                            );
                        }
                    }
                }
                if need_x {
                    self.accumulate(grads, *x, dx);
                }
                if need_w {
                    self.accumulate(grads, *w, dw);
                }
            }
            Op::GatherRows { x, idx } => {
                let xv = self.value(*x);
                let width = xv.len() / xv.shape()[0].max(1);
                let mut dx = Tensor::zeros(xv.shape());
                let dd = dx.data_mut();
                for (r, &i) in idx.iter().enumerate() {
                    for (d, &v) in dd[i * width..(i + 1) * width]
                        .iter_mut()
                        .zip(&g.data()[r * width..(r + 1) * width])
                    {
                        *d += v;
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::SegmentSum { x, seg } => {
                let xv = self.value(*x);
                let width = xv.len() / xv.shape()[0].max(1);
                let mut data = Vec::with_capacity(xv.len());
                for &s in seg.iter() {
                    data.extend_from_slice(&g.data()[s * width..(s + 1) * width]);
                }
                self.accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), data)?);
            }
            Op::MeanOverAxes { x, axes } => {
                let sx = self.value(*x).shape().to_vec();
                let count: usize = axes.iter().map(|&a| sx[a]).product();
                let inv = F::from_f64(1.0 / count.max(1) as f64);
                let map = reduce_map(&sx, axes);
                let n: usize = sx.iter().product();
                let gd = g.data();
                let dx = Tensor::new(sx, (0..n).map(|i| gd[map(i)] * inv).collect())?;
                self.accumulate(grads, *x, dx);
            }
            Op::Sum(x) => {
                let dx = Tensor::full(self.value(*x).shape(), g.item());
                self.accumulate(grads, *x, dx);
            }
            Op::Reshape(x) => {
                let dx = g.reshaped(self.value(*x).shape())?;
                self.accumulate(grads, *x, dx);
            }
            Op::SoftmaxCrossEntropy { logits, labels } => {
                let lv = self.value(*logits);
                let c = lv.last_dim();
                let rows = labels.len();
                let scale = g.item().as_f64() / rows as f64;
                let mut dl = Tensor::zeros(lv.shape());
                for (r, &label) in labels.iter().enumerate() {
                    let row = &lv.data()[r * c..(r + 1) * c];
                    let max = row
                        .iter()
                        .fold(F::neg_infinity(), |m, &v| m.max(v))
                        .as_f64();
                    let exps: Vec<f64> = row.iter().map(|v| (v.as_f64() - max).exp()).collect();
                    let z: f64 = exps.iter().sum();
                    let drow = &mut dl.data_mut()[r * c..(r + 1) * c];
                    for j in 0..c {
                        let p = exps[j] / z - if j == label { 1.0 } else { 0.0 };
                        drow[j] = F::from_f64(p * scale);
                    }
                }
                self.accumulate(grads, *logits, dl);
            }
        }
        Ok(())
    }
}

fn row_stats<F: Real>(row: &[F], eps: f64) -> (F, F) {
    let c = F::from_f64(row.len() as f64);
    let mean = row.iter().fold(F::zero(), |a, &b| a + b) / c;
    let var = row
        .iter()
        .fold(F::zero(), |a, &b| a + (b - mean) * (b - mean))
        / c;
    (mean, (var + F::from_f64(eps)).sqrt().recip())
}

/// Maps a flat input index to the flat output index after removing `axes`.
fn reduce_map(shape: &[usize], axes: &[usize]) -> impl Fn(usize) -> usize {
    let rank = shape.len();
    let mut in_strides = vec![1usize; rank];
    for a in (0..rank.saturating_sub(1)).rev() {
        in_strides[a] = in_strides[a + 1] * shape[a + 1];
    }
    let mut out_strides = vec![0usize; rank];
    let mut acc = 1;
    for a in (0..rank).rev() {
        if !axes.contains(&a) {
            out_strides[a] = acc;
            acc *= shape[a];
        }
    }
    let shape = shape.to_vec();
    move |i| {
        let mut o = 0;
        for a in 0..rank {
            o += (i / in_strides[a]) % shape[a] * out_strides[a];
        }
        o
    }
}
