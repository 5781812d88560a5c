//! Forward implementations of the tape primitives.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::tape::{ConvGeom, LstmCellSaved, Op};
use super::{gemm, split_axis, Tape, Tensor, Var};
use crate::{Error, Real, Result};

/// Visits `(output_index, input_index)` pairs of a permutation of `in_shape`.
pub(crate) fn for_each_permuted(in_shape: &[usize], perm: &[usize], mut f: impl FnMut(usize, usize)) {
    let rank = in_shape.len();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let total: usize = in_shape.iter().product();
    if total == 0 {
        return;
    }
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for out_i in 0..total {
        f(out_i, src);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            src += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            src -= strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
}

fn out_len(len: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = len + 2 * pad;
    if stride == 0 || kernel == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Length of a valid (unpadded) strided convolution: `floor((L - k) / s) + 1`.
pub fn conv1d_out_len(len: usize, kernel: usize, stride: usize) -> Option<usize> {
    out_len(len, kernel, stride, 0)
}

impl<T: Real> Tape<T> {
    fn binary_same(&self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::shapes(name, x.shape(), y.shape()));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.shape(), data)
    }

    fn binary_bias(&self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (x, y) = (self.value(a), self.value(b));
        let (xs, ys) = (x.shape(), y.shape());
        if ys.is_empty() || ys.len() > xs.len() || xs[xs.len() - ys.len()..] != *ys {
            return Err(Error::shapes(name, xs, ys));
        }
        let n = y.len();
        let data = x.data().chunks(n).flat_map(|row| row.iter().zip(y.data()).map(|(&p, &q)| f(p, q))).collect();
        Tensor::new(xs, data)
    }

    fn unary(&self, a: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        let x = self.value(a);
        Tensor { shape: x.shape().to_vec(), data: x.data().iter().map(|&v| f(v)).collect() }
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary_same("add", a, b, |p, q| p + q)?;
        self.push("add", v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary_same("sub", a, b, |p, q| p - q)?;
        self.push("sub", v, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product of equal shapes.
    pub fn hadamard(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary_same("hadamard", a, b, |p, q| p * q)?;
        self.push("hadamard", v, Op::Mul(a, b), &[a, b])
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.hadamard(a, b)
    }

    /// `a + b` where `b`'s shape is a trailing suffix of `a`'s shape.
    pub fn add_bias(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary_bias("add_bias", a, b, |p, q| p + q)?;
        self.push("add_bias", v, Op::AddBias(a, b), &[a, b])
    }

    /// `a ⊙ b` where `b`'s shape is a trailing suffix of `a`'s shape.
    pub fn mul_bias(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary_bias("mul_bias", a, b, |p, q| p * q)?;
        self.push("mul_bias", v, Op::MulBias(a, b), &[a, b])
    }

    pub fn scale(&self, a: Var, s: T) -> Result<Var> {
        let v = self.unary(a, |x| x * s);
        self.push("scale", v, Op::Scale(a, s), &[a])
    }

    pub fn add_scalar(&self, a: Var, s: T) -> Result<Var> {
        let v = self.unary(a, |x| x + s);
        self.push("add_scalar", v, Op::AddScalar(a), &[a])
    }

    /// `(..., K) · (K, N) -> (..., N)`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let v = {
            let (x, w) = (self.value(a), self.value(b));
            let (xs, ws) = (x.shape(), w.shape());
            if xs.is_empty() || ws.len() != 2 || xs[xs.len() - 1] != ws[0] {
                return Err(Error::shapes("matmul", xs, ws));
            }
            let (k, n) = (ws[0], ws[1]);
            let rows = x.len() / k.max(1);
            let mut out = vec![T::zero(); rows * n];
            gemm(rows, k, n, x.data(), false, w.data(), false, &mut out, false);
            let mut shape = xs.to_vec();
            *shape.last_mut().unwrap() = n;
            Tensor::new(&shape, out)?
        };
        self.push("matmul", v, Op::MatMul(a, b), &[a, b])
    }

    /// Batched product `(G, M, K) · (G, K, N)`, or `(G, M, K) · (G, N, K)ᵀ`
    /// when `trans_b`.
    pub fn batch_matmul(&self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (v, groups, m, k, n) = {
            let (x, y) = (self.value(a), self.value(b));
            let (xs, ys) = (x.shape(), y.shape());
            if xs.len() != 3 || ys.len() != 3 || xs[0] != ys[0] {
                return Err(Error::shapes("batch_matmul", xs, ys));
            }
            let (groups, m, k) = (xs[0], xs[1], xs[2]);
            let (kb, n) = if trans_b { (ys[2], ys[1]) } else { (ys[1], ys[2]) };
            if kb != k {
                return Err(Error::shapes("batch_matmul", xs, ys));
            }
            let mut out = vec![T::zero(); groups * m * n];
            for gi in 0..groups {
                gemm(
                    m,
                    k,
                    n,
                    &x.data()[gi * m * k..(gi + 1) * m * k],
                    false,
                    &y.data()[gi * k * n..(gi + 1) * k * n],
                    trans_b,
                    &mut out[gi * m * n..(gi + 1) * m * n],
                    false,
                );
            }
            (Tensor::new(&[groups, m, n], out)?, groups, m, k, n)
        };
        self.push("batch_matmul", v, Op::BatchMatMul { a, b, trans_b, groups, m, k, n }, &[a, b])
    }

    /// 1-D convolution along the spatial axis.
    ///
    /// `x: (N, L, C)`, `w: (kernel, C, F)`, zero padding `pad` on both sides;
    /// output `(N, floor((L + 2 pad - kernel) / stride) + 1, F)`.
    pub fn conv1d(&self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let needs = self.needs_grad(&[x, w]);
        let (v, cols, geom) = {
            let (xv, wv) = (self.value(x), self.value(w));
            let (xs, ws) = (xv.shape(), wv.shape());
            if xs.len() != 3 || ws.len() != 3 || xs[2] != ws[1] {
                return Err(Error::shapes("conv1d", xs, ws));
            }
            let ol = out_len(xs[1], ws[0], stride, pad)
                .ok_or_else(|| Error::shape("conv1d", format!("length {} too short for kernel {}", xs[1], ws[0])))?;
            let geom = ConvGeom {
                n: xs[0],
                len: xs[1],
                channels: xs[2],
                kernel: ws[0],
                stride,
                pad,
                out_len: ol,
                filters: ws[2],
            };
            let mut cols = vec![T::zero(); geom.rows() * geom.patch()];
            let xd = xv.data();
            geom.for_each_tap(|ci, xi| cols[ci] = xd[xi]);
            let mut out = vec![T::zero(); geom.rows() * geom.filters];
            gemm(geom.rows(), geom.patch(), geom.filters, &cols, false, wv.data(), false, &mut out, false);
            (Tensor::new(&[geom.n, ol, geom.filters], out)?, cols, geom)
        };
        let cols = if needs { cols } else { Vec::new() };
        self.push("conv1d", v, Op::Conv1d { x, w, cols, geom }, &[x, w])
    }

    /// Valid (unpadded) convolution.
    pub fn conv1d_valid(&self, x: Var, w: Var, stride: usize) -> Result<Var> {
        self.conv1d(x, w, stride, 0)
    }

    pub fn sigmoid(&self, a: Var) -> Result<Var> {
        let v = self.unary(a, sigmoid);
        self.push("sigmoid", v, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&self, a: Var) -> Result<Var> {
        let v = self.unary(a, |x| x.tanh());
        self.push("tanh", v, Op::Tanh(a), &[a])
    }

    pub fn relu(&self, a: Var) -> Result<Var> {
        let v = self.unary(a, |x| if x > T::zero() { x } else { T::zero() });
        self.push("relu", v, Op::Relu(a), &[a])
    }

    pub fn exp(&self, a: Var) -> Result<Var> {
        let v = self.unary(a, |x| x.exp());
        self.push("exp", v, Op::Exp(a), &[a])
    }

    pub fn log(&self, a: Var) -> Result<Var> {
        if let Some(i) = self.value(a).data().iter().position(|&x| !(x > T::zero())) {
            return Err(Error::Domain { op: "log", detail: format!("nonpositive input at element {i}") });
        }
        let v = self.unary(a, |x| x.ln());
        self.push("log", v, Op::Log(a), &[a])
    }

    pub fn sum(&self, a: Var) -> Result<Var> {
        let s: T = self.value(a).data().iter().copied().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&self, a: Var) -> Result<Var> {
        let v = {
            let x = self.value(a);
            if x.is_empty() {
                return Err(Error::shape("mean", "empty tensor"));
            }
            x.data().iter().copied().sum::<T>() / T::of(x.len() as f64)
        };
        self.push("mean", Tensor::scalar(v), Op::Mean(a), &[a])
    }

    fn reduce_axis(&self, name: &'static str, a: Var, axis: usize) -> Result<(Vec<usize>, usize, usize, usize)> {
        let shape = self.shape(a);
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(Error::shape(name, format!("axis {axis} invalid for {shape:?}")));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        Ok((out_shape, outer, len, inner))
    }

    /// Sum over `axis`, removing it.
    pub fn sum_axis(&self, a: Var, axis: usize) -> Result<Var> {
        let v = self.sum_axis_value("sum_axis", a, axis, false)?;
        self.push("sum_axis", v, Op::SumAxis { x: a, axis }, &[a])
    }

    /// Mean over `axis`, removing it.
    pub fn mean_axis(&self, a: Var, axis: usize) -> Result<Var> {
        let v = self.sum_axis_value("mean_axis", a, axis, true)?;
        self.push("mean_axis", v, Op::MeanAxis { x: a, axis }, &[a])
    }

    fn sum_axis_value(&self, name: &'static str, a: Var, axis: usize, mean: bool) -> Result<Tensor<T>> {
        let (out_shape, outer, len, inner) = self.reduce_axis(name, a, axis)?;
        let x = self.value(a);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &x.data()[(o * len + l) * inner..(o * len + l + 1) * inner];
                out[o * inner..(o + 1) * inner].iter_mut().zip(src).for_each(|(d, &s)| *d += s);
            }
        }
        if mean {
            let inv = T::one() / T::of(len as f64);
            out.iter_mut().for_each(|v| *v *= inv);
        }
        Tensor::new(&out_shape, out)
    }

    /// Maximum over `axis`; the gradient flows to the first maximal element.
    pub fn max_axis(&self, a: Var, axis: usize) -> Result<Var> {
        let (out_shape, outer, len, inner) = self.reduce_axis("max_axis", a, axis)?;
        let (v, argmax) = {
            let x = self.value(a);
            let mut out = vec![T::neg_infinity(); outer * inner];
            let mut arg = vec![0usize; outer * inner];
            for o in 0..outer {
                for l in 0..len {
                    for i in 0..inner {
                        let xv = x.data()[(o * len + l) * inner + i];
                        if xv > out[o * inner + i] {
                            out[o * inner + i] = xv;
                            arg[o * inner + i] = l;
                        }
                    }
                }
            }
            (Tensor::new(&out_shape, out)?, arg)
        };
        self.push("max_axis", v, Op::MaxAxis { x: a, axis, argmax }, &[a])
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(&self, parts: &[Var], axis: usize) -> Result<Var> {
        let v = {
            let first = self.shape(*parts.first().ok_or_else(|| Error::shape("concat", "no inputs"))?);
            if axis >= first.len() {
                return Err(Error::shape("concat", format!("axis {axis} for rank {}", first.len())));
            }
            let mut total = 0;
            for p in parts {
                let s = self.shape(*p);
                let mut a = s.clone();
                let mut b = first.clone();
                a[axis] = 0;
                b[axis] = 0;
                if a != b {
                    return Err(Error::shapes("concat", &first, &s));
                }
                total += s[axis];
            }
            let (outer, _, inner) = split_axis(&first, axis);
            let mut out_shape = first.clone();
            out_shape[axis] = total;
            let mut out = Vec::with_capacity(outer * total * inner);
            for o in 0..outer {
                for p in parts {
                    let x = self.value(*p);
                    let ext = x.shape()[axis];
                    out.extend_from_slice(&x.data()[o * ext * inner..(o + 1) * ext * inner]);
                }
            }
            Tensor::new(&out_shape, out)?
        };
        self.push("concat", v, Op::Concat { parts: parts.to_vec(), axis }, parts)
    }

    /// Elements `start..start + len` along `axis`.
    pub fn slice(&self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let v = {
            let x = self.value(a);
            let s = x.shape();
            if axis >= s.len() || start + len > s[axis] {
                return Err(Error::shape("slice", format!("{start}..{} on axis {axis} of {s:?}", start + len)));
            }
            let (outer, ext, inner) = split_axis(s, axis);
            let mut out = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                out.extend_from_slice(&x.data()[(o * ext + start) * inner..(o * ext + start + len) * inner]);
            }
            let mut out_shape = s.to_vec();
            out_shape[axis] = len;
            Tensor::new(&out_shape, out)?
        };
        self.push("slice", v, Op::Slice { x: a, axis, start }, &[a])
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshape(shape)?;
        self.push("reshape", v, Op::Reshape(a), &[a])
    }

    /// Axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, a: Var, perm: &[usize]) -> Result<Var> {
        let v = {
            let x = self.value(a);
            let s = x.shape();
            let mut seen = vec![false; s.len()];
            if perm.len() != s.len() || perm.iter().any(|&p| p >= s.len() || core::mem::replace(&mut seen[p], true)) {
                return Err(Error::shape("permute", format!("permutation {perm:?} for {s:?}")));
            }
            let mut out = vec![T::zero(); x.len()];
            let xd = x.data();
            for_each_permuted(s, perm, |o, i| out[o] = xd[i]);
            let out_shape: Vec<usize> = perm.iter().map(|&p| s[p]).collect();
            Tensor::new(&out_shape, out)?
        };
        self.push("permute", v, Op::Permute { x: a, perm: perm.to_vec() }, &[a])
    }

    /// Swaps the last two axes.
    pub fn transpose(&self, a: Var) -> Result<Var> {
        let r = self.shape(a).len();
        if r < 2 {
            return Err(Error::shape("transpose", "rank < 2"));
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(a, &perm)
    }

    /// Softmax over the last axis, max-shifted.
    pub fn softmax(&self, a: Var) -> Result<Var> {
        let v = {
            let x = self.value(a);
            let n = *x.shape().last().ok_or_else(|| Error::shape("softmax", "scalar input"))?;
            let mut out = x.data().to_vec();
            for row in out.chunks_mut(n) {
                softmax_in_place(row);
            }
            Tensor::new(x.shape(), out)?
        };
        self.push("softmax", v, Op::Softmax(a), &[a])
    }

    /// Layer normalization over the last axis with population variance and
    /// `eps` under the square root, followed by `gain`/`bias`.
    pub fn layer_norm(&self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let (v, xhat, inv_std) = {
            let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
            let h = *xv.shape().last().ok_or_else(|| Error::shape("layer_norm", "scalar input"))?;
            if gv.shape() != [h] || bv.shape() != [h] {
                return Err(Error::shapes("layer_norm", xv.shape(), gv.shape()));
            }
            let rows = xv.len() / h;
            let mut xhat = Vec::with_capacity(xv.len());
            let mut inv_std = Vec::with_capacity(rows);
            let mut out = Vec::with_capacity(xv.len());
            let inv_h = T::one() / T::of(h as f64);
            for row in xv.data().chunks(h) {
                let mu = row.iter().copied().sum::<T>() * inv_h;
                let var = row.iter().map(|&a| (a - mu) * (a - mu)).sum::<T>() * inv_h;
                let inv = T::one() / (var + eps).sqrt();
                inv_std.push(inv);
                for i in 0..h {
                    let n = (row[i] - mu) * inv;
                    xhat.push(n);
                    out.push(n * gv.data()[i] + bv.data()[i]);
                }
            }
            (Tensor::new(xv.shape(), out)?, xhat, inv_std)
        };
        let (xhat, inv_std) = if self.needs_grad(&[x, gain, bias]) { (xhat, inv_std) } else { (Vec::new(), Vec::new()) };
        self.push("layer_norm", v, Op::LayerNorm { x, gain, bias, xhat, inv_std }, &[x, gain, bias])
    }

    /// Per-channel normalization over all leading axes of `x: (..., C)`.
    ///
    /// With `running: None` the batch statistics are used and returned as
    /// `(mean, biased variance)`; otherwise the given running statistics are
    /// applied as a fixed affine map.
    pub fn batch_norm(
        &self,
        x: Var,
        scale: Var,
        shift: Var,
        running: Option<(&[T], &[T])>,
        eps: T,
    ) -> Result<(Var, Option<(Vec<T>, Vec<T>)>)> {
        let (v, xhat, inv_std, stats) = {
            let (xv, sv, bv) = (self.value(x), self.value(scale), self.value(shift));
            let c = *xv.shape().last().ok_or_else(|| Error::shape("batch_norm", "scalar input"))?;
            if sv.shape() != [c] || bv.shape() != [c] {
                return Err(Error::shapes("batch_norm", xv.shape(), sv.shape()));
            }
            let rows = xv.len() / c;
            if rows == 0 {
                return Err(Error::shape("batch_norm", "empty batch"));
            }
            let (mean, var, stats) = match running {
                Some((m, v)) => {
                    if m.len() != c || v.len() != c {
                        return Err(Error::shape("batch_norm", "running statistics width"));
                    }
                    (m.to_vec(), v.to_vec(), None)
                }
                None => {
                    let mut mean = vec![T::zero(); c];
                    let mut var = vec![T::zero(); c];
                    for row in xv.data().chunks(c) {
                        mean.iter_mut().zip(row).for_each(|(m, &a)| *m += a);
                    }
                    let inv_r = T::one() / T::of(rows as f64);
                    mean.iter_mut().for_each(|m| *m *= inv_r);
                    for row in xv.data().chunks(c) {
                        for ch in 0..c {
                            let d = row[ch] - mean[ch];
                            var[ch] += d * d;
                        }
                    }
                    var.iter_mut().for_each(|v| *v *= inv_r);
                    (mean.clone(), var.clone(), Some((mean, var)))
                }
            };
            let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
            let mut xhat = Vec::with_capacity(xv.len());
            let mut out = Vec::with_capacity(xv.len());
            for row in xv.data().chunks(c) {
                for ch in 0..c {
                    let n = (row[ch] - mean[ch]) * inv_std[ch];
                    xhat.push(n);
                    out.push(n * sv.data()[ch] + bv.data()[ch]);
                }
            }
            (Tensor::new(xv.shape(), out)?, xhat, inv_std, stats)
        };
        let batch_stats = running.is_none();
        let xhat = if self.needs_grad(&[x, scale, shift]) { xhat } else { Vec::new() };
        let var = self.push("batch_norm", v, Op::BatchNorm { x, scale, shift, xhat, inv_std, batch_stats }, &[x, scale, shift])?;
        Ok((var, stats))
    }

    /// Mean categorical cross-entropy of row-wise softmax over `logits: (B, K)`.
    pub fn softmax_cross_entropy(&self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (loss, probs) = {
            let x = self.value(logits);
            let s = x.shape();
            if s.len() != 2 || s[0] != targets.len() || s[0] == 0 {
                return Err(Error::shape("softmax_cross_entropy", format!("logits {s:?} for {} targets", targets.len())));
            }
            let k = s[1];
            if let Some(&t) = targets.iter().find(|&&t| t >= k) {
                return Err(Error::InvalidTarget { target: t, classes: k });
            }
            let mut probs = x.data().to_vec();
            let mut loss = T::zero();
            for (row, &t) in probs.chunks_mut(k).zip(targets) {
                let m = row.iter().copied().fold(T::neg_infinity(), T::max);
                let lse = row.iter().map(|&v| (v - m).exp()).sum::<T>().ln() + m;
                loss += lse - row[t];
                softmax_in_place(row);
            }
            (loss / T::of(targets.len() as f64), probs)
        };
        let targets = targets.to_vec();
        self.push("softmax_cross_entropy", Tensor::scalar(loss), Op::SoftmaxCrossEntropy { logits, targets, probs }, &[logits])
    }

    /// Fused LSTM cell update.
    ///
    /// `xg` and the optional `hg` are `(..., 4F)` gate pre-activations from
    /// the input and state transitions (gate order input, forget, output,
    /// candidate), `bias` is `(4F,)` and `state` packs the previous `[h | c]`
    /// per row as `(..., 2F)`. Optional peepholes `[w_i, w_f, w_o]` are
    /// Hadamard weights on the cell, tiled over rows; the output gate sees
    /// the updated cell. Returns the packed `[h | c]`, `(..., 2F)`.
    pub fn lstm_cell(&self, xg: Var, hg: Option<Var>, bias: Var, state: Var, peep: Option<[Var; 3]>) -> Result<Var> {
        let (value, gates, tanh_c, units) = {
            let xv = self.value(xg);
            let xs = xv.shape();
            let g4 = *xs.last().ok_or_else(|| Error::shape("lstm_cell", "scalar input"))?;
            if g4 == 0 || g4 % 4 != 0 {
                return Err(Error::shape("lstm_cell", format!("gate axis {g4} not a positive multiple of 4")));
            }
            let f = g4 / 4;
            let rows = xv.len() / g4;
            let hv = hg.map(|h| self.value(h));
            if let Some(h) = &hv {
                if h.shape() != xs {
                    return Err(Error::shapes("lstm_cell", xs, h.shape()));
                }
            }
            let bv = self.value(bias);
            if bv.shape() != [g4] {
                return Err(Error::shapes("lstm_cell", xs, bv.shape()));
            }
            let sv = self.value(state);
            let mut want = xs.to_vec();
            *want.last_mut().unwrap() = 2 * f;
            if sv.shape() != want.as_slice() {
                return Err(Error::shapes("lstm_cell", sv.shape(), &want));
            }
            let pv = match peep {
                Some(p) => {
                    let p = p.map(|v| self.value(v));
                    let n = p[0].len();
                    if n == 0 || n % f != 0 || (rows * f) % n != 0 || p.iter().any(|t| t.shape() != p[0].shape()) {
                        return Err(Error::shapes("lstm_cell", sv.shape(), p[0].shape()));
                    }
                    Some(p)
                }
                None => None,
            };
            let plen = pv.as_ref().map_or(rows * f, |p| p[0].len());
            let (xd, bd, sd) = (xv.data(), bv.data(), sv.data());
            let mut gates = vec![T::zero(); rows * g4];
            let mut tanh_c = vec![T::zero(); rows * f];
            let mut out = vec![T::zero(); rows * 2 * f];
            for r in 0..rows {
                let z = &mut gates[r * g4..(r + 1) * g4];
                z.copy_from_slice(&xd[r * g4..(r + 1) * g4]);
                if let Some(h) = &hv {
                    z.iter_mut().zip(&h.data()[r * g4..(r + 1) * g4]).for_each(|(a, &b)| *a += b);
                }
                z.iter_mut().zip(bd).for_each(|(a, &b)| *a += b);
                let c_prev = &sd[r * 2 * f + f..(r + 1) * 2 * f];
                let p0 = (r * f) % plen;
                let (zi, rest) = z.split_at_mut(f);
                let (zf, rest) = rest.split_at_mut(f);
                let (zo, zg) = rest.split_at_mut(f);
                if let Some(pw) = &pv {
                    let (pi, pf) = (&pw[0].data()[p0..p0 + f], &pw[1].data()[p0..p0 + f]);
                    for j in 0..f {
                        zi[j] += pi[j] * c_prev[j];
                        zf[j] += pf[j] * c_prev[j];
                    }
                }
                zi.iter_mut().chain(zf.iter_mut()).for_each(|v| *v = sigmoid(*v));
                zg.iter_mut().for_each(|v| *v = tanh_via_sigmoid(*v));
                let (h_out, c_out) = out[r * 2 * f..(r + 1) * 2 * f].split_at_mut(f);
                for j in 0..f {
                    c_out[j] = zf[j] * c_prev[j] + zi[j] * zg[j];
                }
                if let Some(pw) = &pv {
                    let po = &pw[2].data()[p0..p0 + f];
                    zo.iter_mut().zip(po.iter().zip(c_out.iter())).for_each(|(z, (&p, &c))| *z += p * c);
                }
                zo.iter_mut().for_each(|v| *v = sigmoid(*v));
                let tc = &mut tanh_c[r * f..(r + 1) * f];
                for j in 0..f {
                    tc[j] = tanh_via_sigmoid(c_out[j]);
                    h_out[j] = zo[j] * tc[j];
                }
            }
            (Tensor::new(&want, out)?, gates, tanh_c, f)
        };
        let mut inputs = alloc::vec![xg, bias, state];
        inputs.extend(hg);
        inputs.extend(peep.into_iter().flatten());
        let saved = LstmCellSaved { xg, hg, bias, state, peep, units, gates, tanh_c };
        self.push("lstm_cell", value, Op::LstmCell(saved), &inputs)
    }
}

/// Logistic function; `exp` overflow for large negative inputs yields 0.
fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// `tanh(x) = 2 sigmoid(2x) - 1`, cheaper than the library `tanh`.
fn tanh_via_sigmoid<T: Real>(x: T) -> T {
    let two = T::one() + T::one();
    two * sigmoid(two * x) - T::one()
}

pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}
