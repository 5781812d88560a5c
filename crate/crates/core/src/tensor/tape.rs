use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::{Ref, RefCell};

use super::{gemm, split_axis, Tensor};
use crate::{Error, Real, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub len: usize,
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_len: usize,
    pub filters: usize,
}

impl ConvGeom {
    pub fn rows(&self) -> usize {
        self.n * self.out_len
    }

    pub fn patch(&self) -> usize {
        self.kernel * self.channels
    }

    /// Visits `(col_index, input_index)` for every in-bounds patch element.
    pub fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let patch = self.patch();
        for s in 0..self.n {
            for o in 0..self.out_len {
                let row = (s * self.out_len + o) * patch;
                for j in 0..self.kernel {
                    let pos = (o * self.stride + j) as isize - self.pad as isize;
                    if pos < 0 || pos as usize >= self.len {
                        continue;
                    }
                    let src = (s * self.len + pos as usize) * self.channels;
                    for c in 0..self.channels {
                        f(row + j * self.channels + c, src + c);
                    }
                }
            }
        }
    }
}

pub(crate) enum Op<T> {
    Leaf,
    Const,
    Add(Var, Var),
    Sub(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    MulBias(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    MatMul(Var, Var),
    BatchMatMul { a: Var, b: Var, trans_b: bool, groups: usize, m: usize, k: usize, n: usize },
    Conv1d { x: Var, w: Var, cols: Vec<T>, geom: ConvGeom },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Sum(Var),
    Mean(Var),
    SumAxis { x: Var, axis: usize },
    MeanAxis { x: Var, axis: usize },
    MaxAxis { x: Var, axis: usize, argmax: Vec<usize> },
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Reshape(Var),
    Permute { x: Var, perm: Vec<usize> },
    Softmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<T>, inv_std: Vec<T> },
    BatchNorm { x: Var, scale: Var, shift: Var, xhat: Vec<T>, inv_std: Vec<T>, batch_stats: bool },
    SoftmaxCrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<T> },
    LstmCell(LstmCellSaved<T>),
}

pub(crate) struct LstmCellSaved<T> {
    pub xg: Var,
    pub hg: Option<Var>,
    pub bias: Var,
    pub state: Var,
    pub peep: Option<[Var; 3]>,
    pub units: usize,
    /// Per row: input, forget, output, candidate activations.
    pub gates: Vec<T>,
    pub tanh_c: Vec<T>,
}

pub(crate) struct Node<T> {
    pub value: Tensor<T>,
    pub op: Op<T>,
    pub requires_grad: bool,
}

/// Ordered record of executed primitives.
///
/// A tape is a single-threaded context: values are appended in execution
/// order and [`Tape::backward`] visits them in exact reverse.
pub struct Tape<T: Real> {
    pub(crate) nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackwardStatus {
    Ok,
    /// The loss does not depend on any differentiable leaf; nothing was filled.
    Detached,
}

/// Gradients of the differentiable leaves, keyed by their [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: BTreeMap<usize, Tensor<T>>,
    pub status: BackwardStatus,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(&v.0)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.remove(&v.0)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: RefCell::new(Vec::new()) }
    }

    /// Registers a differentiable leaf.
    pub fn param(&self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Registers a non-differentiable leaf.
    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var(nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    pub(crate) fn needs_grad(&self, inputs: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        inputs.iter().any(|v| nodes[v.0].requires_grad)
    }

    /// Appends a computed node; ops on detached inputs drop their saved state.
    pub(crate) fn push(&self, name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if let Some(i) = value.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain { op: name, detail: format!("non-finite output at element {i}") });
        }
        let requires_grad = self.needs_grad(inputs);
        let op = if requires_grad { op } else { Op::Const };
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, requires_grad });
        Ok(Var(nodes.len() - 1))
    }

    /// Reverse sweep from a scalar `loss`. Intermediate gradients are released
    /// as soon as they have been propagated; only leaf gradients are returned.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.0];
        if root.value.len() != 1 {
            return Err(Error::shape("backward", format!("loss must be scalar, got {:?}", root.value.shape())));
        }
        if !root.requires_grad {
            return Ok(Gradients { grads: BTreeMap::new(), status: BackwardStatus::Detached });
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut leaves = BTreeMap::new();
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if let Op::Leaf = node.op {
                if node.requires_grad {
                    leaves.insert(id, Tensor { shape: node.value.shape().to_vec(), data: g });
                }
                continue;
            }
            propagate(&nodes, &mut grads, node, &g);
        }
        Ok(Gradients { grads: leaves, status: BackwardStatus::Ok })
    }
}

/// Returns the gradient buffer of `v`, or `None` if `v` is not differentiable.
fn slot<'g, T: Real>(grads: &'g mut [Option<Vec<T>>], nodes: &[Node<T>], v: Var) -> Option<&'g mut Vec<T>> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); node.value.len()]))
}

fn add_into<T: Real>(dst: &mut [T], src: impl Iterator<Item = T>) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

fn propagate<T: Real>(nodes: &[Node<T>], grads: &mut [Option<Vec<T>>], node: &Node<T>, g: &[T]) {
    let val = |v: Var| nodes[v.0].value.data();
    let out = node.value.data();
    match &node.op {
        Op::Leaf | Op::Const => {}
        Op::Add(a, b) => {
            if let Some(ga) = slot(grads, nodes, *a) {
                add_into(ga, g.iter().copied());
            }
            if let Some(gb) = slot(grads, nodes, *b) {
                add_into(gb, g.iter().copied());
            }
        }
        Op::Sub(a, b) => {
            if let Some(ga) = slot(grads, nodes, *a) {
                add_into(ga, g.iter().copied());
            }
            if let Some(gb) = slot(grads, nodes, *b) {
                add_into(gb, g.iter().map(|&v| -v));
            }
        }
        Op::AddBias(a, b) => {
            if let Some(ga) = slot(grads, nodes, *a) {
                add_into(ga, g.iter().copied());
            }
            if let Some(gb) = slot(grads, nodes, *b) {
                let n = gb.len();
                for row in g.chunks(n) {
                    add_into(gb, row.iter().copied());
                }
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            if let Some(ga) = slot(grads, nodes, *a) {
                add_into(ga, g.iter().zip(bv).map(|(&g, &b)| g * b));
            }
            if let Some(gb) = slot(grads, nodes, *b) {
                add_into(gb, g.iter().zip(av).map(|(&g, &a)| g * a));
            }
        }
        Op::MulBias(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let n = bv.len();
            if let Some(ga) = slot(grads, nodes, *a) {
                for (grow, garow) in g.chunks(n).zip(ga.chunks_mut(n)) {
                    add_into(garow, grow.iter().zip(bv).map(|(&g, &b)| g * b));
                }
            }
            if let Some(gb) = slot(grads, nodes, *b) {
                for (grow, arow) in g.chunks(n).zip(av.chunks(n)) {
                    add_into(gb, grow.iter().zip(arow).map(|(&g, &a)| g * a));
                }
            }
        }
        Op::Scale(a, s) => {
            if let Some(ga) = slot(grads, nodes, *a) {
                add_into(ga, g.iter().map(|&v| v * *s));
            }
        }
        Op::AddScalar(a) | Op::Reshape(a) => {
            if let Some(ga) = slot(grads, nodes, *a) {
                add_into(ga, g.iter().copied());
            }
        }
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let bshape = nodes[b.0].value.shape();
            let (k, n) = (bshape[0], bshape[1]);
            let rows = av.len() / k;
            if let Some(ga) = slot(grads, nodes, *a) {
                gemm(rows, n, k, g, false, bv, true, ga, true);
            }
            if let Some(gb) = slot(grads, nodes, *b) {
                gemm(k, rows, n, av, true, g, false, gb, true);
            }
        }
        Op::BatchMatMul { a, b, trans_b, groups, m, k, n } => {
            let (m, k, n) = (*m, *k, *n);
            let (av, bv) = (val(*a), val(*b));
            if let Some(ga) = slot(grads, nodes, *a) {
                for gi in 0..*groups {
                    gemm(
                        m,
                        n,
                        k,
                        &g[gi * m * n..(gi + 1) * m * n],
                        false,
                        &bv[gi * k * n..(gi + 1) * k * n],
                        !*trans_b,
                        &mut ga[gi * m * k..(gi + 1) * m * k],
                        true,
                    );
                }
            }
            if let Some(gb) = slot(grads, nodes, *b) {
                for gi in 0..*groups {
                    let (gg, ag) = (&g[gi * m * n..(gi + 1) * m * n], &av[gi * m * k..(gi + 1) * m * k]);
                    let gbg = &mut gb[gi * k * n..(gi + 1) * k * n];
                    if *trans_b {
                        gemm(n, m, k, gg, true, ag, false, gbg, true);
                    } else {
                        gemm(k, m, n, ag, true, gg, false, gbg, true);
                    }
                }
            }
        }
        Op::Conv1d { x, w, cols, geom } => {
            let (rows, patch, f) = (geom.rows(), geom.patch(), geom.filters);
            if let Some(gw) = slot(grads, nodes, *w) {
                gemm(patch, rows, f, cols, true, g, false, gw, true);
            }
            let wv = val(*w);
            if let Some(gx) = slot(grads, nodes, *x) {
                let mut gcols = vec![T::zero(); rows * patch];
                gemm(rows, f, patch, g, false, wv, true, &mut gcols, false);
                geom.for_each_tap(|ci, xi| gx[xi] += gcols[ci]);
            }
        }
        Op::Sigmoid(a) => {
            if let Some(ga) = slot(grads, nodes, *a) {
                add_into(ga, g.iter().zip(out).map(|(&g, &y)| g * y * (T::one() - y)));
            }
        }
        Op::Tanh(a) => {
            if let Some(ga) = slot(grads, nodes, *a) {
                add_into(ga, g.iter().zip(out).map(|(&g, &y)| g * (T::one() - y * y)));
            }
        }
        Op::Relu(a) => {
            let av = val(*a);
            if let Some(ga) = slot(grads, nodes, *a) {
                add_into(ga, g.iter().zip(av).map(|(&g, &x)| if x > T::zero() { g } else { T::zero() }));
            }
        }
        Op::Exp(a) => {
            if let Some(ga) = slot(grads, nodes, *a) {
                add_into(ga, g.iter().zip(out).map(|(&g, &y)| g * y));
            }
        }
        Op::Log(a) => {
            let av = val(*a);
            if let Some(ga) = slot(grads, nodes, *a) {
                add_into(ga, g.iter().zip(av).map(|(&g, &x)| g / x));
            }
        }
        Op::Sum(a) => {
            if let Some(ga) = slot(grads, nodes, *a) {
                ga.iter_mut().for_each(|v| *v += g[0]);
            }
        }
        Op::Mean(a) => {
            if let Some(ga) = slot(grads, nodes, *a) {
                let s = g[0] / T::of(ga.len() as f64);
                ga.iter_mut().for_each(|v| *v += s);
            }
        }
        Op::SumAxis { x, axis } | Op::MeanAxis { x, axis } => {
            let (outer, len, inner) = split_axis(nodes[x.0].value.shape(), *axis);
            let scale = if matches!(node.op, Op::MeanAxis { .. }) { T::one() / T::of(len as f64) } else { T::one() };
            if let Some(gx) = slot(grads, nodes, *x) {
                for o in 0..outer {
                    for l in 0..len {
                        let dst = &mut gx[(o * len + l) * inner..(o * len + l + 1) * inner];
                        add_into(dst, g[o * inner..(o + 1) * inner].iter().map(|&v| v * scale));
                    }
                }
            }
        }
        Op::MaxAxis { x, axis, argmax } => {
            let (outer, len, inner) = split_axis(nodes[x.0].value.shape(), *axis);
            if let Some(gx) = slot(grads, nodes, *x) {
                for o in 0..outer {
                    for i in 0..inner {
                        let j = o * inner + i;
                        gx[(o * len + argmax[j]) * inner + i] += g[j];
                    }
                }
            }
        }
        Op::Concat { parts, axis } => {
            let (outer, total, inner) = split_axis(node.value.shape(), *axis);
            let mut offset = 0;
            for p in parts {
                let ext = nodes[p.0].value.shape()[*axis];
                if let Some(gp) = slot(grads, nodes, *p) {
                    for o in 0..outer {
                        let src = &g[(o * total + offset) * inner..(o * total + offset + ext) * inner];
                        add_into(&mut gp[o * ext * inner..(o + 1) * ext * inner], src.iter().copied());
                    }
                }
                offset += ext;
            }
        }
        Op::Slice { x, axis, start } => {
            let (outer, len_in, inner) = split_axis(nodes[x.0].value.shape(), *axis);
            let len_out = node.value.shape()[*axis];
            if let Some(gx) = slot(grads, nodes, *x) {
                for o in 0..outer {
                    let dst = &mut gx[(o * len_in + start) * inner..(o * len_in + start + len_out) * inner];
                    add_into(dst, g[o * len_out * inner..(o + 1) * len_out * inner].iter().copied());
                }
            }
        }
        Op::Permute { x, perm } => {
            let in_shape = nodes[x.0].value.shape();
            if let Some(gx) = slot(grads, nodes, *x) {
                super::ops::for_each_permuted(in_shape, perm, |out_i, in_i| gx[in_i] += g[out_i]);
            }
        }
        Op::Softmax(a) => {
            let n = *node.value.shape().last().unwrap_or(&1);
            if let Some(ga) = slot(grads, nodes, *a) {
                for ((grow, yrow), garow) in g.chunks(n).zip(out.chunks(n)).zip(ga.chunks_mut(n)) {
                    let dot: T = grow.iter().zip(yrow).map(|(&g, &y)| g * y).sum();
                    add_into(garow, grow.iter().zip(yrow).map(|(&g, &y)| y * (g - dot)));
                }
            }
        }
        Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
            let gv = val(*gain);
            let h = gv.len();
            if let Some(gg) = slot(grads, nodes, *gain) {
                for (grow, xrow) in g.chunks(h).zip(xhat.chunks(h)) {
                    add_into(gg, grow.iter().zip(xrow).map(|(&g, &x)| g * x));
                }
            }
            if let Some(gb) = slot(grads, nodes, *bias) {
                for grow in g.chunks(h) {
                    add_into(gb, grow.iter().copied());
                }
            }
            if let Some(gx) = slot(grads, nodes, *x) {
                let inv_h = T::one() / T::of(h as f64);
                for (r, ((grow, xrow), gxrow)) in g.chunks(h).zip(xhat.chunks(h)).zip(gx.chunks_mut(h)).enumerate() {
                    let mut m1 = T::zero();
                    let mut m2 = T::zero();
                    for i in 0..h {
                        let d = grow[i] * gv[i];
                        m1 += d;
                        m2 += d * xrow[i];
                    }
                    m1 *= inv_h;
                    m2 *= inv_h;
                    for i in 0..h {
                        gxrow[i] += inv_std[r] * (grow[i] * gv[i] - m1 - xrow[i] * m2);
                    }
                }
            }
        }
        Op::BatchNorm { x, scale, shift, xhat, inv_std, batch_stats } => {
            let sv = val(*scale);
            let c = sv.len();
            let rows = g.len() / c;
            if let Some(gs) = slot(grads, nodes, *scale) {
                for (grow, xrow) in g.chunks(c).zip(xhat.chunks(c)) {
                    add_into(gs, grow.iter().zip(xrow).map(|(&g, &x)| g * x));
                }
            }
            if let Some(gb) = slot(grads, nodes, *shift) {
                for grow in g.chunks(c) {
                    add_into(gb, grow.iter().copied());
                }
            }
            if let Some(gx) = slot(grads, nodes, *x) {
                if *batch_stats {
                    let mut m1 = vec![T::zero(); c];
                    let mut m2 = vec![T::zero(); c];
                    for (grow, xrow) in g.chunks(c).zip(xhat.chunks(c)) {
                        for ch in 0..c {
                            let d = grow[ch] * sv[ch];
                            m1[ch] += d;
                            m2[ch] += d * xrow[ch];
                        }
                    }
                    let inv_r = T::one() / T::of(rows as f64);
                    for ((grow, xrow), gxrow) in g.chunks(c).zip(xhat.chunks(c)).zip(gx.chunks_mut(c)) {
                        for ch in 0..c {
                            gxrow[ch] += inv_std[ch] * (grow[ch] * sv[ch] - m1[ch] * inv_r - xrow[ch] * m2[ch] * inv_r);
                        }
                    }
                } else {
                    for (grow, gxrow) in g.chunks(c).zip(gx.chunks_mut(c)) {
                        for ch in 0..c {
                            gxrow[ch] += grow[ch] * sv[ch] * inv_std[ch];
                        }
                    }
                }
            }
        }
        Op::LstmCell(cell) => lstm_cell_backward(nodes, grads, cell, out, g),
        Op::SoftmaxCrossEntropy { logits, targets, probs } => {
            let b = targets.len();
            let k = probs.len() / b;
            let s = g[0] / T::of(b as f64);
            if let Some(gl) = slot(grads, nodes, *logits) {
                for (r, &t) in targets.iter().enumerate() {
                    for j in 0..k {
                        let onehot = if j == t { T::one() } else { T::zero() };
                        gl[r * k + j] += s * (probs[r * k + j] - onehot);
                    }
                }
            }
        }
    }
}

fn lstm_cell_backward<T: Real>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    cell: &LstmCellSaved<T>,
    out: &[T],
    g: &[T],
) {
    let f = cell.units;
    let rows = out.len() / (2 * f);
    let prev = nodes[cell.state.0].value.data();
    let peep: Option<[&[T]; 3]> = cell.peep.map(|p| p.map(|v| nodes[v.0].value.data()));
    let plen = peep.map_or(rows * f, |p| p[0].len());
    let one = T::one();
    let mut dz = vec![T::zero(); rows * 4 * f];
    let mut dprev = vec![T::zero(); rows * 2 * f];
    let mut dpeep = [vec![T::zero(); plen], vec![T::zero(); plen], vec![T::zero(); plen]];
    let mut dc = vec![T::zero(); f];
    for r in 0..rows {
        let gates = &cell.gates[r * 4 * f..(r + 1) * 4 * f];
        let (gi, gf, go, gg) = (&gates[..f], &gates[f..2 * f], &gates[2 * f..3 * f], &gates[3 * f..]);
        let tc = &cell.tanh_c[r * f..(r + 1) * f];
        let c = &out[r * 2 * f + f..(r + 1) * 2 * f];
        let c_prev = &prev[r * 2 * f + f..(r + 1) * 2 * f];
        let (dh, dc_out) = g[r * 2 * f..(r + 1) * 2 * f].split_at(f);
        let p0 = (r * f) % plen;
        let z = &mut dz[r * 4 * f..(r + 1) * 4 * f];
        let (dzi, rest) = z.split_at_mut(f);
        let (dzf, rest) = rest.split_at_mut(f);
        let (dzo, dzg) = rest.split_at_mut(f);
        for j in 0..f {
            dzo[j] = dh[j] * tc[j] * go[j] * (one - go[j]);
            dc[j] = dc_out[j] + dh[j] * go[j] * (one - tc[j] * tc[j]);
        }
        if let Some(pw) = peep {
            let po = &pw[2][p0..p0 + f];
            let dpo = &mut dpeep[2][p0..p0 + f];
            for j in 0..f {
                dc[j] += dzo[j] * po[j];
                dpo[j] += dzo[j] * c[j];
            }
        }
        let dcp = &mut dprev[r * 2 * f + f..(r + 1) * 2 * f];
        for j in 0..f {
            dzi[j] = dc[j] * gg[j] * gi[j] * (one - gi[j]);
            dzf[j] = dc[j] * c_prev[j] * gf[j] * (one - gf[j]);
            dzg[j] = dc[j] * gi[j] * (one - gg[j] * gg[j]);
            dcp[j] = dc[j] * gf[j];
        }
        if let Some(pw) = peep {
            let (pi, pf) = (&pw[0][p0..p0 + f], &pw[1][p0..p0 + f]);
            for j in 0..f {
                dcp[j] += dzi[j] * pi[j] + dzf[j] * pf[j];
            }
            let (dpi, rest) = dpeep.split_at_mut(1);
            let (dpi, dpf) = (&mut dpi[0][p0..p0 + f], &mut rest[0][p0..p0 + f]);
            for j in 0..f {
                dpi[j] += dzi[j] * c_prev[j];
                dpf[j] += dzf[j] * c_prev[j];
            }
        }
    }
    for v in core::iter::once(cell.xg).chain(cell.hg) {
        if let Some(gv) = slot(grads, nodes, v) {
            add_into(gv, dz.iter().copied());
        }
    }
    if let Some(gb) = slot(grads, nodes, cell.bias) {
        for row in dz.chunks(4 * f) {
            add_into(gb, row.iter().copied());
        }
    }
    if let Some(gs) = slot(grads, nodes, cell.state) {
        add_into(gs, dprev.iter().copied());
    }
    if let Some(pv) = cell.peep {
        for (v, d) in pv.iter().zip(&dpeep) {
            if let Some(gp) = slot(grads, nodes, *v) {
                add_into(gp, d.iter().copied());
            }
        }
    }
}
