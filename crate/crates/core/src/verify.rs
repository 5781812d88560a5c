//! Self-verification suite: gradient checks for every layer, formula
//! oracles, metric counting and model shape traces.
//!
//! Each check reports its measured error next to its threshold so a run can
//! be audited line by line.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::f64::consts::PI;

#[cfg_attr(feature = "std", allow(unused_imports))]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::featkit::{delta, mfcc_dct, power_spectrum};
use crate::layers::{
    attention, Activation, BatchNorm1d, BiLstm, ConvLstm1d, ConvLstmState, Dense, EncoderBlock, LayerNorm, Lstm, Mode,
    MultiHeadAttention, ParamSet, Pass,
};
use crate::model::{ablation_config, DeviceIdModel, ModelConfig};
use crate::tensor::{finite_diff_check_with, Tape, Tensor, Var};
use crate::train::{adam_update, cross_entropy, f_beta, softmax, AdamHyper, MetricsReport};
use crate::{Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Gradient,
    Oracle,
    Metrics,
    Shape,
    Format,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub category: Category,
    pub measured: f64,
    pub threshold: f64,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    /// A check passing when `measured < threshold`.
    pub fn below(name: impl Into<String>, category: Category, measured: f64, threshold: f64, detail: impl Into<String>) -> Self {
        Check { name: name.into(), category, measured, threshold, passed: measured < threshold, detail: detail.into() }
    }

    /// An exact check: `measured` counts mismatches and must be zero.
    pub fn exact(name: impl Into<String>, category: Category, mismatches: f64, detail: impl Into<String>) -> Self {
        Check { name: name.into(), category, measured: mismatches, threshold: 0.0, passed: mismatches == 0.0, detail: detail.into() }
    }

    pub fn failed(name: impl Into<String>, category: Category, detail: impl Into<String>) -> Self {
        Check { name: name.into(), category, measured: f64::INFINITY, threshold: 0.0, passed: false, detail: detail.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Random cases per formula oracle.
    pub oracle_cases: usize,
    /// Metric oracle confusion matrices.
    pub metric_cases: usize,
    /// Layer whose analytic gradient is doubled before checking.
    pub inject_fault: Option<String>,
    pub shapes: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { seed: 0, oracle_cases: 100, metric_cases: 1000, inject_fault: None, shapes: true }
    }
}

/// Layers covered by [`gradient_checks`], in report order.
pub const GRADIENT_LAYERS: &[&str] = &[
    "conv_lstm_step",
    "conv_lstm_forward",
    "batch_norm",
    "lstm",
    "bilstm",
    "attention",
    "multi_head_attention",
    "layer_norm",
    "dense",
    "encoder_block",
    "softmax_cross_entropy",
];

/// Gradient tolerance and finite-difference step for a precision.
pub fn gradient_tolerance<T: Real>() -> (f64, f64) {
    if T::NAME == "f32" {
        (1e-3, 1e-2)
    } else {
        (1e-6, 1e-6)
    }
}

fn uniform<T: Real>(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::of(rng.random_range(-scale..=scale)))
}

fn randomize<T: Real>(params: &mut ParamSet<T>, rng: &mut ChaCha8Rng) {
    for id in params.ids().collect::<Vec<_>>() {
        let shape = params.value(id).shape().to_vec();
        params.replace(id, uniform(&shape, 0.5, rng));
    }
}

type LayerFn<'a, T> = dyn Fn(&Pass<'_, T>, &[Var]) -> Result<Var> + 'a;

/// Checks d(sum(w * layer(inputs)))/d(inputs, params) for fixed random `w`.
fn layer_check<T: Real>(
    name: &str,
    params: &ParamSet<T>,
    inputs: Vec<Tensor<T>>,
    forward: &LayerFn<'_, T>,
    rng: &mut ChaCha8Rng,
    fault: bool,
) -> Check {
    let (tol, eps) = gradient_tolerance::<T>();
    let n_in = inputs.len();
    let ids: Vec<_> = params.ids().collect();
    let run = |tape: &Tape<T>, vars: &[Var]| -> Result<Var> {
        let pass = Pass::new(tape, params, Mode::Train);
        for (id, v) in ids.iter().zip(&vars[n_in..]) {
            pass.bind(*id, *v);
        }
        forward(&pass, &vars[..n_in])
    };
    let out_shape = {
        let tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().cloned().chain(params.iter().map(|(_, p)| p.value.clone())).map(|t| tape.constant(t)).collect();
        match run(&tape, &vars) {
            Ok(v) => tape.shape(v),
            Err(e) => return Check::failed(name, Category::Gradient, e.to_string()),
        }
    };
    let weights: Tensor<T> = uniform(&out_shape, 1.0, rng);
    let loss = |tape: &Tape<T>, vars: &[Var]| -> Result<Var> {
        let out = run(tape, vars)?;
        let w = tape.constant(weights.clone());
        tape.sum(tape.hadamard(out, w)?)
    };
    let points: Vec<Tensor<T>> = inputs.into_iter().chain(params.iter().map(|(_, p)| p.value.clone())).collect();
    let tamper = |_: usize, g: &mut Tensor<T>| {
        if fault {
            g.data_mut().iter_mut().for_each(|v| *v = *v + *v);
        }
    };
    match finite_diff_check_with(loss, &points, T::of(eps), tamper) {
        Ok(r) => Check::below(
            name,
            Category::Gradient,
            r.max_error,
            tol,
            format!("{} {} coords, eps {eps:e}, worst analytic {:.6e} numeric {:.6e}", T::NAME, r.coords, r.analytic, r.numeric),
        ),
        Err(e) => Check::failed(name, Category::Gradient, e.to_string()),
    }
}

/// Finite-difference checks of every layer on small random configurations.
pub fn gradient_checks<T: Real>(seed: u64, inject_fault: Option<&str>) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();
    let fault = |n: &str| inject_fault == Some(n);
    let mut push = |c: Check| checks.push(c);

    {
        let mut ps = ParamSet::new();
        let cl = ConvLstm1d::new(&mut ps, "cl", 5, 2, 2, 3, 1, &mut rng).expect("valid layer");
        randomize(&mut ps, &mut rng);
        let inputs = alloc::vec![uniform(&[1, 5, 2], 1.0, &mut rng), uniform(&[1, 3, 2], 0.8, &mut rng), uniform(&[1, 3, 2], 0.8, &mut rng)];
        let f = |p: &Pass<'_, T>, v: &[Var]| {
            let st = ConvLstmState::from_parts(p.tape(), v[1], v[2])?;
            Ok(cl.step(p, v[0], st)?.packed)
        };
        push(layer_check("conv_lstm_step", &ps, inputs, &f, &mut rng, fault("conv_lstm_step")));
    }
    {
        let mut ps = ParamSet::new();
        let cl = ConvLstm1d::new(&mut ps, "cl", 5, 1, 2, 3, 2, &mut rng).expect("valid layer");
        randomize(&mut ps, &mut rng);
        let inputs = alloc::vec![uniform(&[1, 3, 5, 1], 1.0, &mut rng)];
        let f = |p: &Pass<'_, T>, v: &[Var]| cl.forward(p, v[0]);
        push(layer_check("conv_lstm_forward", &ps, inputs, &f, &mut rng, fault("conv_lstm_forward")));
    }
    {
        let mut ps = ParamSet::new();
        let bn = BatchNorm1d::new(&mut ps, "bn", 2);
        for id in [bn.scale, bn.shift] {
            ps.replace(id, uniform(&[2], 1.0, &mut rng));
        }
        let inputs = alloc::vec![uniform(&[2, 3, 2], 1.0, &mut rng)];
        let f = |p: &Pass<'_, T>, v: &[Var]| bn.forward(p, v[0]);
        push(layer_check("batch_norm", &ps, inputs, &f, &mut rng, fault("batch_norm")));
    }
    {
        let mut ps = ParamSet::new();
        let l = Lstm::new(&mut ps, "l", 3, 2, &mut rng);
        randomize(&mut ps, &mut rng);
        let inputs = alloc::vec![uniform(&[2, 3, 3], 1.0, &mut rng)];
        let f = |p: &Pass<'_, T>, v: &[Var]| l.last_hidden(p, v[0], false);
        push(layer_check("lstm", &ps, inputs, &f, &mut rng, fault("lstm")));
    }
    {
        let mut ps = ParamSet::new();
        let bl = BiLstm::new(&mut ps, "bl", 2, 2, &mut rng);
        randomize(&mut ps, &mut rng);
        let inputs = alloc::vec![uniform(&[1, 3, 2], 1.0, &mut rng)];
        let f = |p: &Pass<'_, T>, v: &[Var]| bl.forward(p, v[0]);
        push(layer_check("bilstm", &ps, inputs, &f, &mut rng, fault("bilstm")));
    }
    {
        let ps = ParamSet::new();
        let inputs = alloc::vec![uniform(&[3, 4], 1.0, &mut rng), uniform(&[3, 4], 1.0, &mut rng), uniform(&[3, 2], 1.0, &mut rng)];
        let f = |p: &Pass<'_, T>, v: &[Var]| attention(p.tape(), v[0], v[1], v[2]);
        push(layer_check("attention", &ps, inputs, &f, &mut rng, fault("attention")));
    }
    {
        let mut ps = ParamSet::new();
        let mha = MultiHeadAttention::new(&mut ps, "a", 4, 2, 3, &mut rng).expect("valid layer");
        let inputs = alloc::vec![uniform(&[3, 4], 1.0, &mut rng)];
        let f = |p: &Pass<'_, T>, v: &[Var]| mha.forward(p, v[0]);
        push(layer_check("multi_head_attention", &ps, inputs, &f, &mut rng, fault("multi_head_attention")));
    }
    {
        let mut ps = ParamSet::new();
        let ln = LayerNorm::new(&mut ps, "ln", 5);
        randomize(&mut ps, &mut rng);
        let inputs = alloc::vec![uniform(&[3, 5], 1.0, &mut rng)];
        let f = |p: &Pass<'_, T>, v: &[Var]| ln.forward(p, v[0]);
        push(layer_check("layer_norm", &ps, inputs, &f, &mut rng, fault("layer_norm")));
    }
    {
        let mut ps = ParamSet::new();
        let d = Dense::new(&mut ps, "d", 4, 3, Activation::Relu, &mut rng);
        randomize(&mut ps, &mut rng);
        let inputs = alloc::vec![uniform(&[3, 4], 1.0, &mut rng)];
        let f = |p: &Pass<'_, T>, v: &[Var]| d.forward(p, v[0]);
        push(layer_check("dense", &ps, inputs, &f, &mut rng, fault("dense")));
    }
    {
        let mut ps = ParamSet::new();
        let enc = EncoderBlock::new(&mut ps, "e", 4, 2, 2, 6, &mut rng).expect("valid layer");
        let inputs = alloc::vec![uniform(&[3, 4], 1.0, &mut rng)];
        let f = |p: &Pass<'_, T>, v: &[Var]| enc.forward(p, v[0]);
        push(layer_check("encoder_block", &ps, inputs, &f, &mut rng, fault("encoder_block")));
    }
    {
        let ps = ParamSet::new();
        let inputs = alloc::vec![uniform(&[3, 4], 2.0, &mut rng)];
        let f = |p: &Pass<'_, T>, v: &[Var]| {
            let loss = p.tape().softmax_cross_entropy(v[0], &[2, 0, 3])?;
            p.tape().reshape(loss, &[1])
        };
        push(layer_check("softmax_cross_entropy", &ps, inputs, &f, &mut rng, fault("softmax_cross_entropy")));
    }
    checks
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn rand_vec(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..=scale)).collect()
}

const ORACLE_TOL: f64 = 1e-5;

/// Direct-formula references for the numeric kernels, `cases` random
/// inputs each, in 64-bit.
pub fn oracle_checks(seed: u64, cases: usize) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6f72_6163_6c65);
    let mut out = Vec::new();
    let mut record = |name: &str, errs: Vec<f64>| {
        let worst = errs.iter().copied().fold(0.0, f64::max);
        out.push(Check::below(name, Category::Oracle, worst, ORACLE_TOL, format!("{} cases", errs.len())));
    };

    let mut errs = Vec::new();
    for _ in 0..cases {
        let n = rng.random_range(1..=10);
        let x = rand_vec(n, 8.0, &mut rng);
        let z: f64 = x.iter().map(|v| v.exp()).sum();
        let want: Vec<f64> = x.iter().map(|v| v.exp() / z).collect();
        errs.push(max_abs(&softmax(&x), &want));
    }
    record("softmax", errs);

    let mut errs = Vec::new();
    for _ in 0..cases {
        let k = rng.random_range(2..=10);
        let x = rand_vec(k, 5.0, &mut rng);
        let t = rng.random_range(0..k);
        let want = x.iter().map(|v| v.exp()).sum::<f64>().ln() - x[t];
        let direct = cross_entropy(&softmax(&x), t).unwrap_or(f64::INFINITY);
        let tape = Tape::<f64>::new();
        let l = tape.constant(Tensor::new(&[1, k], x.clone()).expect("shape"));
        let fused = tape.softmax_cross_entropy(l, &[t]).map(|v| tape.value(v).data()[0]).unwrap_or(f64::INFINITY);
        errs.push((direct - want).abs().max((fused - want).abs()));
    }
    record("cross_entropy", errs);

    let mut errs = Vec::new();
    for _ in 0..cases {
        let h = rng.random_range(2..=12);
        let x = rand_vec(h, 3.0, &mut rng);
        let g = rand_vec(h, 2.0, &mut rng);
        let b = rand_vec(h, 2.0, &mut rng);
        let mu = x.iter().sum::<f64>() / h as f64;
        let var = x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / h as f64;
        let sigma = (var + 1e-6).sqrt();
        let want: Vec<f64> = (0..h).map(|i| g[i] / sigma * (x[i] - mu) + b[i]).collect();
        let tape = Tape::<f64>::new();
        let c = |v: &Vec<f64>| tape.constant(Tensor::new(&[v.len()], v.clone()).expect("shape"));
        let got = tape.layer_norm(c(&x), c(&g), c(&b), 1e-6).map(|v| tape.value(v).data().to_vec()).unwrap_or_default();
        errs.push(max_abs(&got, &want));
    }
    record("layer_norm", errs);

    let mut errs = Vec::new();
    for _ in 0..cases {
        let (nq, nk, dk, dv) = (rng.random_range(1..=5), rng.random_range(1..=5), rng.random_range(1..=6), rng.random_range(1..=4));
        let q = rand_vec(nq * dk, 1.5, &mut rng);
        let k = rand_vec(nk * dk, 1.5, &mut rng);
        let v = rand_vec(nk * dv, 1.5, &mut rng);
        let mut want = Vec::new();
        for i in 0..nq {
            let scores: Vec<f64> = (0..nk)
                .map(|j| (0..dk).map(|d| q[i * dk + d] * k[j * dk + d]).sum::<f64>() / (dk as f64).sqrt())
                .collect();
            let z: f64 = scores.iter().map(|s| s.exp()).sum();
            for d in 0..dv {
                want.push((0..nk).map(|j| scores[j].exp() / z * v[j * dv + d]).sum());
            }
        }
        let tape = Tape::<f64>::new();
        let c = |data: &Vec<f64>, r, c| tape.constant(Tensor::new(&[r, c], data.clone()).expect("shape"));
        let got = attention(&tape, c(&q, nq, dk), c(&k, nk, dk), c(&v, nk, dv))
            .map(|o| tape.value(o).data().to_vec())
            .unwrap_or_default();
        errs.push(max_abs(&got, &want));
    }
    record("attention", errs);

    let mut errs = Vec::new();
    for _ in 0..cases {
        let (m, k, n) = (rng.random_range(1..=7), rng.random_range(1..=7), rng.random_range(1..=7));
        let a = rand_vec(m * k, 2.0, &mut rng);
        let b = rand_vec(k * n, 2.0, &mut rng);
        let want: Vec<f64> = (0..m * n).map(|ij| (0..k).map(|p| a[ij / n * k + p] * b[p * n + ij % n]).sum()).collect();
        let tape = Tape::<f64>::new();
        let got = tape
            .matmul(tape.constant(Tensor::new(&[m, k], a).expect("shape")), tape.constant(Tensor::new(&[k, n], b).expect("shape")))
            .map(|o| tape.value(o).data().to_vec())
            .unwrap_or_default();
        errs.push(max_abs(&got, &want));
    }
    record("matmul", errs);

    let mut errs = Vec::new();
    for _ in 0..cases {
        let n = rng.random_range(13..=40);
        let x = rand_vec(n, 10.0, &mut rng);
        let want: Vec<f64> = (1..=12)
            .map(|k| {
                (2.0 / n as f64).sqrt()
                    * (0..n).map(|i| x[i] * (PI * k as f64 * (i as f64 + 0.5) / n as f64).cos()).sum::<f64>()
            })
            .collect();
        errs.push(max_abs(&mfcc_dct(&x, 12), &want));
    }
    record("dct", errs);

    let mut errs = Vec::new();
    for _ in 0..cases {
        let size = 1usize << rng.random_range(3..=9);
        let len = rng.random_range(1..=size);
        let x = rand_vec(len, 1.0, &mut rng);
        let want: Vec<f64> = (0..=size / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (n, v) in x.iter().enumerate() {
                    let a = -2.0 * PI * (k * n) as f64 / size as f64;
                    re += v * a.cos();
                    im += v * a.sin();
                }
                re * re + im * im
            })
            .collect();
        let got = power_spectrum(&x, size);
        let scale = want.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        errs.push(max_abs(&got, &want) / scale);
    }
    record("dft", errs);

    let mut errs = Vec::new();
    for _ in 0..cases {
        let frames = rng.random_range(1..=12);
        let dims = rng.random_range(1..=4);
        let seq: Vec<Vec<f64>> = (0..frames).map(|_| rand_vec(dims, 3.0, &mut rng)).collect();
        let at = |s: &Vec<Vec<f64>>, t: isize, d: usize| s[t.clamp(0, frames as isize - 1) as usize][d];
        let once = |s: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            (0..frames as isize)
                .map(|t| {
                    (0..dims)
                        .map(|d| (1.0 * (at(s, t + 1, d) - at(s, t - 1, d)) + 2.0 * (at(s, t + 2, d) - at(s, t - 2, d))) / 10.0)
                        .collect()
                })
                .collect()
        };
        let d1 = once(&seq);
        let d2 = once(&d1);
        let flat = |s: &Vec<Vec<f64>>| s.iter().flatten().copied().collect::<Vec<f64>>();
        errs.push(max_abs(&flat(&delta(&seq, 2, 1)), &flat(&d1)).max(max_abs(&flat(&delta(&seq, 2, 2)), &flat(&d2))));
    }
    record("delta", errs);

    let mut errs = Vec::new();
    for _ in 0..cases {
        let hp = AdamHyper { beta1: rng.random_range(0.0..0.99), beta2: rng.random_range(0.0..0.9999), eps: 1e-8 };
        let n = rng.random_range(1..=6);
        let lr = rng.random_range(1e-4..1e-1);
        let mut p = rand_vec(n, 1.0, &mut rng);
        let (mut m, mut v) = (alloc::vec![0.0; n], alloc::vec![0.0; n]);
        let mut want = p.clone();
        let (mut wm, mut wv) = (alloc::vec![0.0; n], alloc::vec![0.0; n]);
        for t in 1..=5u64 {
            let g = rand_vec(n, 1.0, &mut rng);
            adam_update(&mut p, &g, &mut m, &mut v, t, lr, &hp);
            for i in 0..n {
                wm[i] = hp.beta1 * wm[i] + (1.0 - hp.beta1) * g[i];
                wv[i] = hp.beta2 * wv[i] + (1.0 - hp.beta2) * g[i] * g[i];
                let mh = wm[i] / (1.0 - hp.beta1.powi(t as i32));
                let vh = wv[i] / (1.0 - hp.beta2.powi(t as i32));
                want[i] -= lr * mh / (vh.sqrt() + hp.eps);
            }
        }
        errs.push(max_abs(&p, &want));
    }
    record("adam_step", errs);
    out
}

/// Compares reports on random confusion matrices with a recount from raw
/// label pairs; every field must agree exactly.
pub fn metric_checks(seed: u64, cases: usize) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d65_7472_6963);
    let mut mismatches = 0usize;
    for _ in 0..cases {
        let n = rng.random_range(2..=6);
        let mut truth = Vec::new();
        let mut pred = Vec::new();
        for t in 0..n {
            for p in 0..n {
                for _ in 0..rng.random_range(0..=if t == p { 20 } else { 4 }) {
                    truth.push(t);
                    pred.push(p);
                }
            }
        }
        let Ok(r) = MetricsReport::from_predictions(&truth, &pred, n) else {
            mismatches += 1;
            continue;
        };
        let total = truth.len();
        let correct = truth.iter().zip(&pred).filter(|(a, b)| a == b).count();
        let acc = if total == 0 { 0.0 } else { correct as f64 / total as f64 };
        let mut ok = r.total as usize == total && r.correct as usize == correct && r.accuracy == acc;
        for c in 0..n {
            let tp = truth.iter().zip(&pred).filter(|&(&t, &p)| t == c && p == c).count();
            let fp = truth.iter().zip(&pred).filter(|&(&t, &p)| t != c && p == c).count();
            let fneg = truth.iter().zip(&pred).filter(|&(&t, &p)| t == c && p != c).count();
            let tn = truth.iter().zip(&pred).filter(|&(&t, &p)| t != c && p != c).count();
            let prec = (tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64);
            let rec = (tp + fneg > 0).then(|| tp as f64 / (tp + fneg) as f64);
            let f1 = match (prec, rec) {
                (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
                (Some(_), Some(_)) => Some(0.0),
                (None, None) => None,
                _ => Some(2.0 * tp as f64 / (2 * tp + fp + fneg) as f64),
            };
            let m = &r.per_class[c];
            ok &= m.tp as usize == tp && m.fp as usize == fp && m.fn_ as usize == fneg && m.tn as usize == tn;
            ok &= m.precision == prec && m.recall == rec;
            ok &= match (m.f_beta, f1) {
                (Some(a), Some(b)) => (a - b).abs() <= 4.0 * f64::EPSILON * b.max(1.0),
                (a, b) => a == b,
            };
        }
        if !ok {
            mismatches += 1;
        }
    }
    let mut checks = alloc::vec![Check::exact(
        "metrics_counting_oracle",
        Category::Metrics,
        mismatches as f64,
        format!("{cases} random confusion matrices"),
    )];
    let mut confusion = alloc::vec![alloc::vec![0u64; 45]; 45];
    for (c, row) in confusion.iter_mut().enumerate() {
        row[c] = 128;
    }
    for k in 0..23 {
        confusion[k][k] -= 1;
        confusion[k][(k + 7) % 45] += 1;
    }
    let acc = MetricsReport::from_confusion(confusion, 1.0).map(|r| r.accuracy).unwrap_or(0.0);
    checks.push(Check::below(
        "accuracy_5760_23_errors",
        Category::Metrics,
        ((acc * 1000.0).round() / 10.0 - 99.6).abs(),
        1e-9,
        format!("accuracy {acc:.6}"),
    ));
    let f = f_beta(0.8, 0.8, 1.0);
    checks.push(Check::below("f1_equal_p_r", Category::Metrics, (f - 0.8).abs(), 1e-15, "P = R = 0.8"));
    checks
}

/// Per-sample stage shapes of the full model and a forward pass of every
/// ablation group.
pub fn shape_checks() -> Vec<Check> {
    let mut checks = Vec::new();
    let want: [(&str, &[usize]); 11] = [
        ("input", &[128, 73]),
        ("convlstm", &[128, 24, 64]),
        ("convlstm", &[128, 11, 32]),
        ("reshape", &[128, 352]),
        ("bilstm", &[256]),
        ("tokens", &[16, 16]),
        ("encoder", &[16, 16]),
        ("encoder", &[16, 16]),
        ("pool", &[16]),
        ("mlp", &[128]),
        ("logits", &[45]),
    ];
    let trace = DeviceIdModel::<f32>::build(ModelConfig::default(), 0).and_then(|m| m.shape_trace());
    checks.push(match trace {
        Ok(tr) => {
            let got: Vec<String> = tr.iter().map(|(n, s)| format!("{n}{s:?}")).collect();
            let exp: Vec<String> = want.iter().map(|(n, s)| format!("{n}{s:?}")).collect();
            let diff = got.len().abs_diff(exp.len()) + got.iter().zip(&exp).filter(|(a, b)| a != b).count();
            Check::exact("shape_trace_full_model", Category::Shape, diff as f64, got.join(" -> "))
        }
        Err(e) => Check::failed("shape_trace_full_model", Category::Shape, e.to_string()),
    });
    for g in 1..=7u8 {
        let name = format!("ablation_group_{g}_forward");
        let res = ablation_config(g).and_then(|cfg| DeviceIdModel::<f32>::build(cfg, g as u64)).and_then(|m| {
            let x = crate::featkit::TandemFeature::new(128, 73, alloc::vec![0.1; 128 * 73], None)?;
            m.logits(&[&x])
        });
        checks.push(match res {
            Ok(l) if l.shape() == [1, 45] && l.all_finite() => Check::exact(name, Category::Shape, 0.0, "(1, 45) finite logits"),
            Ok(l) => Check::exact(name, Category::Shape, 1.0, format!("logits {:?}", l.shape())),
            Err(e) => Check::failed(name, Category::Shape, e.to_string()),
        });
    }
    checks
}

/// Runs every computational check of this crate.
pub fn run(opts: &VerifyOptions) -> VerifyReport {
    let fault = opts.inject_fault.as_deref();
    let mut checks = gradient_checks::<f32>(opts.seed, fault);
    checks.extend(gradient_checks::<f64>(opts.seed, fault));
    checks.extend(oracle_checks(opts.seed, opts.oracle_cases));
    checks.extend(metric_checks(opts.seed, opts.metric_cases));
    if opts.shapes {
        checks.extend(shape_checks());
    }
    VerifyReport { checks }
}
