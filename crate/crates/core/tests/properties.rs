//! Invariants checked on random inputs.

use devid_core::layers::{attention, BiLstm, ConvLstm1d, LayerNorm, Mode, ParamSet, Pass};
use devid_core::model::DeviceIdModel;
use devid_core::synth::{build_corpus, SynthCorpusSpec};
use devid_core::train::{adam_update, argmax, fit, softmax, AdamHyper, Examples, MetricsReport, TrainConfig};
use devid_core::{ablation_config, extract_tandem, finite_diff_check, segment, AudioClip, FrameSpec, ModelConfig, Tape, TandemFeature, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(shape: &[usize], scale: f64, r: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| r.random_range(-scale..=scale))
}

fn randomize(ps: &mut ParamSet<f64>, scale: f64, r: &mut ChaCha8Rng) {
    for id in ps.ids().collect::<Vec<_>>() {
        let shape = ps.value(id).shape().to_vec();
        ps.replace(id, uniform(&shape, scale, r));
    }
}

fn small_config(group: u8, classes: usize) -> ModelConfig {
    let mut cfg = ablation_config(group).unwrap();
    cfg.input_frames = 6;
    cfg.input_dims = 10;
    cfg.convlstm[0].filters = 3;
    cfg.convlstm[1].filters = 2;
    cfg.bilstm_units = 4;
    cfg.block_width = 4;
    cfg.heads = 2;
    cfg.head_dim = 3;
    cfg.ff_units = 5;
    cfg.mlp_units = 6;
    cfg.n_classes = classes;
    cfg
}

fn noise_clip(seed: u64, len: usize, rate: u32) -> AudioClip {
    let mut r = rng(seed);
    let samples = (0..len).map(|i| 0.4 * (i as f32 * 0.013).sin() + r.random_range(-0.3f32..0.3)).collect();
    AudioClip::new(samples, rate)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn segments_concatenate_to_a_prefix(len in 1usize..5000, rate in 100u32..2000, dur in 0.05f64..3.0, seed in any::<u64>()) {
        let clip = noise_clip(seed, len, rate).with_label(2);
        let seg_len = (dur * rate as f64).round() as usize;
        prop_assume!(seg_len >= 1);
        let segs = segment(&clip, dur, 1).unwrap();
        prop_assert_eq!(segs.len(), len / seg_len);
        let joined: Vec<f32> = segs.iter().flat_map(|s| s.samples.iter().copied()).collect();
        prop_assert_eq!(&joined[..], &clip.samples[..joined.len()]);
        prop_assert!(segs.iter().all(|s| s.samples.len() == seg_len && s.label == Some(2)));
    }

    #[test]
    fn reshape_transpose_slice_are_lossless(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
        let mut r = rng(seed);
        let x = uniform(&[rows, cols], 10.0, &mut r);
        let tape = Tape::new();
        let v = tape.constant(x.clone());
        let back = tape.reshape(tape.reshape(v, &[rows * cols]).unwrap(), &[rows, cols]).unwrap();
        let tt = tape.transpose(tape.transpose(v).unwrap()).unwrap();
        let parts: Vec<Var> = (0..cols).map(|c| tape.slice(v, 1, c, 1).unwrap()).collect();
        let glued = tape.concat(&parts, 1).unwrap();
        for y in [back, tt, glued] {
            let same = tape.value(y).data().iter().zip(x.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
        }
    }

    #[test]
    fn self_addition_accumulates_gradient(seed in any::<u64>()) {
        let x = uniform(&[4], 2.0, &mut rng(seed));
        let tape = Tape::new();
        let v = tape.param(x.clone());
        let loss = tape.sum(tape.add(v, v).unwrap()).unwrap();
        let g = tape.backward(loss).unwrap();
        prop_assert!(g.get(v).unwrap().data().iter().all(|&d| d == 2.0));
        let tape2 = Tape::new();
        let (a, b) = (tape2.param(x.clone()), tape2.param(x));
        let g2 = tape2.backward(tape2.sum(tape2.add(a, b).unwrap()).unwrap()).unwrap();
        let total: Vec<f64> = g2.get(a).unwrap().data().iter().zip(g2.get(b).unwrap().data()).map(|(p, q)| p + q).collect();
        prop_assert_eq!(total, g.get(v).unwrap().data().to_vec());
    }

    #[test]
    fn layer_norm_standardizes(width in 2usize..20, seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut ps = ParamSet::<f64>::new();
        let ln = LayerNorm::new(&mut ps, "ln", width);
        let x = uniform(&[3, width], 50.0, &mut r);
        let tape = Tape::new();
        let pass = Pass::new(&tape, &ps, Mode::Eval);
        let y = ln.forward(&pass, tape.constant(x)).unwrap();
        for row in tape.value(y).data().chunks(width) {
            let m = row.iter().sum::<f64>() / width as f64;
            let var = row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / width as f64;
            prop_assert!(m.abs() < 1e-5 && (var - 1.0).abs() < 1e-5, "mean {} var {}", m, var);
        }
    }

    #[test]
    fn attention_rows_sum_to_one(n in 1usize..8, dk in 1usize..6, seed in any::<u64>()) {
        let mut r = rng(seed);
        let tape = Tape::<f64>::new();
        let q = tape.constant(uniform(&[n, dk], 4.0, &mut r));
        let k = tape.constant(uniform(&[n, dk], 4.0, &mut r));
        let eye = tape.constant(Tensor::from_fn(&[n, n], |i| if i / n == i % n { 1.0 } else { 0.0 }));
        // values = identity exposes the attention weights
        let w = attention(&tape, q, k, eye).unwrap();
        for row in tape.value(w).data().chunks(n) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn argmax_is_invariant_under_softmax(logits in prop::collection::vec(-30.0f64..30.0, 1..12)) {
        prop_assert_eq!(argmax(&softmax(&logits)), argmax(&logits));
    }

    #[test]
    fn zero_gradient_is_an_adam_fixed_point(n in 1usize..10, t in 1u64..50, seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut p: Vec<f64> = (0..n).map(|_| r.random_range(-3.0..3.0)).collect();
        let before = p.clone();
        let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
        for step in 1..=t {
            adam_update(&mut p, &vec![0.0; n], &mut m, &mut v, step, 1e-2, &AdamHyper::default());
        }
        prop_assert_eq!(p, before);
    }

    #[test]
    fn metric_identities_hold(pairs in prop::collection::vec((0usize..5, 0usize..5), 1..200)) {
        let (truth, pred): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let r = MetricsReport::from_predictions(&truth, &pred, 5).unwrap();
        prop_assert_eq!(r.accuracy, (0..5).map(|i| r.confusion[i][i]).sum::<u64>() as f64 / truth.len() as f64);
        for (c, m) in r.per_class.iter().enumerate() {
            prop_assert_eq!(m.tp + m.fn_, r.confusion[c].iter().sum::<u64>());
            prop_assert_eq!(m.tp + m.fp, r.confusion.iter().map(|row| row[c]).sum::<u64>());
            prop_assert_eq!(m.tp + m.fp + m.fn_ + m.tn, r.total);
            if let (Some(p), Some(rc), Some(f)) = (m.precision, m.recall, m.f_beta) {
                if p + rc > 0.0 {
                    prop_assert!((f - 2.0 * p * rc / (p + rc)).abs() < 1e-15);
                }
                if p == rc {
                    prop_assert!((f - p).abs() < 1e-15);
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn tandem_shape_and_determinism(len in 1151usize..40_000, rate in prop::sample::select(vec![8000u32, 16_000, 32_000]), seed in any::<u64>()) {
        let clip = noise_clip(seed, len, rate);
        let a = extract_tandem(&clip, &FrameSpec::default()).unwrap();
        let b = extract_tandem(&clip, &FrameSpec::default()).unwrap();
        prop_assert_eq!(a.shape(), (128, 73));
        prop_assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
        prop_assert!(a.data.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn gain_shifts_log_energy_and_fbank_only(g in 0.1f64..1.0, seed in any::<u64>()) {
        let clip = noise_clip(seed, 16_000, 16_000);
        let scaled = AudioClip::new(clip.samples.iter().map(|&s| (s as f64 * g) as f32).collect(), 16_000);
        let spec = FrameSpec::default();
        let (a, b) = (extract_tandem(&clip, &spec).unwrap(), extract_tandem(&scaled, &spec).unwrap());
        let shift = (g * g).ln();
        let layout = spec.layout();
        for t in 0..128 {
            let d = |c: usize| b.get(t, c) as f64 - a.get(t, c) as f64;
            prop_assert!((d(layout.log_energy) - shift).abs() < 1e-3);
            for c in layout.fbank.clone() {
                prop_assert!((d(c) - shift).abs() < 1e-3, "fbank {} at {}: {}", c, t, d(c));
            }
            for c in layout.mfcc.clone().chain(layout.delta.clone()).chain(layout.delta2.clone()) {
                prop_assert!(d(c).abs() < 2e-3, "col {} at {}: {}", c, t, d(c));
            }
        }
    }

    #[test]
    fn conv_lstm_hidden_state_is_bounded(seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut ps = ParamSet::<f64>::new();
        let cl = ConvLstm1d::new(&mut ps, "cl", 7, 2, 3, 3, 2, &mut r).unwrap();
        randomize(&mut ps, 5.0, &mut r);
        let tape = Tape::new();
        let pass = Pass::new(&tape, &ps, Mode::Eval);
        let y = cl.forward(&pass, tape.constant(uniform(&[2, 6, 7, 2], 10.0, &mut r))).unwrap();
        prop_assert!(tape.value(y).data().iter().all(|h| h.abs() < 1.0));
    }

    #[test]
    fn bilstm_direction_swap_symmetry(seed in any::<u64>(), steps in 1usize..6) {
        let mut r = rng(seed);
        let mut ps = ParamSet::<f64>::new();
        let bl = BiLstm::new(&mut ps, "bl", 3, 4, &mut r);
        randomize(&mut ps, 1.0, &mut r);
        let swapped = BiLstm { forward: bl.backward.clone(), backward: bl.forward.clone() };
        let x = uniform(&[1, steps, 3], 1.0, &mut r);
        let rev: Vec<f64> = (0..steps).rev().flat_map(|t| x.data()[t * 3..t * 3 + 3].to_vec()).collect();
        let tape = Tape::new();
        let pass = Pass::new(&tape, &ps, Mode::Eval);
        let y = bl.forward(&pass, tape.constant(x.clone())).unwrap();
        let yr = swapped.forward(&pass, tape.constant(Tensor::new(&[1, steps, 3], rev).unwrap())).unwrap();
        let (y, yr) = (tape.value(y).data().to_vec(), tape.value(yr).data().to_vec());
        prop_assert_eq!(&y[..4], &yr[4..]);
        prop_assert_eq!(&y[4..], &yr[..4]);
    }

    #[test]
    fn primitives_pass_gradient_checks(seed in any::<u64>()) {
        let mut r = rng(seed);
        let a = uniform(&[3, 4], 1.5, &mut r);
        let b = uniform(&[4, 2], 1.5, &mut r);
        let w = uniform(&[3, 4], 1.0, &mut r);
        type Prim = fn(&Tape<f64>, Var) -> devid_core::Result<Var>;
        let unary: [(&str, Prim); 6] = [
            ("sigmoid", |t, x| t.sigmoid(x)),
            ("tanh", |t, x| t.tanh(x)),
            ("exp", |t, x| t.exp(x)),
            ("softmax", |t, x| t.softmax(x)),
            ("mean_axis", |t, x| { let m = t.reshape(t.mean_axis(x, 1)?, &[3, 1])?; t.concat(&[m, m, m, m], 1) }),
            ("permute", |t, x| { let y = t.reshape(x, &[3, 2, 2])?; let p = t.permute(y, &[2, 0, 1])?; t.reshape(p, &[3, 4]) }),
        ];
        for (name, op) in unary {
            let wt = w.clone();
            let f = move |t: &Tape<f64>, v: &[Var]| { let y = op(t, v[0])?; let c = t.constant(wt.clone()); t.sum(t.hadamard(y, c)?) };
            let res = finite_diff_check(f, &[a.clone()], 1e-6).unwrap();
            prop_assert!(res.max_error < 1e-6, "{}: {:?}", name, res);
        }
        let mm = finite_diff_check(|t, v| t.sum(t.tanh(t.matmul(v[0], v[1])?)?), &[a.clone(), b], 1e-6).unwrap();
        prop_assert!(mm.max_error < 1e-6, "matmul: {:?}", mm);
    }

    #[test]
    fn every_group_outputs_a_distribution(group in 1u8..=7, seed in any::<u64>()) {
        let model = DeviceIdModel::<f64>::build(small_config(group, 5), seed).unwrap();
        let mut r = rng(seed);
        let feats: Vec<TandemFeature> = (0..3)
            .map(|_| TandemFeature::new(6, 10, (0..60).map(|_| r.random_range(-3.0f32..3.0)).collect(), None).unwrap())
            .collect();
        let refs: Vec<&TandemFeature> = feats.iter().collect();
        let logits = model.logits(&refs).unwrap();
        for row in logits.data().chunks(5) {
            let p = softmax(row);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        let again = DeviceIdModel::<f64>::build(small_config(group, 5), seed).unwrap();
        prop_assert_eq!(again.params, model.params);
    }
}

#[test]
fn every_full_size_group_accepts_a_full_size_input() {
    let x = TandemFeature::new(128, 73, (0..128 * 73).map(|i| ((i % 97) as f32 - 48.0) / 24.0).collect(), None).unwrap();
    for g in 1..=7 {
        let model = DeviceIdModel::<f32>::build(ablation_config(g).unwrap(), g as u64).unwrap();
        let logits = model.logits(&[&x]).unwrap();
        assert_eq!(logits.shape(), [1, 45], "group {g}");
        assert!(logits.all_finite());
    }
}

#[test]
fn training_is_deterministic() {
    let mut r = rng(8);
    let data = Examples::new(vec![6, 10], (0..20 * 60).map(|_| r.random_range(-1.0f32..1.0)).collect(), (0..20).map(|i| i % 3).collect()).unwrap();
    let cfg = TrainConfig { lr: 1e-3, batch_size: 8, epochs: 3, seed: 4, ..Default::default() };
    let run = || {
        let mut m = DeviceIdModel::<f32>::build(small_config(4, 3), 2).unwrap();
        let out = fit(&mut m, &data, &data.subset(&[0, 1, 2]), &cfg, |_| {}).unwrap();
        (out.history, m.params)
    };
    let (h1, p1) = run();
    let (h2, p2) = run();
    assert_eq!(h1, h2);
    for ((_, a), (_, b)) in p1.iter().zip(p2.iter()) {
        assert!(a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn corpus_is_a_pure_function_of_its_spec() {
    let spec = SynthCorpusSpec { n_devices: 3, clips_per_device: 10, clip_duration_s: 0.1, sample_rate: 8000, seed: 17 };
    let (a, b) = (build_corpus(&spec).unwrap(), build_corpus(&spec).unwrap());
    assert_eq!(a, b);
    assert_eq!(a.clips.len(), 30);
    let other = build_corpus(&SynthCorpusSpec { seed: 18, ..spec.clone() }).unwrap();
    assert_ne!(a.clips[0].clip.samples, other.clips[0].clip.samples);
    // every device renders the same source pool
    for d in 0..3 {
        let ids: Vec<&str> = a.clips.iter().filter(|c| c.device_id == d).map(|c| c.source_id.as_str()).collect();
        assert_eq!(ids, a.clips[..10].iter().map(|c| c.source_id.as_str()).collect::<Vec<_>>());
    }
}
