//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. The classification criteria train full-size models and take
//! tens of minutes on a single core.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use devid::checkpoint::{load_checkpoint, save_checkpoint, Provenance};
use devid::commands::format_checks;
use devid::ttf::{read_features, write_features};
use devid_core::synth::{build_corpus, SynthCorpusSpec};
use devid_core::train::{train, transfer_finetune, Examples, TrainConfig, Trainable};
use devid_core::verify::{self, Check};
use devid_core::{ablation_config, extract_tandem, DeviceIdModel, FrameSpec, TandemFeature};
use rayon::prelude::*;

const SEED: u64 = 20;

struct Outcome {
    passed: bool,
    summary: String,
}

impl Outcome {
    fn new(passed: bool, summary: impl Into<String>) -> Self {
        Outcome { passed, summary: summary.into() }
    }

    fn from_checks(checks: &[Check]) -> Self {
        let failed: Vec<String> = checks.iter().filter(|c| !c.passed).map(|c| format!("{} ({})", c.name, c.detail)).collect();
        let worst = checks
            .iter()
            .filter(|c| c.threshold > 0.0)
            .map(|c| c.measured / c.threshold)
            .fold(0.0, f64::max);
        if failed.is_empty() {
            Outcome::new(true, format!("{} checks, worst measured/threshold {worst:.3e}", checks.len()))
        } else {
            Outcome::new(false, format!("{} of {} checks failed: {}", failed.len(), checks.len(), failed.join("; ")))
        }
    }
}

fn features(spec: &SynthCorpusSpec) -> Vec<TandemFeature> {
    let corpus = build_corpus(spec).expect("corpus");
    let frame = FrameSpec::default();
    corpus
        .clips
        .par_iter()
        .map(|c| extract_tandem(&c.clip, &frame).expect("features"))
        .collect()
}

fn classifier_config() -> TrainConfig {
    TrainConfig { lr: 1e-3, batch_size: 32, epochs: 30, seed: 3, ..TrainConfig::default() }
}

fn train_group(group: u8, data: &Examples, n_classes: usize) -> (DeviceIdModel<f32>, f64, usize) {
    let mut cfg = ablation_config(group).expect("group");
    cfg.n_classes = n_classes;
    let mut model = DeviceIdModel::<f32>::build(cfg, 1).expect("model");
    let t = Instant::now();
    let run = train(&mut model, data, &classifier_config(), |_| {}).expect("training");
    let acc = run.test.expect("test split").accuracy;
    eprintln!("  group {group}: test accuracy {acc:.4}, best epoch {}, {:.0?}", run.outcome.best_epoch, t.elapsed());
    (model, acc, run.outcome.best_epoch)
}

fn gradients() -> Outcome {
    let mut checks = verify::gradient_checks::<f32>(SEED, None);
    checks.extend(verify::gradient_checks::<f64>(SEED, None));
    Outcome::from_checks(&checks)
}

fn classification(data: &Examples) -> (Outcome, DeviceIdModel<f32>) {
    let (full, full_acc, _) = train_group(4, data, 8);
    let (_, conv_acc, _) = train_group(1, data, 8);
    let gap = conv_acc - full_acc;
    let passed = full_acc >= 0.90 && gap <= 0.02;
    let outcome = Outcome::new(passed, format!("group 4 {:.2}% (need >= 90), group 1 {:.2}%, gap {:+.2} points (need <= 2)", full_acc * 100.0, conv_acc * 100.0, gap * 100.0));
    (outcome, full)
}

fn transfer(pretrained: DeviceIdModel<f32>) -> Outcome {
    let b = features(&SynthCorpusSpec { n_devices: 5, seed: 1111, ..SynthCorpusSpec::default() });
    let data = Examples::from_features(&b).expect("examples");
    let cfg = TrainConfig { lr: 1e-4, batch_size: 32, epochs: 30, seed: 5, ..TrainConfig::default() };
    let split = devid_core::train::stratified_split(&data.labels, cfg.split, cfg.seed).expect("split");
    let (tr, va, te) = (data.subset(&split.train), data.subset(&split.val), data.subset(&split.test));
    let tuned = transfer_finetune(pretrained, 5, Trainable::Head, &tr, &va, &te, &cfg).expect("fine-tune");

    let mut scratch_cfg = ablation_config(4).expect("group");
    scratch_cfg.n_classes = 5;
    let mut scratch = DeviceIdModel::<f32>::build(scratch_cfg, 2).expect("model");
    let run = train(&mut scratch, &data, &cfg, |_| {}).expect("training");
    let scratch_acc = run.test.expect("test split").accuracy;

    let same_budget = run.outcome.steps == tuned.outcome.steps;
    let passed = tuned.report.accuracy >= scratch_acc && tuned.frozen_unchanged && tuned.frozen_checked > 0 && same_budget;
    Outcome::new(
        passed,
        format!(
            "fine-tuned {:.2}% vs from-scratch {:.2}% over {} / {} steps, {} frozen tensors {}",
            tuned.report.accuracy * 100.0,
            scratch_acc * 100.0,
            tuned.outcome.steps,
            run.outcome.steps,
            tuned.frozen_checked,
            if tuned.frozen_unchanged { "bit-identical" } else { "CHANGED" },
        ),
    )
}

fn persistence(model: &DeviceIdModel<f32>, feats: &[TandemFeature]) -> Outcome {
    let tmp = tempfile::tempdir().expect("tempdir");
    let path = tmp.path().join("a.ttf");
    write_features(&path, feats).expect("write");
    let back = read_features(&path).expect("read");
    let same_feats = back.len() == feats.len()
        && feats.iter().zip(&back).all(|(a, b)| a.label == b.label && a.shape() == b.shape() && bits(&a.data) == bits(&b.data));

    let ck = tmp.path().join("checkpoint");
    save_checkpoint(&ck, model, Provenance::default()).expect("save");
    let (loaded, _) = load_checkpoint(&ck).expect("load");
    let same_params = loaded.params == model.params;
    let probe: Vec<&TandemFeature> = feats.iter().step_by(37).collect();
    let before = model.logits(&probe).expect("forward");
    let after = loaded.logits(&probe).expect("forward");
    let same_logits = bits(before.data()) == bits(after.data());

    let formats = format_checks(SEED);
    let passed = same_feats && same_params && same_logits && formats.iter().all(|c| c.passed);
    Outcome::new(
        passed,
        format!("{} feature files, params {same_params}, logits on {} clips bitwise {same_logits}, format checks {}", feats.len(), probe.len(), formats.len()),
    )
}

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

const TINY: &str = r#"
[model]
convlstm = [{ filters = 4, kernel = 3, stride = 3 }, { filters = 2, kernel = 3, stride = 2 }]
bilstm_units = 8
block_width = 4
heads = 2
head_dim = 4
ff_units = 8
mlp_units = 8

[train]
epochs = 2
batch_size = 8
lr = 0.001

[transfer.train]
epochs = 2
"#;

const PIPELINE: &[&[&str]] = &[
    &["synth", "--devices", "3", "--clips", "10", "--duration", "0.5", "--out", "c"],
    &["extract", "--corpus", "c", "--out", "f"],
    &["train", "--features", "f/features.ttf", "--group", "4", "--out", "t"],
    &["eval", "--checkpoint", "t/checkpoint", "--features", "t/test.ttf", "--out", "e"],
    &["transfer", "--checkpoint", "t/checkpoint", "--features", "f/features.ttf", "--out", "x"],
    &["verify", "--oracle-cases", "10", "--out", "v"],
];

fn run_pipeline(dir: &Path) -> Result<(), String> {
    fs::write(dir.join("tiny.toml"), TINY).map_err(|e| e.to_string())?;
    for args in PIPELINE {
        let out = Command::new(env!("CARGO_BIN_EXE_devid"))
            .current_dir(dir)
            .args(*args)
            .args(["--config", "tiny.toml", "--seed", "7", "--threads", "1"])
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("{}: {}", args[0], String::from_utf8_lossy(&out.stderr)));
        }
    }
    Ok(())
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).expect("readable") {
            let path = entry.expect("entry").path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(path.strip_prefix(root).expect("prefix").to_path_buf(), fs::read(&path).expect("readable"));
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().expect("tempdir"), tempfile::tempdir().expect("tempdir"));
    if let Err(e) = run_pipeline(a.path()).and_then(|_| run_pipeline(b.path())) {
        return Outcome::new(false, e);
    }
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    let differing: Vec<String> = sa
        .keys()
        .chain(sb.keys())
        .filter(|k| sa.get(*k) != sb.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    if differing.is_empty() {
        Outcome::new(true, format!("{} commands, {} output files byte-identical across runs", PIPELINE.len(), sa.len()))
    } else {
        Outcome::new(false, format!("differing files: {}", differing.join(", ")))
    }
}

fn report(index: usize, name: &str, started: Instant, outcome: Outcome, all: &mut bool) {
    *all &= outcome.passed;
    let tag = if outcome.passed { "PASS" } else { "FAIL" };
    println!("{tag} criterion {index} {name}: {} [{:.1?}]", outcome.summary, started.elapsed());
}

fn main() -> ExitCode {
    // the libtest harness is off, so filter arguments still arrive here
    if std::env::args().skip(1).any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let mut all = true;

    let t = Instant::now();
    report(1, "gradients", t, gradients(), &mut all);
    let t = Instant::now();
    report(2, "shapes", t, Outcome::from_checks(&verify::shape_checks()), &mut all);
    let t = Instant::now();
    report(3, "formula oracles", t, Outcome::from_checks(&verify::oracle_checks(SEED, 100)), &mut all);
    let t = Instant::now();
    report(4, "metrics", t, Outcome::from_checks(&verify::metric_checks(SEED, 1000)), &mut all);

    let t = Instant::now();
    let corpus_a = features(&SynthCorpusSpec { seed: 7, ..SynthCorpusSpec::default() });
    let data_a = Examples::from_features(&corpus_a).expect("examples");
    let (outcome, pretrained) = classification(&data_a);
    report(5, "synthetic classification", t, outcome, &mut all);

    let t = Instant::now();
    report(6, "transfer", t, transfer(pretrained.clone()), &mut all);
    let t = Instant::now();
    report(7, "persistence", t, persistence(&pretrained, &corpus_a), &mut all);
    let t = Instant::now();
    report(8, "cli determinism", t, determinism(), &mut all);

    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
