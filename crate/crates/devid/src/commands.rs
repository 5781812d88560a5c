//! Command implementations over a resolved [`RunConfig`].

use std::fs;
use std::path::{Path, PathBuf};

use devid_core::synth::build_corpus;
use devid_core::train::{
    evaluate, stratified_split, train, transfer_finetune, EpochRecord, Examples, MetricsReport, TrainOutcome,
};
use devid_core::verify::{self, Category, Check, VerifyOptions, VerifyReport};
use devid_core::{ablation_config, extract_tandem, DeviceIdModel, TandemFeature};
use rayon::prelude::*;
use serde::Serialize;

use crate::checkpoint::{load_checkpoint, save_checkpoint, Provenance};
use crate::config::RunConfig;
use crate::report::{history_csv, metrics_csv, to_json, write_text};
use crate::ttf::{read_features, write_features};
use crate::wav::{load_wav, write_wav};
use crate::{Error, Result};

pub const MANIFEST_CSV: &str = "manifest.csv";
pub const FEATURES_FILE: &str = "features.ttf";
pub const ERRORS_CSV: &str = "errors.csv";
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const HISTORY_CSV: &str = "history.csv";
pub const TEST_FEATURES: &str = "test.ttf";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const TRANSFER_JSON: &str = "transfer.json";
pub const VERIFY_JSON: &str = "verify.json";

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::Usage(format!("missing {what} path")))
}

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    let dir = required(&cfg.paths.out, "output")?;
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    Ok(dir)
}

fn display(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

/// Files written by a command, in the order they were produced.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Written {
    pub files: Vec<PathBuf>,
}

impl Written {
    fn add(&mut self, p: PathBuf) -> &Path {
        self.files.push(p);
        self.files.last().expect("just pushed")
    }
}

#[derive(Debug, Clone, PartialEq, serde::Deserialize, Serialize)]
pub struct ManifestRow {
    pub clip_path: String,
    pub device_id: u32,
    pub source_id: String,
    pub seed: u64,
}

/// Renders the synthetic corpus to `out/wav/*.wav` plus `out/manifest.csv`.
pub fn synth(cfg: &RunConfig) -> Result<Written> {
    let corpus = build_corpus(&cfg.synth)?;
    let dir = out_dir(cfg)?;
    let wav_dir = dir.join("wav");
    fs::create_dir_all(&wav_dir).map_err(Error::io(&wav_dir))?;
    let mut written = Written::default();
    let rows: Vec<ManifestRow> = corpus
        .clips
        .iter()
        .map(|c| ManifestRow {
            clip_path: format!("wav/{}.wav", c.name),
            device_id: c.device_id,
            source_id: c.source_id.clone(),
            seed: c.seed,
        })
        .collect();
    corpus
        .clips
        .par_iter()
        .zip(&rows)
        .try_for_each(|(c, row)| write_wav(&dir.join(&row.clip_path), &c.clip))?;
    let manifest = dir.join(MANIFEST_CSV);
    let mut w = csv::Writer::from_path(&manifest).map_err(|e| Error::Failed(format!("{}: {e}", manifest.display())))?;
    for row in &rows {
        w.serialize(row).map_err(|e| Error::Failed(format!("{}: {e}", manifest.display())))?;
    }
    w.flush().map_err(Error::io(&manifest))?;
    written.files.extend(rows.iter().map(|r| dir.join(&r.clip_path)));
    written.add(manifest);
    written.add(dir.join("profiles.json"));
    write_text(written.files.last().expect("pushed"), &to_json(&corpus.profiles))?;
    written.add(cfg.write_resolved(dir)?);
    Ok(written)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let fail = |e: csv::Error| Error::Failed(format!("{}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(fail)?;
    r.deserialize().collect::<Result<Vec<ManifestRow>, _>>().map_err(fail)
}

#[derive(Debug, Clone, PartialEq)]
struct ExtractError {
    clip_path: String,
    error: String,
}

/// Extracts one tandem feature matrix per manifest row into
/// `out/features.ttf`. Unreadable clips are skipped and listed in
/// `out/errors.csv`; any failure makes the command fail after writing.
pub fn extract(cfg: &RunConfig) -> Result<Written> {
    cfg.frame.validate()?;
    let corpus = required(&cfg.paths.corpus, "corpus")?;
    let rows = read_manifest(&corpus.join(MANIFEST_CSV))?;
    let results: Vec<Result<TandemFeature>> = rows
        .par_iter()
        .map(|row| {
            let mut clip = load_wav(&corpus.join(&row.clip_path))?;
            clip.label = Some(row.device_id);
            let mut f = extract_tandem(&clip, &cfg.frame)?;
            f.label = Some(row.device_id);
            Ok(f)
        })
        .collect();
    let mut features = Vec::with_capacity(rows.len());
    let mut errors = Vec::new();
    for (row, r) in rows.iter().zip(results) {
        match r {
            Ok(f) => features.push(f),
            Err(e) => errors.push(ExtractError { clip_path: row.clip_path.clone(), error: e.to_string() }),
        }
    }
    let dir = out_dir(cfg)?;
    let mut written = Written::default();
    write_features(written.add(dir.join(FEATURES_FILE)), &features)?;
    let sidecar = written.add(dir.join(ERRORS_CSV)).to_path_buf();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["clip_path", "error"]).expect("in-memory write");
    for e in &errors {
        w.write_record([&e.clip_path, &e.error]).expect("in-memory write");
    }
    write_text(&sidecar, &String::from_utf8(w.into_inner().expect("flush")).expect("utf-8"))?;
    written.add(cfg.write_resolved(dir)?);
    if !errors.is_empty() {
        return Err(Error::Failed(format!("{} of {} clips failed; see {}", errors.len(), rows.len(), sidecar.display())));
    }
    Ok(written)
}

fn labeled_examples(features: &[TandemFeature], path: &Path) -> Result<Examples> {
    if let Some(i) = features.iter().position(|f| f.label.is_none()) {
        return Err(Error::Usage(format!("{}: sample {i} has no label", path.display())));
    }
    if features.is_empty() {
        return Err(Error::Usage(format!("{}: no samples", path.display())));
    }
    Ok(Examples::from_features(features)?)
}

/// Model configuration for a run over data with `data_classes` classes.
pub fn resolve_model(cfg: &mut RunConfig, n_classes_set: bool, data_classes: usize) -> Result<()> {
    if let Some(g) = cfg.group {
        let flags = ablation_config(g)?;
        cfg.model.use_convlstm = flags.use_convlstm;
        cfg.model.use_bilstm = flags.use_bilstm;
        cfg.model.use_transformer = flags.use_transformer;
    }
    if !n_classes_set {
        cfg.model.n_classes = data_classes;
    }
    Ok(cfg.model.validate()?)
}

fn write_report(dir: &Path, report: &MetricsReport, written: &mut Written) -> Result<()> {
    write_text(written.add(dir.join(REPORT_JSON)), &to_json(report))?;
    write_text(written.add(dir.join(REPORT_CSV)), &metrics_csv(report))
}

fn print_epoch(r: &EpochRecord) {
    let val = match (r.val_loss, r.val_acc) {
        (Some(l), Some(a)) => format!(" val_loss {l:.4} val_acc {a:.4}"),
        _ => String::new(),
    };
    println!("epoch {:>3} lr {:.1e} train_loss {:.4} train_acc {:.4}{val}", r.epoch, r.lr, r.train_loss, r.train_acc);
}

fn provenance(cfg: &RunConfig, command: &str, train_cfg: &devid_core::train::TrainConfig, outcome: Option<&TrainOutcome>) -> Provenance {
    Provenance {
        command: command.into(),
        seed: cfg.seed,
        features: cfg.paths.features.as_deref().map(display),
        parent: cfg.paths.checkpoint.as_deref().map(display),
        train: Some(train_cfg.clone()),
        best_epoch: outcome.map(|o| o.best_epoch),
        steps: outcome.map(|o| o.steps),
    }
}

/// Trains a model on a stratified split of the features and writes the
/// checkpoint, history, held-out test features and test metrics.
///
/// `n_classes_set` marks an explicit `model.n_classes`; otherwise the class
/// count comes from the labels.
pub fn train_cmd(cfg: &mut RunConfig, n_classes_set: bool, quiet: bool) -> Result<Written> {
    let path = required(&cfg.paths.features, "features")?.to_path_buf();
    let features = read_features(&path)?;
    let data = labeled_examples(&features, &path)?;
    resolve_model(cfg, n_classes_set, data.n_classes())?;
    cfg.train.validate()?;
    let dir = out_dir(cfg)?.to_path_buf();
    let mut written = Written::default();
    written.add(cfg.write_resolved(&dir)?);
    let mut model = DeviceIdModel::<f32>::build(cfg.model.clone(), cfg.seed)?;
    let result = train(&mut model, &data, &cfg.train, |r| {
        if !quiet {
            print_epoch(r)
        }
    });
    let ckpt = dir.join(CHECKPOINT_DIR);
    let run = match result {
        Ok(run) => run,
        Err(e @ devid_core::Error::Diverged { .. }) => {
            save_checkpoint(&ckpt, &model, provenance(cfg, "train", &cfg.train, None))?;
            return Err(Error::Failed(format!("{e}; last good parameters saved to {}", ckpt.display())));
        }
        Err(e) => return Err(e.into()),
    };
    save_checkpoint(&ckpt, &model, provenance(cfg, "train", &cfg.train, Some(&run.outcome)))?;
    written.add(ckpt);
    write_text(written.add(dir.join(HISTORY_CSV)), &history_csv(&run.outcome.history))?;
    let test: Vec<TandemFeature> = run.split.test.iter().map(|&i| features[i].clone()).collect();
    write_features(written.add(dir.join(TEST_FEATURES)), &test)?;
    if let Some(report) = &run.test {
        write_report(&dir, report, &mut written)?;
    }
    Ok(written)
}

/// Evaluates a checkpoint on labeled features.
pub fn eval_cmd(cfg: &RunConfig) -> Result<(Written, MetricsReport)> {
    let ckpt = required(&cfg.paths.checkpoint, "checkpoint")?;
    let path = required(&cfg.paths.features, "features")?;
    let (model, _) = load_checkpoint(ckpt)?;
    let features = read_features(path)?;
    let data = labeled_examples(&features, path)?;
    let n = model.config.n_classes;
    let report = evaluate(&model, &data, n, cfg.train.batch_size)?;
    let dir = out_dir(cfg)?;
    let mut written = Written::default();
    write_report(dir, &report, &mut written)?;
    written.add(cfg.write_resolved(dir)?);
    Ok((written, report))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferSummary {
    pub trainable: devid_core::train::Trainable,
    pub n_classes: usize,
    pub accuracy: f64,
    pub best_epoch: usize,
    pub frozen_checked: usize,
    pub frozen_unchanged: bool,
}

/// Fine-tunes a checkpoint on new features: the output layer is replaced
/// for the new class count and everything outside `transfer.trainable` is
/// frozen.
pub fn transfer_cmd(cfg: &mut RunConfig, n_classes_set: bool) -> Result<(Written, TransferSummary)> {
    let ckpt = required(&cfg.paths.checkpoint, "checkpoint")?.to_path_buf();
    let path = required(&cfg.paths.features, "features")?.to_path_buf();
    let (model, _) = load_checkpoint(&ckpt)?;
    let features = read_features(&path)?;
    let data = labeled_examples(&features, &path)?;
    let n_classes = if n_classes_set { cfg.model.n_classes } else { data.n_classes() };
    cfg.model = model.config.clone();
    cfg.model.n_classes = n_classes;
    let tc = cfg.transfer.train.clone();
    let split = stratified_split(&data.labels, tc.split, tc.seed)?;
    let (tr, va, te) = (data.subset(&split.train), data.subset(&split.val), data.subset(&split.test));
    let out = transfer_finetune(model, n_classes, cfg.transfer.trainable, &tr, &va, &te, &tc)?;
    let dir = out_dir(cfg)?.to_path_buf();
    let mut written = Written::default();
    written.add(cfg.write_resolved(&dir)?);
    let ck = dir.join(CHECKPOINT_DIR);
    save_checkpoint(&ck, &out.model, provenance(cfg, "transfer", &tc, Some(&out.outcome)))?;
    written.add(ck);
    write_text(written.add(dir.join(HISTORY_CSV)), &history_csv(&out.outcome.history))?;
    write_report(&dir, &out.report, &mut written)?;
    let summary = TransferSummary {
        trainable: cfg.transfer.trainable,
        n_classes,
        accuracy: out.report.accuracy,
        best_epoch: out.outcome.best_epoch,
        frozen_checked: out.frozen_checked,
        frozen_unchanged: out.frozen_unchanged,
    };
    write_text(written.add(dir.join(TRANSFER_JSON)), &to_json(&summary))?;
    if !summary.frozen_unchanged {
        return Err(Error::Failed("frozen parameters changed during fine-tuning".into()));
    }
    Ok((written, summary))
}

/// Round trips of the file formats on small random content.
pub fn format_checks(seed: u64) -> Vec<Check> {
    use crate::checkpoint::{decode_checkpoint, encode_checkpoint};
    use crate::ttf::{decode_features, encode_features};
    let mut checks = Vec::new();
    let mut state = seed ^ 0x5eed;
    let mut next = move || {
        state = devid_core::synth::mix_seed(state, 1, 2);
        f32::from_bits((state >> 32) as u32 & 0xbfff_ffff)
    };
    let feats: Vec<TandemFeature> = (0..5)
        .map(|i| TandemFeature::new(4, 3, (0..12).map(|_| next()).collect(), (i % 2 == 0).then_some(i)).expect("shape"))
        .collect();
    let ttf = encode_features(&feats).and_then(|b| decode_features(&b, Path::new("verify.ttf")).map(|d| (b, d)));
    checks.push(match ttf {
        Ok((bytes, back)) => {
            let diff = feats
                .iter()
                .zip(&back)
                .filter(|(a, b)| a.label != b.label || a.data.iter().zip(&b.data).any(|(x, y)| x.to_bits() != y.to_bits()))
                .count()
                + feats.len().abs_diff(back.len())
                + usize::from(encode_features(&back).ok().as_ref() != Some(&bytes));
            Check::exact("ttf1_round_trip", Category::Format, diff as f64, "5 samples, mixed labels")
        }
        Err(e) => Check::failed("ttf1_round_trip", Category::Format, e.to_string()),
    });
    let mut mcfg = ablation_config(4).expect("group 4");
    mcfg.input_frames = 8;
    mcfg.input_dims = 9;
    mcfg.convlstm[0].filters = 4;
    mcfg.convlstm[1].filters = 2;
    mcfg.bilstm_units = 8;
    mcfg.block_width = 4;
    mcfg.heads = 2;
    mcfg.head_dim = 4;
    mcfg.ff_units = 8;
    mcfg.mlp_units = 6;
    mcfg.n_classes = 3;
    let ck = DeviceIdModel::<f32>::build(mcfg, seed).map_err(Error::from).and_then(|model| {
        let (manifest, blob) = encode_checkpoint(&model, Provenance::default());
        let back = decode_checkpoint(&manifest, &blob, Path::new("verify"))?;
        let x = TandemFeature::new(8, 9, (0..72).map(|i| ((i * 31 % 17) as f32 - 8.0) / 8.0).collect(), None)?;
        let (a, b) = (model.logits(&[&x])?, back.logits(&[&x])?);
        let params = model
            .params
            .iter()
            .zip(back.params.iter())
            .filter(|((_, p), (_, q))| p.value.data().iter().zip(q.value.data()).any(|(x, y)| x.to_bits() != y.to_bits()))
            .count();
        let outputs = a.data().iter().zip(b.data()).filter(|(x, y)| x.to_bits() != y.to_bits()).count();
        Ok(params + outputs)
    });
    checks.push(match ck {
        Ok(diff) => Check::exact("checkpoint_round_trip", Category::Format, diff as f64, "parameters and logits bitwise"),
        Err(e) => Check::failed("checkpoint_round_trip", Category::Format, e.to_string()),
    });
    checks
}

/// Runs the full suite; fails when any check fails.
pub fn verify_cmd(cfg: &RunConfig, inject_fault: Option<&str>, oracle_cases: usize) -> Result<(Written, VerifyReport)> {
    if let Some(layer) = inject_fault {
        if !verify::GRADIENT_LAYERS.contains(&layer) {
            return Err(Error::Usage(format!(
                "unknown layer `{layer}` for --inject-fault; expected one of {}",
                verify::GRADIENT_LAYERS.join(", ")
            )));
        }
    }
    let opts = VerifyOptions {
        seed: cfg.seed,
        oracle_cases,
        inject_fault: inject_fault.map(String::from),
        ..VerifyOptions::default()
    };
    let mut report = verify::run(&opts);
    report.checks.extend(format_checks(cfg.seed));
    let mut written = Written::default();
    if let Some(dir) = cfg.paths.out.as_deref() {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
        write_text(written.add(dir.join(VERIFY_JSON)), &to_json(&report))?;
        written.add(cfg.write_resolved(dir)?);
    }
    Ok((written, report))
}
