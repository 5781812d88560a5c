//! Command-line front end.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use devid_core::train::Trainable;

use crate::commands::{self, Written};
use crate::config::{Loaded, RunConfig};
use crate::{Error, Result};

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice in the run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for extraction, evaluation and matrix products.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Output classes; defaults to the number of classes in the labels.
    #[arg(long)]
    pub classes: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic multi-device corpus of WAV files.
    Synth {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        devices: Option<usize>,
        #[arg(long)]
        clips: Option<usize>,
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        sample_rate: Option<u32>,
    },
    /// Extract tandem features for every clip of a corpus manifest.
    Extract {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model on labeled features.
    Train {
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Ablation group 1..=7.
        #[arg(long)]
        group: Option<u8>,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Evaluate a checkpoint on labeled features.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fine-tune a checkpoint's head on a new labeled feature set.
    Transfer {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// `head` or `mlp+head`.
        #[arg(long)]
        trainable: Option<Trainable>,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Run gradient checks, formula oracles, shape traces and format round trips.
    Verify {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Double the analytic gradient of this layer.
        #[arg(long)]
        inject_fault: Option<String>,
        /// Random cases per formula oracle.
        #[arg(long, default_value_t = 100)]
        oracle_cases: usize,
    },
}

#[derive(Debug, Parser)]
#[command(name = "devid", version, about = "Recording-device identification from audio")]
struct Invocation {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn set_path(slot: &mut Option<PathBuf>, flag: Option<PathBuf>) {
    if flag.is_some() {
        *slot = flag;
    }
}

fn apply_train(tc: &mut devid_core::train::TrainConfig, flags: &TrainFlags) {
    set(&mut tc.epochs, flags.epochs);
    set(&mut tc.lr, flags.lr);
    set(&mut tc.batch_size, flags.batch_size);
}

fn report_written(w: &Written) {
    for f in &w.files {
        println!("wrote {}", f.display());
    }
}

/// Parses `args`, runs the command and maps the outcome to an exit code.
pub fn run<I, S>(args: I) -> ExitCode
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let inv = match Invocation::try_parse_from(args) {
        Ok(inv) => inv,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(inv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(inv: Invocation) -> Result<()> {
    let Loaded { config: mut cfg, mut n_classes_set } = match &inv.common.config {
        Some(path) => RunConfig::load(path)?,
        None => Loaded::default(),
    };
    set(&mut cfg.seed, inv.common.seed);
    set(&mut cfg.threads, inv.common.threads);
    cfg.propagate_seed();
    if cfg.threads == 0 {
        return Err(Error::Usage("--threads must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build_global()
        .map_err(|e| Error::Failed(format!("thread pool: {e}")))?;
    match inv.command {
        Command::Synth { out, devices, clips, duration, sample_rate } => {
            set_path(&mut cfg.paths.out, out);
            set(&mut cfg.synth.n_devices, devices);
            set(&mut cfg.synth.clips_per_device, clips);
            set(&mut cfg.synth.clip_duration_s, duration);
            set(&mut cfg.synth.sample_rate, sample_rate);
            let w = commands::synth(&cfg)?;
            println!("rendered {} clips", cfg.synth.n_devices * cfg.synth.clips_per_device);
            println!("wrote {}", w.files[w.files.len() - 3].display());
        }
        Command::Extract { corpus, out } => {
            set_path(&mut cfg.paths.corpus, corpus);
            set_path(&mut cfg.paths.out, out);
            report_written(&commands::extract(&cfg)?);
        }
        Command::Train { features, out, group, train } => {
            set_path(&mut cfg.paths.features, features);
            set_path(&mut cfg.paths.out, out);
            if group.is_some() {
                cfg.group = group;
            }
            apply_train(&mut cfg.train, &train);
            if let Some(k) = train.classes {
                cfg.model.n_classes = k;
                n_classes_set = true;
            }
            report_written(&commands::train_cmd(&mut cfg, n_classes_set, false)?);
        }
        Command::Eval { checkpoint, features, out } => {
            set_path(&mut cfg.paths.checkpoint, checkpoint);
            set_path(&mut cfg.paths.features, features);
            set_path(&mut cfg.paths.out, out);
            let (w, report) = commands::eval_cmd(&cfg)?;
            println!("accuracy {:.4} on {} samples", report.accuracy, report.total);
            report_written(&w);
        }
        Command::Transfer { checkpoint, features, out, trainable, train } => {
            set_path(&mut cfg.paths.checkpoint, checkpoint);
            set_path(&mut cfg.paths.features, features);
            set_path(&mut cfg.paths.out, out);
            set(&mut cfg.transfer.trainable, trainable);
            apply_train(&mut cfg.transfer.train, &train);
            if let Some(k) = train.classes {
                cfg.model.n_classes = k;
                n_classes_set = true;
            }
            let (w, s) = commands::transfer_cmd(&mut cfg, n_classes_set)?;
            println!(
                "accuracy {:.4}; {} frozen tensors {}",
                s.accuracy,
                s.frozen_checked,
                if s.frozen_unchanged { "bit-identical" } else { "CHANGED" }
            );
            report_written(&w);
        }
        Command::Verify { out, inject_fault, oracle_cases } => {
            set_path(&mut cfg.paths.out, out);
            let (w, report) = commands::verify_cmd(&cfg, inject_fault.as_deref(), oracle_cases)?;
            for c in &report.checks {
                println!(
                    "{} {:<28} {:<8} measured {:.3e} threshold {:.1e}  {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    format!("{:?}", c.category).to_lowercase(),
                    c.measured,
                    c.threshold,
                    c.detail
                );
            }
            report_written(&w);
            let failed: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
            if !failed.is_empty() {
                return Err(Error::Failed(format!("{} check(s) failed: {}", failed.len(), failed.join(", "))));
            }
            println!("all {} checks passed", report.checks.len());
        }
    }
    Ok(())
}
