//! The `skelfall` command line: ingest, train, eval, bench, gradcheck and
//! report.
//!
//! Every subcommand reads the run configuration from `--config` (defaults
//! when absent); `--seed` and `--out` override the file. `--format machine`
//! prints one JSON document instead of text.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::archive::ClipArchive;
use crate::audit::{gradient_audit, GRAD_TOLERANCE};
use crate::autodiff::Tensor;
use crate::bench::{benchmark_pair, welch_t_test};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::layers::{septcn_flops, TemporalKind, TEMPORAL_KERNEL};
use crate::metrics::metrics;
use crate::model::{count_flops, count_parameters, derive_seed, ModelConfig, ThreeStreamModel};
use crate::skeleton::{
    drop_invalid_frames, load_sequences, normalize_clip, split_dataset, window_sequence, DatasetManifest, JointLayout,
    SkeletonClip,
};
use crate::synthetic;
use crate::train::{evaluate, train_with};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Text,
    Machine,
}

#[derive(Debug, Parser)]
#[command(
    name = "skelfall",
    version,
    about = "Skeleton-based fall detection with a three-stream GSTCN"
)]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Window and normalize the sequences listed in a manifest into a clip archive.
    Ingest {
        #[arg(long)]
        manifest: PathBuf,
        /// Layout name or TOML path; defaults to the configured layout.
        #[arg(long)]
        layout: Option<String>,
    },
    /// Train on the configured data; writes a checkpoint, history and the held-out clips.
    Train,
    /// Evaluate a checkpoint on a clip archive.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        clips: PathBuf,
    },
    /// Time forward passes of the separable and dense-temporal variants.
    Bench {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 30)]
        n: usize,
        #[arg(long, default_value_t = 5)]
        warmup: usize,
    },
    /// Finite-difference gradient check of every layer and the tiny model.
    Gradcheck,
    /// Parameter and multiply-count accounting, separable vs dense temporal convolution.
    Report {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

impl Cli {
    pub fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        Ok(cfg)
    }
}

/// Runs one command, writing its report to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let cfg = cli.run_config()?;
    let text = match &cli.command {
        Command::Ingest { manifest, layout } => ingest(&cfg, manifest, layout.as_deref(), cli.format)?,
        Command::Train => train_cmd(&cfg, cli.format, out)?,
        Command::Eval { checkpoint, clips } => eval(&cfg, checkpoint, clips, cli.format)?,
        Command::Bench { checkpoint, n, warmup } => bench(&cfg, checkpoint.as_deref(), *n, *warmup, cli.format)?,
        Command::Gradcheck => gradcheck(&cfg, cli.format)?,
        Command::Report { checkpoint } => report(&cfg, checkpoint.as_deref(), cli.format)?,
    };
    out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn machine(value: serde_json::Value) -> String {
    format!("{}\n", serde_json::to_string_pretty(&value).expect("json"))
}

#[derive(Default)]
struct LabelSummary {
    sequences: usize,
    frames: usize,
    dropped: usize,
    clips: usize,
}

fn ingest(cfg: &RunConfig, manifest_path: &Path, layout: Option<&str>, format: Format) -> Result<String> {
    let layout = match layout {
        Some(name) => JointLayout::resolve(name)?,
        None => cfg.layout()?,
    };
    let manifest = DatasetManifest::load(manifest_path, layout.name.clone())?;
    let sequences = load_sequences(&manifest, &layout)?;
    let mut summary: BTreeMap<usize, LabelSummary> = BTreeMap::new();
    let mut clips = Vec::new();
    for (seq, entry) in sequences.into_iter().zip(&manifest.entries) {
        let row = summary.entry(seq.label).or_default();
        row.sequences += 1;
        row.frames += seq.frames.len();
        let before = seq.frames.len();
        let seq = drop_invalid_frames(seq);
        row.dropped += before - seq.frames.len();
        if seq.frames.is_empty() {
            return Err(Error::Parse {
                path: entry.path.clone(),
                line: 1,
                message: format!("sequence `{}` has no valid frames", seq.id),
            });
        }
        let windows = window_sequence(&seq, cfg.model.clip_len, cfg.data.stride)?;
        row.clips += windows.len();
        clips.extend(windows.iter().map(|c| normalize_clip(c, &layout)));
    }
    let archive = ClipArchive::new(layout.name.clone(), manifest.class_names.clone(), &clips)?;
    create_out(&cfg.out)?;
    let path = cfg.out.join("clips.json");
    archive.save(&path)?;

    let rows: Vec<(String, &LabelSummary)> = summary
        .iter()
        .map(|(l, s)| (manifest.class_names[*l].clone(), s))
        .collect();
    Ok(match format {
        Format::Machine => machine(json!({
            "archive": path,
            "labels": rows.iter().map(|(name, s)| json!({
                "label": name, "sequences": s.sequences, "frames": s.frames,
                "dropped_frames": s.dropped, "clips": s.clips,
            })).collect::<Vec<_>>(),
        })),
        Format::Text => {
            let mut t = String::new();
            let _ = writeln!(
                t,
                "{:<12} {:>9} {:>8} {:>8} {:>6}",
                "label", "sequences", "frames", "dropped", "clips"
            );
            for (name, s) in &rows {
                let _ = writeln!(
                    t,
                    "{name:<12} {:>9} {:>8} {:>8} {:>6}",
                    s.sequences, s.frames, s.dropped, s.clips
                );
            }
            let _ = writeln!(t, "wrote {} clips to {}", archive.len(), path.display());
            t
        }
    })
}

/// Train/validation clips and class names for the configured data source.
pub fn load_training_data(cfg: &RunConfig) -> Result<(Vec<SkeletonClip>, Vec<SkeletonClip>, ModelConfig, Vec<String>)> {
    match &cfg.data.archive {
        Some(path) => {
            let archive = ClipArchive::load(path)?;
            let mut run = cfg.clone();
            if archive.layout != cfg.layout()?.name {
                return Err(Error::Config(format!(
                    "archive layout `{}` does not match configured layout `{}`",
                    archive.layout, cfg.model.layout
                )));
            }
            run.model.dims = archive.dims;
            run.model.clip_len = archive.clip_len;
            let model = run.model_config(archive.class_names.len())?;
            let split_seed = derive_seed(&[cfg.seed, 0x73706c6974]);
            let (train, test) = split_dataset(archive.clips()?, cfg.data.train_fraction, split_seed)?;
            Ok((train, test, model, archive.class_names.clone()))
        }
        None => {
            let (train, test) = synthetic::train_test(
                &cfg.synthetic(),
                cfg.data.synthetic_train,
                cfg.data.synthetic_test,
                cfg.data.synthetic_seed,
            );
            let mut run = cfg.clone();
            run.model.layout = "coco18".into();
            run.model.dims = 2;
            Ok((train, test, run.model_config(2)?, synthetic::class_names()))
        }
    }
}

fn train_cmd(cfg: &RunConfig, format: Format, out: &mut dyn Write) -> Result<String> {
    let (train_set, val_set, model_cfg, class_names) = load_training_data(cfg)?;
    let mut model = ThreeStreamModel::new(model_cfg, cfg.init_seed())?;
    let hp = cfg.hyperparams();
    let history = if hp.epochs == 0 {
        Default::default()
    } else {
        train_with(&mut model, &train_set, &val_set, &hp, |r| {
            if format == Format::Text {
                let _ = writeln!(
                    out,
                    "epoch {:>3}  train_loss {:.6}  val_accuracy {:.2}",
                    r.epoch, r.train_loss, r.val_accuracy
                );
            }
        })?
    };
    create_out(&cfg.out)?;
    let checkpoint = cfg.out.join("model.ckpt");
    model.save(&checkpoint)?;
    write_file(&cfg.out.join("history.csv"), &history.to_csv())?;
    let held_out = ClipArchive::new(model.config().layout.name.clone(), class_names, &val_set)?;
    held_out.save(&cfg.out.join("test_clips.json"))?;
    write_file(&cfg.out.join("config.toml"), &cfg.to_toml())?;

    let last = history.last().copied();
    Ok(match format {
        Format::Machine => machine(json!({
            "checkpoint": checkpoint,
            "parameters": count_parameters(&model),
            "history": history.epochs,
            "final_train_loss": last.map(|r| r.train_loss),
            "final_val_accuracy": last.map(|r| r.val_accuracy),
        })),
        Format::Text => {
            let mut t = String::new();
            match last {
                Some(r) => {
                    let _ = writeln!(
                        t,
                        "final val accuracy {:.2}% (train loss {:.6})",
                        r.val_accuracy, r.train_loss
                    );
                }
                None => {
                    let _ = writeln!(t, "no epochs run; saved initialized weights");
                }
            }
            let _ = writeln!(t, "checkpoint {}", checkpoint.display());
            t
        }
    })
}

fn eval(cfg: &RunConfig, checkpoint: &Path, clips: &Path, format: Format) -> Result<String> {
    let model = ThreeStreamModel::load(checkpoint)?;
    let archive = ClipArchive::load(clips)?;
    let mc = model.config();
    if archive.layout != mc.layout.name {
        return Err(Error::Config(format!(
            "archive layout `{}` does not match checkpoint layout `{}`",
            archive.layout, mc.layout.name
        )));
    }
    if [archive.dims, archive.clip_len, archive.joint_count] != mc.input_shape() {
        return Err(Error::Config(format!(
            "archive clips are {:?}, checkpoint expects {:?}",
            [archive.dims, archive.clip_len, archive.joint_count],
            mc.input_shape()
        )));
    }
    if archive.class_names.len() != mc.num_classes {
        return Err(Error::Config(format!(
            "archive has {} classes, checkpoint has {}",
            archive.class_names.len(),
            mc.num_classes
        )));
    }
    let cm = evaluate(&model, &archive.clips()?)?;
    let report = metrics(&cm, &archive.class_names)?;
    create_out(&cfg.out)?;
    write_file(&cfg.out.join("metrics.json"), &report.to_json())?;
    write_file(&cfg.out.join("metrics.txt"), &report.to_table())?;
    Ok(match format {
        Format::Machine => machine(json!({ "confusion_matrix": cm.counts(), "metrics": report })),
        Format::Text => report.to_table(),
    })
}

fn variant(cfg: &ModelConfig, kind: TemporalKind) -> ModelConfig {
    ModelConfig {
        temporal: kind,
        ..cfg.clone()
    }
}

fn base_model(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<ThreeStreamModel> {
    match checkpoint {
        Some(path) => ThreeStreamModel::load(path),
        None => ThreeStreamModel::new(cfg.model_config(2)?, cfg.init_seed()),
    }
}

fn bench(cfg: &RunConfig, checkpoint: Option<&Path>, n: usize, warmup: usize, format: Format) -> Result<String> {
    let base = base_model(cfg, checkpoint)?;
    let build = |kind: TemporalKind| -> Result<ThreeStreamModel> {
        if base.config().temporal == kind {
            Ok(base.clone())
        } else {
            ThreeStreamModel::new(variant(base.config(), kind), cfg.init_seed())
        }
    };
    let (sep, dense) = (build(TemporalKind::Separable)?, build(TemporalKind::Dense)?);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, 0x6265]));
    let clip = Tensor::randn(&base.config().input_shape(), 1.0, &mut rng);
    let (a, b) = benchmark_pair(&sep, &dense, &clip, warmup, n)?;
    let welch = welch_t_test(&a.samples_ms, &b.samples_ms)?;
    let frames = base.config().clip_len;
    let (fa, fb) = (
        count_flops(sep.config(), frames).total(),
        count_flops(dense.config(), frames).total(),
    );
    Ok(match format {
        Format::Machine => machine(json!({
            "samples": n,
            "separable": { "mean_ms": a.mean_ms, "std_ms": a.std_ms, "flops": fa, "samples_ms": a.samples_ms },
            "dense": { "mean_ms": b.mean_ms, "std_ms": b.std_ms, "flops": fb, "samples_ms": b.samples_ms },
            "welch": welch,
        })),
        Format::Text => {
            let mut t = String::new();
            let _ = writeln!(
                t,
                "{:<24} {:>10} {:>19} {:>14}",
                "Model", "Mean [ms]", "Standard Deviation", "FLOPs"
            );
            let _ = writeln!(
                t,
                "{:<24} {:>10.3} {:>19.3} {:>14}",
                "GSTCN (Sep-TCN)", a.mean_ms, a.std_ms, fa
            );
            let _ = writeln!(
                t,
                "{:<24} {:>10.3} {:>19.3} {:>14}",
                "GSTCN (dense TCN)", b.mean_ms, b.std_ms, fb
            );
            let _ = writeln!(t, "samples per variant: {n} (warmup {warmup}, interleaved)");
            let _ = writeln!(
                t,
                "Welch t = {:.4}, df = {:.2} (separable minus dense)",
                welch.t, welch.df
            );
            t
        }
    })
}

fn gradcheck(cfg: &RunConfig, format: Format) -> Result<String> {
    let checks = gradient_audit(cfg.seed)?;
    let failed: Vec<&str> = checks
        .iter()
        .filter(|c| !c.passed())
        .map(|c| c.module.as_str())
        .collect();
    let text = match format {
        Format::Machine => machine(json!({ "tolerance": GRAD_TOLERANCE, "modules": checks })),
        Format::Text => {
            let mut t = String::new();
            let _ = writeln!(t, "{:<32} {:>10} {:>14}", "module", "params", "max rel error");
            for c in &checks {
                let verdict = if c.passed() { "ok" } else { "FAIL" };
                let _ = writeln!(
                    t,
                    "{:<32} {:>10} {:>14.3e}  {verdict}",
                    c.module, c.parameters, c.max_rel_error
                );
            }
            t
        }
    };
    if failed.is_empty() {
        Ok(text)
    } else {
        Err(Error::invalid(format!(
            "{text}gradient check failed (tolerance {GRAD_TOLERANCE:e}) for: {}",
            failed.join(", ")
        )))
    }
}

fn report(cfg: &RunConfig, checkpoint: Option<&Path>, format: Format) -> Result<String> {
    let base = base_model(cfg, checkpoint)?;
    let frames = base.config().clip_len;
    let rows: Vec<(TemporalKind, usize, crate::model::FlopCount)> = [TemporalKind::Separable, TemporalKind::Dense]
        .into_iter()
        .map(|kind| {
            let c = variant(base.config(), kind);
            let params = ThreeStreamModel::new(c.clone(), 0).map(|m| count_parameters(&m))?;
            Ok((kind, params, count_flops(&c, frames)))
        })
        .collect::<Result<_>>()?;
    let per_position: Vec<(usize, u64, u64)> = base
        .config()
        .channels
        .iter()
        .map(|&c| {
            let (sep, dense) = septcn_flops(c, c, 1, 1, TEMPORAL_KERNEL);
            (c, sep, dense)
        })
        .collect();
    Ok(match format {
        Format::Machine => machine(json!({
            "frames": frames,
            "joints": base.config().joint_count(),
            "variants": rows.iter().map(|(k, p, f)| json!({
                "temporal": k, "parameters": p, "flops": f, "total_flops": f.total(),
            })).collect::<Vec<_>>(),
            "temporal_multiplies_per_position": per_position.iter().map(|(c, sep, dense)| json!({
                "channels": c, "separable": sep, "dense": dense,
            })).collect::<Vec<_>>(),
        })),
        Format::Text => {
            let mut t = String::new();
            let _ = writeln!(
                t,
                "clip {:?}, channels {:?}",
                base.config().input_shape(),
                base.config().channels
            );
            let _ = writeln!(
                t,
                "{:<10} {:>11} {:>13} {:>13} {:>11} {:>9} {:>8} {:>13}",
                "temporal", "parameters", "graph conv", "temporal", "residual", "skip", "head", "total"
            );
            for (k, p, f) in &rows {
                let name = match k {
                    TemporalKind::Separable => "separable",
                    TemporalKind::Dense => "dense",
                };
                let _ = writeln!(
                    t,
                    "{name:<10} {p:>11} {:>13} {:>13} {:>11} {:>9} {:>8} {:>13}",
                    f.graph_conv,
                    f.temporal,
                    f.residual,
                    f.skip,
                    f.head,
                    f.total()
                );
            }
            for (c, sep, dense) in &per_position {
                let _ = writeln!(
                    t,
                    "temporal multiplies per output position at {c} channels: {sep} vs {dense} ({:.2}x)",
                    *dense as f64 / *sep as f64
                );
            }
            t
        }
    })
}
