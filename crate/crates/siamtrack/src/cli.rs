//! Command-line surface: synthetic data generation, training, tracking,
//! evaluation, ablation sweeps and gradient checking.
//!
//! Every command accepts `--profile {desk,paper}`, `--config <toml>`,
//! `--seed` and `--class`; `SIAMTRACK_SECTION__KEY=value` environment
//! variables override any config key. The effective config is echoed into
//! the output directory. Exit codes: 0 success, 2 config error, 3 data
//! error, 4 numeric failure, 1 anything else.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::{load_config, Profile, RunConfig};
use crate::dataio::synth::{load_synthetic_dir, write_synthetic_dir};
use crate::dataio::{build_tracklets, load_kitti_sequence, TrackingSequence};
use crate::error::{Error, Result};
use crate::eval::{ablation_sweep, evaluate, NetRunner, OPEReport, SweepTable};
use crate::model::load_checkpoint;
use crate::nn::Real;
use crate::tracker::{format_frame_result, track_sequence, NetAdapter};
use crate::train::{build_net, synthetic_eval_set, synthetic_training_set, train_model};
use crate::verify::run_all_checks;
use crate::xcorr::XcorrVariant;

#[derive(Parser, Debug)]
#[command(name = "siamtrack", version, about = "Siamese point-cloud single-object tracker")]
pub struct Cli {
    /// Built-in profile supplying all defaults.
    #[arg(long, global = true, default_value = "desk")]
    pub profile: String,

    /// TOML config overlaying the profile.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Master seed override.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Target class override: car, pedestrian, van or cyclist.
    #[arg(long, global = true)]
    pub class: Option<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate seeded synthetic sequences into an output directory.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// How many sequences to emit (default: the profile's train count).
        #[arg(long)]
        sequences: Option<usize>,
    },
    /// Train a model and write checkpoint plus per-epoch loss log.
    Train {
        #[arg(long)]
        out: PathBuf,
        /// Data source: "synthetic" or "kitti".
        #[arg(long, default_value = "synthetic")]
        data: String,
        /// Continue from an existing checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Override the configured epoch count.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Track one sequence and stream per-frame results.
    Track {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory produced by `synth`.
        #[arg(long)]
        synth_dir: Option<PathBuf>,
        /// KITTI tracking root (velodyne/, label_02/, calib/).
        #[arg(long)]
        kitti_root: Option<PathBuf>,
        /// Sequence index (synthetic) or KITTI sequence id.
        #[arg(long, default_value_t = 0)]
        sequence: usize,
        /// KITTI track id to follow.
        #[arg(long)]
        track_id: Option<i64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One-pass evaluation over a dataset; writes an OPE report.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Data source: "synthetic" or "kitti".
        #[arg(long, default_value = "synthetic")]
        data: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ablation sweep over one axis; writes a delimited table.
    Sweep {
        /// Axis: "xcorr", "d" (search margin) or "lambda".
        #[arg(long)]
        axis: String,
        /// Comma-separated values; defaults per axis.
        #[arg(long)]
        values: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// Reuse a trained checkpoint (d-axis only; other axes retrain).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Finite-difference checks over every differentiable component.
    Gradcheck,
}

/// Map an error to the documented process exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Data { .. } | Error::Io(_) | Error::Checkpoint(_) | Error::EmptyCloud(_) | Error::TrackerInit(_) => 3,
        Error::NonFinite(_) | Error::ShapeMismatch { .. } | Error::Geometry(_) => 4,
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let profile: Profile = cli.profile.parse()?;
    let mut cfg = load_config(profile, cli.config.as_deref(), std::env::vars())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(class) = &cli.class {
        cfg.class = class.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Materialize KITTI tracklet sequences for the configured class.
fn kitti_sequences(cfg: &RunConfig, ids: &[usize]) -> Result<Vec<TrackingSequence>> {
    let root = cfg.data.kitti_root.as_ref().ok_or_else(|| {
        Error::Config("data.kitti_root is not set; point it at the KITTI tracking root".into())
    })?;
    let mut sequences = Vec::new();
    for &id in ids {
        let seq = load_kitti_sequence(root, id)?;
        let tracklets = build_tracklets(&seq.labels, Some(&cfg.class), &seq.velo_to_cam)?;
        for tracklet in &tracklets {
            sequences.push(seq.tracklet_sequence(tracklet)?);
        }
    }
    if sequences.is_empty() {
        return Err(Error::Data {
            path: root.clone(),
            reason: format!("no {} tracklets in sequences {ids:?}", cfg.class),
        });
    }
    Ok(sequences)
}

fn training_data(cfg: &RunConfig, source: &str) -> Result<Vec<TrackingSequence>> {
    match source {
        "synthetic" => synthetic_training_set(cfg),
        "kitti" => kitti_sequences(cfg, &cfg.data.kitti_train_sequences.clone()),
        other => Err(Error::Config(format!("unknown data source {other:?} (synthetic or kitti)"))),
    }
}

fn eval_data(cfg: &RunConfig, source: &str) -> Result<Vec<TrackingSequence>> {
    match source {
        "synthetic" => synthetic_eval_set(cfg),
        "kitti" => kitti_sequences(cfg, &cfg.data.kitti_test_sequences.clone()),
        other => Err(Error::Config(format!("unknown data source {other:?} (synthetic or kitti)"))),
    }
}

fn eval_with_checkpoint<T: Real>(
    cfg: &RunConfig,
    checkpoint: &Path,
    sequences: &[TrackingSequence],
) -> Result<OPEReport> {
    let mut net = build_net::<T>(cfg)?;
    load_checkpoint(&mut net, checkpoint)?;
    let mut runner = NetRunner {
        net: &net,
        cfg: cfg.tracker_config(),
        anchor: cfg.anchor()?,
        bins: cfg.bins,
    };
    evaluate(&mut runner, sequences, &cfg.metrics)
}

fn cmd_synth(cfg: &RunConfig, out: &Path, sequences: Option<usize>) -> Result<()> {
    let n = sequences.unwrap_or(cfg.synth.train_sequences);
    let seqs: Vec<TrackingSequence> = (0..n as u64)
        .map(|i| {
            let scene = crate::dataio::synth::SyntheticSceneConfig {
                seed: cfg.synth.scene.seed + i,
                ..cfg.synth.scene.clone()
            };
            crate::dataio::synth::generate_synthetic(&scene)
        })
        .collect::<Result<_>>()?;
    write_synthetic_dir(out, &cfg.synth.scene, &seqs)?;
    cfg.echo_into(out)?;
    println!("wrote {n} sequences to {}", out.display());
    Ok(())
}

fn cmd_train(cfg: &RunConfig, out: &Path, data: &str, resume: Option<&Path>, epochs: Option<usize>) -> Result<()> {
    let sequences = training_data(cfg, data)?;
    cfg.echo_into(out)?;
    let outcome = match cfg.dtype.as_str() {
        "f64" => train_model::<f64>(cfg, &sequences, out, resume, epochs)?.1,
        _ => train_model::<f32>(cfg, &sequences, out, resume, epochs)?.1,
    };
    let first = outcome.losses.first().map(|l| l.total).unwrap_or(f64::NAN);
    let last = outcome.losses.last().map(|l| l.total).unwrap_or(f64::NAN);
    println!(
        "trained epochs {}..{} on {} sequences: total loss {first:.4} -> {last:.4}\ncheckpoint: {}",
        outcome.first_epoch + 1,
        outcome.final_epoch,
        sequences.len(),
        outcome.checkpoint.display()
    );
    Ok(())
}

fn cmd_track<T: Real>(
    cfg: &RunConfig,
    checkpoint: &Path,
    synth_dir: Option<&Path>,
    kitti_root: Option<&Path>,
    sequence: usize,
    track_id: Option<i64>,
    out: Option<&Path>,
) -> Result<()> {
    let seq: TrackingSequence = match (synth_dir, kitti_root) {
        (Some(dir), None) => {
            let mut all = load_synthetic_dir(dir)?;
            if sequence >= all.len() {
                return Err(Error::Data {
                    path: dir.into(),
                    reason: format!("sequence {sequence} out of range ({} available)", all.len()),
                });
            }
            all.swap_remove(sequence)
        }
        (None, Some(root)) => {
            let kitti = load_kitti_sequence(root, sequence)?;
            let tracklets = build_tracklets(&kitti.labels, Some(&cfg.class), &kitti.velo_to_cam)?;
            let tracklet = match track_id {
                Some(id) => tracklets
                    .iter()
                    .find(|t| t.track_id == id)
                    .ok_or_else(|| Error::Data {
                        path: root.into(),
                        reason: format!("track id {id} not found in sequence {sequence}"),
                    })?,
                None => tracklets.first().ok_or_else(|| Error::Data {
                    path: root.into(),
                    reason: format!("no {} tracklets in sequence {sequence}", cfg.class),
                })?,
            };
            kitti.tracklet_sequence(tracklet)?
        }
        _ => {
            return Err(Error::Config(
                "pass exactly one of --synth-dir or --kitti-root".into(),
            ))
        }
    };

    let mut net = build_net::<T>(cfg)?;
    load_checkpoint(&mut net, checkpoint)?;
    let mut adapter = NetAdapter::new(&net, cfg.seed);
    let clouds: Vec<_> = seq.frames.iter().map(|f| f.cloud.clone()).collect();
    let results = track_sequence(
        &mut adapter,
        cfg.tracker_config(),
        cfg.anchor()?,
        cfg.bins,
        &clouds,
        &seq.frames[0].gt,
    )?;
    let mut lines = String::new();
    for r in &results {
        let row = format_frame_result(r);
        println!("{row}");
        lines.push_str(&row);
        lines.push('\n');
    }
    if let Some(out) = out {
        std::fs::create_dir_all(out)?;
        std::fs::write(out.join("track.txt"), lines)?;
        cfg.echo_into(out)?;
    }
    Ok(())
}

fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, data: &str, out: &Path) -> Result<()> {
    let sequences = eval_data(cfg, data)?;
    let report = match cfg.dtype.as_str() {
        "f64" => eval_with_checkpoint::<f64>(cfg, checkpoint, &sequences)?,
        _ => eval_with_checkpoint::<f32>(cfg, checkpoint, &sequences)?,
    };
    cfg.echo_into(out)?;
    std::fs::write(out.join("report.txt"), report.human_table())?;
    std::fs::write(
        out.join("report.tsv"),
        format!(
            "success_3d\tprecision_3d\tsuccess_bev\tprecision_bev\tframes\tpre_ms\tinfer_ms\tpost_ms\n{}\n",
            report.machine_row()
        ),
    )?;
    println!("{}", report.human_table());
    Ok(())
}

/// Train-and-evaluate one sweep cell with a value-modified config.
fn sweep_cell(cfg: &RunConfig, out: &Path, label: &str) -> Result<OPEReport> {
    let cell_dir = out.join(format!("cell_{label}"));
    let train_set = synthetic_training_set(cfg)?;
    let eval_set = synthetic_eval_set(cfg)?;
    match cfg.dtype.as_str() {
        "f64" => {
            let (net, _) = train_model::<f64>(cfg, &train_set, &cell_dir, None, None)?;
            let mut runner = NetRunner { net: &net, cfg: cfg.tracker_config(), anchor: cfg.anchor()?, bins: cfg.bins };
            evaluate(&mut runner, &eval_set, &cfg.metrics)
        }
        _ => {
            let (net, _) = train_model::<f32>(cfg, &train_set, &cell_dir, None, None)?;
            let mut runner = NetRunner { net: &net, cfg: cfg.tracker_config(), anchor: cfg.anchor()?, bins: cfg.bins };
            evaluate(&mut runner, &eval_set, &cfg.metrics)
        }
    }
}

pub fn default_sweep_values(axis: &str) -> Result<Vec<String>> {
    match axis {
        "xcorr" => Ok(XcorrVariant::ALL.iter().map(|v| v.key().to_string()).collect()),
        "d" => Ok(["0.5", "1.0", "1.5", "2.0"].iter().map(|s| s.to_string()).collect()),
        "lambda" => Ok(["0.1", "0.5", "1.0", "5.0", "10.0", "20.0"].iter().map(|s| s.to_string()).collect()),
        other => Err(Error::Config(format!("unknown sweep axis {other:?} (xcorr, d or lambda)"))),
    }
}

/// Run a sweep. The xcorr and lambda axes retrain per value (they change
/// the objective or the fused features the heads are trained on); the d
/// axis is inference-only and reuses one set of weights.
pub fn run_sweep(
    cfg: &RunConfig,
    axis: &str,
    values: &[String],
    out: &Path,
    checkpoint: Option<&Path>,
) -> Result<SweepTable> {
    std::fs::create_dir_all(out)?;
    cfg.echo_into(out)?;
    let table = match axis {
        "xcorr" => ablation_sweep(axis, values, |v| {
            let mut cell_cfg = cfg.clone();
            cell_cfg.xcorr = XcorrVariant::parse(v)?;
            sweep_cell(&cell_cfg, out, v)
        })?,
        "lambda" => ablation_sweep(axis, values, |v| {
            let mut cell_cfg = cfg.clone();
            cell_cfg.loss.lambda = v
                .parse()
                .map_err(|e| Error::Config(format!("lambda value {v:?}: {e}")))?;
            sweep_cell(&cell_cfg, out, v)
        })?,
        "d" => {
            // Inference-time axis: train once (or reuse the provided
            // checkpoint), then evaluate per margin.
            let eval_set = synthetic_eval_set(cfg)?;
            let base_ckpt: PathBuf = match checkpoint {
                Some(p) => p.to_path_buf(),
                None => {
                    let train_set = synthetic_training_set(cfg)?;
                    match cfg.dtype.as_str() {
                        "f64" => train_model::<f64>(cfg, &train_set, &out.join("base"), None, None)?.1.checkpoint,
                        _ => train_model::<f32>(cfg, &train_set, &out.join("base"), None, None)?.1.checkpoint,
                    }
                }
            };
            ablation_sweep(axis, values, |v| {
                let mut cell_cfg = cfg.clone();
                cell_cfg.tracker.search_margin = Some(
                    v.parse()
                        .map_err(|e| Error::Config(format!("margin value {v:?}: {e}")))?,
                );
                match cell_cfg.dtype.as_str() {
                    "f64" => eval_with_checkpoint::<f64>(&cell_cfg, &base_ckpt, &eval_set),
                    _ => eval_with_checkpoint::<f32>(&cell_cfg, &base_ckpt, &eval_set),
                }
            })?
        }
        other => return Err(Error::Config(format!("unknown sweep axis {other:?}"))),
    };
    std::fs::write(out.join(format!("sweep_{axis}.tsv")), table.delimited())?;
    Ok(table)
}

fn cmd_gradcheck() -> Result<()> {
    let rows = run_all_checks()?;
    let mut failed = false;
    println!("{:<24} {:>14} {:>10}  status", "component", "max_rel_err", "tolerance");
    for row in &rows {
        let ok = row.passed();
        failed |= !ok;
        println!(
            "{:<24} {:>14.3e} {:>10.0e}  {}",
            row.name,
            row.max_rel_err,
            row.tolerance,
            if ok { "pass" } else { "FAIL" }
        );
    }
    if failed {
        return Err(Error::NonFinite("gradient check failed".into()));
    }
    Ok(())
}

/// Execute a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli)?;
    match &cli.command {
        Command::Synth { out, sequences } => cmd_synth(&cfg, out, *sequences),
        Command::Train { out, data, resume, epochs } => {
            cmd_train(&cfg, out, data, resume.as_deref(), *epochs)
        }
        Command::Track { checkpoint, synth_dir, kitti_root, sequence, track_id, out } => {
            match cfg.dtype.as_str() {
                "f64" => cmd_track::<f64>(
                    &cfg,
                    checkpoint,
                    synth_dir.as_deref(),
                    kitti_root.as_deref(),
                    *sequence,
                    *track_id,
                    out.as_deref(),
                ),
                _ => cmd_track::<f32>(
                    &cfg,
                    checkpoint,
                    synth_dir.as_deref(),
                    kitti_root.as_deref(),
                    *sequence,
                    *track_id,
                    out.as_deref(),
                ),
            }
        }
        Command::Eval { checkpoint, data, out } => cmd_eval(&cfg, checkpoint, data, out),
        Command::Sweep { axis, values, out, checkpoint } => {
            let values = match values {
                Some(list) => list.split(',').map(|s| s.trim().to_string()).collect(),
                None => default_sweep_values(axis)?,
            };
            let table = run_sweep(&cfg, axis, &values, out, checkpoint.as_deref())?;
            print!("{}", table.delimited());
            Ok(())
        }
        Command::Gradcheck => cmd_gradcheck(),
    }
}
