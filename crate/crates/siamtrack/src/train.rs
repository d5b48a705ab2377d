//! Training loop: Adam over template/search pairs sampled from tracked
//! sequences, with per-epoch loss logging and checkpointing.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::dataio::pairs::sample_training_pair;
use crate::dataio::synth::generate_synthetic;
use crate::dataio::TrackingSequence;
use crate::error::{Error, Result};
use crate::loss::{total_loss, FocalParams, LossBreakdown};
use crate::model::{load_checkpoint, save_checkpoint, TrackNet};
use crate::nn::{Adam, AdamConfig, ParamSet, Real};

pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    /// Mean loss breakdown per epoch, in training order.
    pub losses: Vec<LossBreakdown>,
    pub first_epoch: u64,
    pub final_epoch: u64,
}

/// Seed block separating held-out synthetic scenes from training scenes.
const EVAL_SEED_OFFSET: u64 = 10_000;

/// Training scenes: `train_sequences` seeds starting at the scene seed.
pub fn synthetic_training_set(cfg: &RunConfig) -> Result<Vec<TrackingSequence>> {
    (0..cfg.synth.train_sequences as u64)
        .map(|i| {
            let scene = crate::dataio::synth::SyntheticSceneConfig {
                seed: cfg.synth.scene.seed + i,
                ..cfg.synth.scene.clone()
            };
            generate_synthetic(&scene)
        })
        .collect()
}

/// Held-out scenes from a disjoint seed block.
pub fn synthetic_eval_set(cfg: &RunConfig) -> Result<Vec<TrackingSequence>> {
    (0..cfg.synth.eval_sequences as u64)
        .map(|i| {
            let scene = crate::dataio::synth::SyntheticSceneConfig {
                seed: cfg.synth.scene.seed + EVAL_SEED_OFFSET + i,
                ..cfg.synth.scene.clone()
            };
            generate_synthetic(&scene)
        })
        .collect()
}

/// Build an untrained network from the run config.
pub fn build_net<T: Real>(cfg: &RunConfig) -> Result<TrackNet<T>> {
    TrackNet::new(cfg.encoder.clone(), cfg.head_hidden, cfg.bins, cfg.xcorr, cfg.seed)
}

/// Train for `cfg.train.epochs` (or the override), logging one loss row per
/// epoch into `out_dir/loss_log.txt` and writing
/// `out_dir/checkpoint.json`. `resume` continues the epoch counter from an
/// existing checkpoint.
pub fn train_model<T: Real>(
    cfg: &RunConfig,
    sequences: &[TrackingSequence],
    out_dir: &Path,
    resume: Option<&Path>,
    epochs_override: Option<usize>,
) -> Result<(TrackNet<T>, TrainOutcome)> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let mut net = build_net::<T>(cfg)?;
    let first_epoch = match resume {
        Some(path) => load_checkpoint(&mut net, path)?,
        None => 0,
    };
    let epochs = epochs_override.unwrap_or(cfg.train.epochs) as u64;
    let layout = net.layout();
    let anchor = cfg.anchor()?;
    let pair_cfg = cfg.pair_config();
    let focal = FocalParams { alpha: cfg.loss.focal_alpha, gamma: cfg.loss.focal_gamma };
    let mut adam = Adam::new(AdamConfig { lr: cfg.train.lr, ..AdamConfig::default() });
    let mut sample_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0001);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x0d20_d007);

    let log_path = out_dir.join("loss_log.txt");
    let mut log = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)?;

    let batch_size = cfg.train.batch_size;
    let batches = cfg.train.pairs_per_epoch.div_ceil(batch_size);
    let mut losses = Vec::with_capacity(epochs as usize);
    for epoch in first_epoch..first_epoch + epochs {
        let mut epoch_sum = LossBreakdown::default();
        let mut epoch_batches = 0usize;
        for batch in 0..batches {
            net.zero_grad();
            let mut batch_sum = LossBreakdown::default();
            for _ in 0..batch_size {
                let pair = sample_training_pair(sequences, &anchor, &cfg.bins, &pair_cfg, &mut sample_rng)?;
                let (probs, reg, trace) = net.forward_train(
                    &pair.template,
                    &pair.search,
                    sample_rng.gen_seed(),
                    sample_rng.gen_seed(),
                    &mut dropout_rng,
                )?;
                let out = total_loss(&probs, &reg, &pair.labels, &pair.targets, &layout, cfg.loss.lambda, focal)
                    .map_err(|e| match e {
                        Error::NonFinite(what) => Error::NonFinite(format!(
                            "{what} at epoch {epoch} batch {batch} (base seed {})",
                            cfg.seed
                        )),
                        other => other,
                    })?;
                // Average the batch: scale this pair's gradient share.
                let mut gp = out.grad_probs;
                let mut gr = out.grad_reg;
                let inv = T::of(1.0 / batch_size as f64);
                for v in gp.as_mut_slice() {
                    *v *= inv;
                }
                for v in gr.as_mut_slice() {
                    *v *= inv;
                }
                net.backward(&trace, &gp, &gr)?;
                batch_sum.cls_loss += out.breakdown.cls_loss;
                batch_sum.bin_loss += out.breakdown.bin_loss;
                batch_sum.res_loss += out.breakdown.res_loss;
                batch_sum.total += out.breakdown.total;
                batch_sum.n_pos += out.breakdown.n_pos;
            }
            adam.step(&mut net);
            epoch_sum.cls_loss += batch_sum.cls_loss / batch_size as f64;
            epoch_sum.bin_loss += batch_sum.bin_loss / batch_size as f64;
            epoch_sum.res_loss += batch_sum.res_loss / batch_size as f64;
            epoch_sum.total += batch_sum.total / batch_size as f64;
            epoch_sum.n_pos += batch_sum.n_pos;
            epoch_batches += 1;
        }
        let n = epoch_batches as f64;
        let mean = LossBreakdown {
            cls_loss: epoch_sum.cls_loss / n,
            bin_loss: epoch_sum.bin_loss / n,
            res_loss: epoch_sum.res_loss / n,
            total: epoch_sum.total / n,
            n_pos: epoch_sum.n_pos,
        };
        writeln!(
            log,
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            epoch + 1,
            mean.cls_loss,
            mean.bin_loss,
            mean.res_loss,
            mean.total
        )?;
        losses.push(mean);
    }

    let final_epoch = first_epoch + epochs;
    let checkpoint = out_dir.join("checkpoint.json");
    save_checkpoint(&mut net, final_epoch, &checkpoint)?;
    Ok((
        net,
        TrainOutcome { checkpoint, losses, first_epoch, final_epoch },
    ))
}

trait SeedSource {
    fn gen_seed(&mut self) -> u64;
}

impl SeedSource for ChaCha8Rng {
    fn gen_seed(&mut self) -> u64 {
        rand::Rng::gen(self)
    }
}
