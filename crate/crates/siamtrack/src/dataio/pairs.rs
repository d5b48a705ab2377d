//! Template/search training-pair sampling from tracked sequences.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{crop_by_box, enlarge_box, point_in_box, resample, Box3D, PointCloud};
use crate::rpn::{encode_targets, AnchorSizes, BinConfig, BinTargets};

use super::TrackingSequence;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairConfig {
    /// Network input size N for both branches.
    pub input_points: usize,
    /// Margin added around the template ground-truth box, meters.
    pub template_margin: f64,
    /// Search-area margin around the frame-B box (the tracker's D), meters.
    pub search_margin: f64,
    /// Horizontal center jitter applied to the search area, meters.
    pub center_jitter: f64,
    /// Largest frame gap between template and search frames (None = any).
    pub max_frame_gap: Option<usize>,
    /// Crops below this size are considered degenerate and re-drawn.
    pub min_crop_points: usize,
    /// Bounded retries before giving up on a draw.
    pub max_retries: usize,
}

impl Default for PairConfig {
    fn default() -> Self {
        Self {
            input_points: 64,
            template_margin: 0.1,
            search_margin: 1.0,
            center_jitter: 0.3,
            max_frame_gap: None,
            min_crop_points: 5,
            max_retries: 20,
        }
    }
}

/// One supervised pair: resampled template and search clouds plus the
/// per-search-point labels and bin targets against the frame-B box.
#[derive(Clone, Debug)]
pub struct TrainingPair {
    pub template: PointCloud,
    pub search: PointCloud,
    pub gt: Box3D,
    /// +1 for foreground points (inside the ground-truth box), else -1.
    pub labels: Vec<i8>,
    /// Bin targets for in-range foreground points.
    pub targets: Vec<Option<BinTargets>>,
}

/// Draw one template/search pair from the same sequence. Degenerate crops
/// are retried up to the configured bound.
pub fn sample_training_pair(
    sequences: &[TrackingSequence],
    anchor: &AnchorSizes,
    bins: &BinConfig,
    cfg: &PairConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TrainingPair> {
    if sequences.is_empty() {
        return Err(Error::EmptyCloud("sample_training_pair: no sequences"));
    }
    for _ in 0..cfg.max_retries.max(1) {
        let seq = &sequences[rng.gen_range(0..sequences.len())];
        if seq.len() < 2 {
            continue;
        }
        let a = rng.gen_range(0..seq.len());
        let b = match cfg.max_frame_gap {
            None => rng.gen_range(0..seq.len()),
            Some(gap) => {
                let lo = a.saturating_sub(gap);
                let hi = (a + gap).min(seq.len() - 1);
                rng.gen_range(lo..=hi)
            }
        };
        let frame_a = &seq.frames[a];
        let frame_b = &seq.frames[b];

        let template_crop = crop_by_box(&frame_a.cloud, &enlarge_box(&frame_a.gt, cfg.template_margin));
        if template_crop.len() < cfg.min_crop_points {
            continue;
        }
        let mut area = enlarge_box(&frame_b.gt, cfg.search_margin);
        area.cx += rng.gen_range(-cfg.center_jitter..=cfg.center_jitter);
        area.cy += rng.gen_range(-cfg.center_jitter..=cfg.center_jitter);
        let search_crop = crop_by_box(&frame_b.cloud, &area);
        if search_crop.len() < cfg.min_crop_points {
            continue;
        }

        let template = resample(&template_crop, cfg.input_points, rng)?;
        let search = resample(&search_crop, cfg.input_points, rng)?;
        let labels: Vec<i8> = search
            .points
            .iter()
            .map(|&p| if point_in_box(p, &frame_b.gt) { 1 } else { -1 })
            .collect();
        let targets: Vec<Option<BinTargets>> = search
            .points
            .iter()
            .zip(&labels)
            .map(|(&p, &l)| {
                if l > 0 {
                    encode_targets(p, &frame_b.gt, anchor, bins)
                } else {
                    None
                }
            })
            .collect();
        return Ok(TrainingPair { template, search, gt: frame_b.gt, labels, targets });
    }
    Err(Error::EmptyCloud("sample_training_pair: retries exhausted on degenerate crops"))
}
