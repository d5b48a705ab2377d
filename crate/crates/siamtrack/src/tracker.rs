//! Closed-loop tracking driver.
//!
//! Initialization crops the first frame by the given ground-truth box,
//! resamples it to the network input size and caches its encoding as the
//! template. Every step crops the new frame by the previous prediction
//! enlarged by the search margin, runs the network, decodes one proposal
//! per point and keeps the NMS survivor with the best score. Ground truth
//! is only ever consumed at initialization (one-pass evaluation).

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{crop_by_box, enlarge_box, resample, Box3D, PointCloud};
use crate::model::TrackNet;
use crate::nn::{Real, Tensor2D};
use crate::rpn::{decode_proposal, select_and_nms, AnchorSizes, BinConfig, Proposal};

/// Anything that can score and regress proposals for a search cloud.
/// Implemented by the real network adapter and by test oracles.
pub trait ProposalNetwork {
    /// Cache the (cropped, resampled) template cloud.
    fn set_template(&mut self, template: &PointCloud) -> Result<()>;

    /// Per-point foreground scores and regression rows for a search cloud;
    /// `frame_index` identifies the sequence position for seeding.
    fn infer(&mut self, search: &PointCloud, frame_index: usize) -> Result<NetOutput>;
}

pub struct NetOutput {
    pub scores: Vec<f64>,
    pub reg_rows: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateMode {
    /// Frozen first-frame template (default).
    FirstGt,
    /// Rebuild the template each frame from the first ground truth merged
    /// with the points of the latest prediction.
    FirstGtPlusPrevious,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeSource {
    /// Use the regressed anchor-relative sizes.
    AnchorRegressed,
    /// Keep the first-frame ground-truth dimensions on every output box.
    GtWhl,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackerConfig {
    /// Search margin D added around the previous box, meters.
    pub search_margin: f64,
    /// Network input size N.
    pub input_points: usize,
    pub top_k: usize,
    pub nms_iou: f64,
    /// Measure NMS overlap with 3D IoU instead of BEV.
    pub nms_in_3d: bool,
    pub template_mode: TemplateMode,
    pub size_source: SizeSource,
    /// Search crops below this size trigger the lost-target fallback.
    pub min_search_points: usize,
    pub seed: u64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            search_margin: 1.0,
            input_points: 500,
            top_k: 100,
            nms_iou: 0.8,
            nms_in_3d: false,
            template_mode: TemplateMode::FirstGt,
            size_source: SizeSource::AnchorRegressed,
            min_search_points: 5,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageTimings {
    pub pre_ms: f64,
    pub infer_ms: f64,
    pub post_ms: f64,
}

impl StageTimings {
    pub fn total_ms(&self) -> f64 {
        self.pre_ms + self.infer_ms + self.post_ms
    }
}

#[derive(Clone, Copy, Debug)]
pub struct FrameResult {
    pub frame: usize,
    pub bbox: Box3D,
    pub score: f64,
    pub points_in_search: usize,
    /// True when the search crop was degenerate and the previous box was
    /// carried over.
    pub fallback: bool,
    pub timing: StageTimings,
}

/// Driver state for one tracked target.
pub struct Tracker<'n, N: ProposalNetwork> {
    net: &'n mut N,
    cfg: TrackerConfig,
    anchor: AnchorSizes,
    bins: BinConfig,
    first_cloud: PointCloud,
    first_gt: Box3D,
    last_box: Box3D,
    last_score: f64,
    frames_since_good: u32,
    boost_margin: bool,
    frame_index: usize,
}

impl<'n, N: ProposalNetwork> Tracker<'n, N> {
    /// Initialize from the first frame's cloud and ground-truth box.
    pub fn init(
        net: &'n mut N,
        cfg: TrackerConfig,
        anchor: AnchorSizes,
        bins: BinConfig,
        first_cloud: &PointCloud,
        first_gt: &Box3D,
    ) -> Result<Self> {
        let crop = crop_by_box(first_cloud, first_gt);
        if crop.len() < cfg.min_search_points {
            return Err(Error::TrackerInit(format!(
                "template crop has {} points (minimum {})",
                crop.len(),
                cfg.min_search_points
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let template = resample(&crop, cfg.input_points, &mut rng)?;
        net.set_template(&template)?;
        Ok(Self {
            net,
            cfg,
            anchor,
            bins,
            first_cloud: first_cloud.clone(),
            first_gt: *first_gt,
            last_box: *first_gt,
            last_score: 1.0,
            frames_since_good: 0,
            boost_margin: false,
            frame_index: 0,
        })
    }

    pub fn last_box(&self) -> Box3D {
        self.last_box
    }

    pub fn last_score(&self) -> f64 {
        self.last_score
    }

    /// Process the next frame's cloud and roll the search area forward.
    pub fn step(&mut self, cloud: &PointCloud) -> Result<FrameResult> {
        self.frame_index += 1;
        let frame = self.frame_index;

        let t0 = Instant::now();
        let margin = if self.boost_margin { 2.0 * self.cfg.search_margin } else { self.cfg.search_margin };
        let area = enlarge_box(&self.last_box, margin);
        let crop = crop_by_box(cloud, &area);
        let points_in_search = crop.len();

        if points_in_search < self.cfg.min_search_points {
            // Lost-target fallback: keep the previous box, flag the frame
            // and widen the search margin for the following frame only.
            self.boost_margin = true;
            self.frames_since_good += 1;
            let pre_ms = t0.elapsed().as_secs_f64() * 1e3;
            return Ok(FrameResult {
                frame,
                bbox: self.last_box,
                score: 0.0,
                points_in_search,
                fallback: true,
                timing: StageTimings { pre_ms, ..Default::default() },
            });
        }
        self.boost_margin = false;

        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ (frame as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let search = resample(&crop, self.cfg.input_points, &mut rng)?;
        let pre_ms = t0.elapsed().as_secs_f64() * 1e3;

        let t1 = Instant::now();
        let out = self.net.infer(&search, frame)?;
        let infer_ms = t1.elapsed().as_secs_f64() * 1e3;

        let t2 = Instant::now();
        if out.scores.len() != search.len() || out.reg_rows.len() != search.len() {
            return Err(Error::shape(
                "Tracker::step",
                format!("{} scores/rows", search.len()),
                format!("{}/{}", out.scores.len(), out.reg_rows.len()),
            ));
        }
        let proposals: Vec<Proposal> = search
            .points
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                Ok(Proposal {
                    bbox: decode_proposal(p, &out.reg_rows[i], &self.anchor, &self.bins)?,
                    score: out.scores[i],
                    point_index: i,
                })
            })
            .collect::<Result<_>>()?;
        let winner = select_and_nms(&proposals, self.cfg.top_k, self.cfg.nms_iou, self.cfg.nms_in_3d)?;
        let mut bbox = winner.bbox;
        if self.cfg.size_source == SizeSource::GtWhl {
            bbox.w = self.first_gt.w;
            bbox.h = self.first_gt.h;
            bbox.l = self.first_gt.l;
        }
        self.last_box = bbox;
        self.last_score = winner.score;
        self.frames_since_good = 0;

        if self.cfg.template_mode == TemplateMode::FirstGtPlusPrevious {
            let merged = crop_by_box(&self.first_cloud, &self.first_gt)
                .concat(&crop_by_box(cloud, &bbox));
            if merged.len() >= self.cfg.min_search_points {
                let mut trng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ 0x7e1d ^ frame as u64);
                let template = resample(&merged, self.cfg.input_points, &mut trng)?;
                self.net.set_template(&template)?;
            }
        }
        let post_ms = t2.elapsed().as_secs_f64() * 1e3;

        Ok(FrameResult {
            frame,
            bbox,
            score: winner.score,
            points_in_search,
            fallback: false,
            timing: StageTimings { pre_ms, infer_ms, post_ms },
        })
    }
}

/// One-pass tracking over a whole sequence: initialize on frame 0's ground
/// truth, then step through every later frame without touching labels.
pub fn track_sequence<N: ProposalNetwork>(
    net: &mut N,
    cfg: TrackerConfig,
    anchor: AnchorSizes,
    bins: BinConfig,
    frames: &[PointCloud],
    first_gt: &Box3D,
) -> Result<Vec<FrameResult>> {
    if frames.len() < 2 {
        return Err(Error::TrackerInit(format!("need >= 2 frames, got {}", frames.len())));
    }
    let mut tracker = Tracker::init(net, cfg, anchor, bins, &frames[0], first_gt)?;
    frames[1..].iter().map(|cloud| tracker.step(cloud)).collect()
}

/// Adapter running a [`TrackNet`] behind the driver interface.
pub struct NetAdapter<'m, T> {
    net: &'m TrackNet<T>,
    template: Option<Tensor2D<T>>,
    seed: u64,
}

impl<'m, T: Real> NetAdapter<'m, T> {
    pub fn new(net: &'m TrackNet<T>, seed: u64) -> Self {
        Self { net, template: None, seed }
    }

    pub fn template_features(&self) -> Option<&Tensor2D<T>> {
        self.template.as_ref()
    }
}

impl<'m, T: Real> ProposalNetwork for NetAdapter<'m, T> {
    fn set_template(&mut self, template: &PointCloud) -> Result<()> {
        self.template = Some(self.net.encode_template(template, self.seed)?.features);
        Ok(())
    }

    fn infer(&mut self, search: &PointCloud, frame_index: usize) -> Result<NetOutput> {
        let template = self
            .template
            .as_ref()
            .ok_or_else(|| Error::TrackerInit("infer before set_template".into()))?;
        let out = self.net.infer(template, search, self.seed ^ ((frame_index as u64) << 8))?;
        Ok(NetOutput { scores: out.scores, reg_rows: out.reg_rows })
    }
}

/// Test/verification oracle: perfect scores and exact bin targets against a
/// known ground-truth schedule. Isolates the driver from the learner.
pub struct OracleNetwork {
    /// Ground-truth box per frame index.
    pub gts: Vec<Box3D>,
    pub anchor: AnchorSizes,
    pub bins: BinConfig,
}

impl ProposalNetwork for OracleNetwork {
    fn set_template(&mut self, _template: &PointCloud) -> Result<()> {
        Ok(())
    }

    fn infer(&mut self, search: &PointCloud, frame_index: usize) -> Result<NetOutput> {
        let gt = self.gts.get(frame_index).ok_or_else(|| {
            Error::TrackerInit(format!("oracle has no ground truth for frame {frame_index}"))
        })?;
        let channels = self.bins.layout().channels();
        let mut scores = Vec::with_capacity(search.len());
        let mut rows = Vec::with_capacity(search.len());
        for &p in &search.points {
            let inside = crate::geometry::point_in_box(p, gt);
            let targets = if inside { crate::rpn::encode_targets(p, gt, &self.anchor, &self.bins) } else { None };
            match targets {
                Some(t) => {
                    scores.push(1.0);
                    rows.push(crate::rpn::targets_to_reg_row(&t, &self.bins));
                }
                None => {
                    scores.push(0.0);
                    rows.push(vec![0.0; channels]);
                }
            }
        }
        Ok(NetOutput { scores, reg_rows: rows })
    }
}

/// Render one frame result as the streaming text row:
/// frame, 7 box fields, score, flags, per-stage milliseconds.
pub fn format_frame_result(r: &FrameResult) -> String {
    let b = &r.bbox;
    format!(
        "{} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.4} {} {:.3} {:.3} {:.3}",
        r.frame,
        b.cx,
        b.cy,
        b.cz,
        b.w,
        b.h,
        b.l,
        b.ry,
        r.score,
        if r.fallback { "fallback" } else { "ok" },
        r.timing.pre_ms,
        r.timing.infer_ms,
        r.timing.post_ms
    )
}
