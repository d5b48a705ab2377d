//! One-pass-evaluation metrics and ablation sweeps.
//!
//! Success is the area under the curve of the fraction of frames whose
//! box overlap meets each threshold in a fixed grid (21 steps over [0, 1]);
//! Precision is the same over center errors (21 steps over [0, 2] meters).
//! Both are reported x100. The 3D variants use volumetric IoU and full 3D
//! center distance; the BEV variants use footprint IoU and horizontal
//! distance.

use serde::{Deserialize, Serialize};

use crate::dataio::TrackingSequence;
use crate::error::{Error, Result};
use crate::geometry::{box_iou_3d, box_iou_bev, Box3D};
use crate::model::TrackNet;
use crate::nn::Real;
use crate::rpn::{AnchorSizes, BinConfig};
use crate::tracker::{track_sequence, FrameResult, NetAdapter, StageTimings, TrackerConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricConfig {
    pub success_thresholds: Vec<f64>,
    pub precision_thresholds: Vec<f64>,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            success_thresholds: (0..=20).map(|i| i as f64 / 20.0).collect(),
            precision_thresholds: (0..=20).map(|i| i as f64 * 0.1).collect(),
        }
    }
}

/// Fraction of frames with `iou >= t`, averaged over thresholds, x100.
pub fn success_auc(ious: &[f64], thresholds: &[f64]) -> Result<f64> {
    if ious.is_empty() || thresholds.is_empty() {
        return Err(Error::Config("success_auc: empty frame or threshold list".into()));
    }
    let mut acc = 0.0;
    for &t in thresholds {
        let hits = ious.iter().filter(|&&v| v >= t).count();
        acc += hits as f64 / ious.len() as f64;
    }
    Ok(acc / thresholds.len() as f64 * 100.0)
}

/// Fraction of frames with center error `<= t`, averaged over thresholds,
/// x100.
pub fn precision_auc(errors: &[f64], thresholds: &[f64]) -> Result<f64> {
    if errors.is_empty() || thresholds.is_empty() {
        return Err(Error::Config("precision_auc: empty frame or threshold list".into()));
    }
    let mut acc = 0.0;
    for &t in thresholds {
        let hits = errors.iter().filter(|&&v| v <= t).count();
        acc += hits as f64 / errors.len() as f64;
    }
    Ok(acc / thresholds.len() as f64 * 100.0)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OPEReport {
    pub success_3d: f64,
    pub precision_3d: f64,
    pub success_bev: f64,
    pub precision_bev: f64,
    pub frames: usize,
    pub sequences: usize,
    pub failed_sequences: usize,
    pub mean_pre_ms: f64,
    pub mean_infer_ms: f64,
    pub mean_post_ms: f64,
}

impl OPEReport {
    pub fn human_table(&self) -> String {
        format!(
            "frames: {} (sequences {}, failed {})\n\
             3D  Success {:6.2}  Precision {:6.2}\n\
             BEV Success {:6.2}  Precision {:6.2}\n\
             per-frame ms: pre {:.3}  infer {:.3}  post {:.3}",
            self.frames,
            self.sequences,
            self.failed_sequences,
            self.success_3d,
            self.precision_3d,
            self.success_bev,
            self.precision_bev,
            self.mean_pre_ms,
            self.mean_infer_ms,
            self.mean_post_ms
        )
    }

    /// Machine-readable row: tab-separated metric fields.
    pub fn machine_row(&self) -> String {
        format!(
            "{:.4}\t{:.4}\t{:.4}\t{:.4}\t{}\t{:.4}\t{:.4}\t{:.4}",
            self.success_3d,
            self.precision_3d,
            self.success_bev,
            self.precision_bev,
            self.frames,
            self.mean_pre_ms,
            self.mean_infer_ms,
            self.mean_post_ms
        )
    }
}

/// A tracker that can be run over a sequence; the production implementation
/// wraps the network, test doubles stub it.
pub trait TrackRunner {
    fn run(&mut self, seq: &TrackingSequence) -> Result<Vec<FrameResult>>;
}

/// Production runner: a network plus driver configuration.
pub struct NetRunner<'a, T> {
    pub net: &'a TrackNet<T>,
    pub cfg: TrackerConfig,
    pub anchor: AnchorSizes,
    pub bins: BinConfig,
}

impl<'a, T: Real> TrackRunner for NetRunner<'a, T> {
    fn run(&mut self, seq: &TrackingSequence) -> Result<Vec<FrameResult>> {
        let clouds: Vec<_> = seq.frames.iter().map(|f| f.cloud.clone()).collect();
        let mut adapter = NetAdapter::new(self.net, self.cfg.seed);
        track_sequence(&mut adapter, self.cfg, self.anchor, self.bins, &clouds, &seq.frames[0].gt)
    }
}

/// Run OPE over every sequence and pool the per-frame overlaps and errors.
/// Sequences whose initialization fails are skipped and counted; it is an
/// error only if every sequence fails.
pub fn evaluate(
    runner: &mut dyn TrackRunner,
    sequences: &[TrackingSequence],
    metrics: &MetricConfig,
) -> Result<OPEReport> {
    if sequences.is_empty() {
        return Err(Error::Config("evaluate: no sequences".into()));
    }
    let mut iou3d = Vec::new();
    let mut ioubev = Vec::new();
    let mut err3d = Vec::new();
    let mut errbev = Vec::new();
    let mut timing = StageTimings::default();
    let mut failed = 0usize;
    for seq in sequences {
        let results = match runner.run(seq) {
            Ok(r) => r,
            Err(Error::TrackerInit(_)) => {
                failed += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        for r in &results {
            let gt = &seq.frames[r.frame].gt;
            iou3d.push(box_iou_3d(&r.bbox, gt));
            ioubev.push(box_iou_bev(&r.bbox, gt));
            err3d.push(center_error_3d(&r.bbox, gt));
            errbev.push(center_error_bev(&r.bbox, gt));
            timing.pre_ms += r.timing.pre_ms;
            timing.infer_ms += r.timing.infer_ms;
            timing.post_ms += r.timing.post_ms;
        }
    }
    if iou3d.is_empty() {
        return Err(Error::TrackerInit("every sequence failed to initialize".into()));
    }
    let n = iou3d.len() as f64;
    Ok(OPEReport {
        success_3d: success_auc(&iou3d, &metrics.success_thresholds)?,
        precision_3d: precision_auc(&err3d, &metrics.precision_thresholds)?,
        success_bev: success_auc(&ioubev, &metrics.success_thresholds)?,
        precision_bev: precision_auc(&errbev, &metrics.precision_thresholds)?,
        frames: iou3d.len(),
        sequences: sequences.len() - failed,
        failed_sequences: failed,
        mean_pre_ms: timing.pre_ms / n,
        mean_infer_ms: timing.infer_ms / n,
        mean_post_ms: timing.post_ms / n,
    })
}

pub fn center_error_3d(a: &Box3D, b: &Box3D) -> f64 {
    a.center().distance(b.center())
}

pub fn center_error_bev(a: &Box3D, b: &Box3D) -> f64 {
    ((a.cx - b.cx).powi(2) + (a.cy - b.cy).powi(2)).sqrt()
}

/// One sweep row: the axis value label and its outcome (reports or the
/// error text of the failed cell).
#[derive(Clone, Debug)]
pub struct SweepTable {
    pub axis: String,
    pub rows: Vec<(String, std::result::Result<OPEReport, String>)>,
}

impl SweepTable {
    /// Delimited rows suitable for plotting: value, then the machine row.
    pub fn delimited(&self) -> String {
        let mut out = String::from(
            "value\tsuccess_3d\tprecision_3d\tsuccess_bev\tprecision_bev\tframes\tpre_ms\tinfer_ms\tpost_ms\n",
        );
        for (value, row) in &self.rows {
            match row {
                Ok(r) => out.push_str(&format!("{value}\t{}\n", r.machine_row())),
                Err(e) => out.push_str(&format!("{value}\tERROR\t{e}\n")),
            }
        }
        out
    }
}

/// Evaluate one configuration per axis value; cell failures are recorded
/// and the sweep continues.
pub fn ablation_sweep(
    axis: &str,
    values: &[String],
    mut cell: impl FnMut(&str) -> Result<OPEReport>,
) -> Result<SweepTable> {
    if values.is_empty() {
        return Err(Error::Config("ablation_sweep: empty value list".into()));
    }
    let rows = values
        .iter()
        .map(|v| (v.clone(), cell(v).map_err(|e| e.to_string())))
        .collect();
    Ok(SweepTable { axis: axis.to_string(), rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::synth::{generate_synthetic, SyntheticSceneConfig};
    use crate::tracker::StageTimings;

    #[test]
    fn success_auc_closed_forms() {
        let m = MetricConfig::default();
        assert_eq!(m.success_thresholds.len(), 21);
        assert!((success_auc(&[1.0; 7], &m.success_thresholds).unwrap() - 100.0).abs() < 1e-9);
        let only_zero = success_auc(&[0.0; 5], &m.success_thresholds).unwrap();
        assert!((only_zero - 100.0 / 21.0).abs() < 1e-9);
        let half = success_auc(&[0.5; 4], &m.success_thresholds).unwrap();
        assert!((half - 1100.0 / 21.0).abs() < 1e-9, "{half}");
    }

    #[test]
    fn precision_auc_closed_forms() {
        let m = MetricConfig::default();
        assert_eq!(m.precision_thresholds.len(), 21);
        assert!((precision_auc(&[0.0; 3], &m.precision_thresholds).unwrap() - 100.0).abs() < 1e-9);
        assert_eq!(precision_auc(&[2.5, 3.0], &m.precision_thresholds).unwrap(), 0.0);
        let one_meter = precision_auc(&[1.0; 9], &m.precision_thresholds).unwrap();
        assert!((one_meter - 1100.0 / 21.0).abs() < 1e-9, "{one_meter}");
    }

    #[test]
    fn empty_lists_are_errors() {
        let m = MetricConfig::default();
        assert!(success_auc(&[], &m.success_thresholds).is_err());
        assert!(precision_auc(&[], &m.precision_thresholds).is_err());
    }

    #[test]
    fn success_auc_is_monotone_in_pointwise_domination() {
        let m = MetricConfig::default();
        let lows = [0.1, 0.4, 0.0, 0.7, 0.3];
        let highs = [0.2, 0.4, 0.5, 0.9, 0.3];
        let a = success_auc(&lows, &m.success_thresholds).unwrap();
        let b = success_auc(&highs, &m.success_thresholds).unwrap();
        assert!(b >= a);
    }

    #[test]
    fn aucs_are_invariant_under_frame_reordering() {
        let m = MetricConfig::default();
        let ious = [0.3, 0.9, 0.5, 0.0, 0.62];
        let mut rev = ious;
        rev.reverse();
        assert_eq!(
            success_auc(&ious, &m.success_thresholds).unwrap(),
            success_auc(&rev, &m.success_thresholds).unwrap()
        );
    }

    /// Test double that echoes the ground truth of every frame.
    struct GtEcho;

    impl TrackRunner for GtEcho {
        fn run(&mut self, seq: &TrackingSequence) -> Result<Vec<FrameResult>> {
            Ok(seq
                .frames
                .iter()
                .enumerate()
                .skip(1)
                .map(|(i, f)| FrameResult {
                    frame: i,
                    bbox: f.gt,
                    score: 1.0,
                    points_in_search: 0,
                    fallback: false,
                    timing: StageTimings::default(),
                })
                .collect())
        }
    }

    /// Test double frozen at the first frame's box.
    struct Frozen;

    impl TrackRunner for Frozen {
        fn run(&mut self, seq: &TrackingSequence) -> Result<Vec<FrameResult>> {
            let first = seq.frames[0].gt;
            Ok((1..seq.len())
                .map(|i| FrameResult {
                    frame: i,
                    bbox: first,
                    score: 1.0,
                    points_in_search: 0,
                    fallback: false,
                    timing: StageTimings::default(),
                })
                .collect())
        }
    }

    fn sequences() -> Vec<TrackingSequence> {
        (0..3)
            .map(|s| generate_synthetic(&SyntheticSceneConfig { seed: s, ..Default::default() }).unwrap())
            .collect()
    }

    #[test]
    fn perfect_tracker_scores_100_everywhere() {
        let seqs = sequences();
        let report = evaluate(&mut GtEcho, &seqs, &MetricConfig::default()).unwrap();
        assert!((report.success_3d - 100.0).abs() < 1e-9);
        assert!((report.precision_3d - 100.0).abs() < 1e-9);
        assert!((report.success_bev - 100.0).abs() < 1e-9);
        assert!((report.precision_bev - 100.0).abs() < 1e-9);
        assert_eq!(report.frames, seqs.iter().map(|s| s.len() - 1).sum::<usize>());
    }

    #[test]
    fn frozen_tracker_scores_strictly_lower_on_a_moving_target() {
        let seqs = sequences();
        let perfect = evaluate(&mut GtEcho, &seqs, &MetricConfig::default()).unwrap();
        let frozen = evaluate(&mut Frozen, &seqs, &MetricConfig::default()).unwrap();
        assert!(frozen.success_3d < perfect.success_3d);
        assert!(frozen.precision_3d < perfect.precision_3d);
    }

    #[test]
    fn bev_success_dominates_3d_success() {
        let seqs = sequences();
        let frozen = evaluate(&mut Frozen, &seqs, &MetricConfig::default()).unwrap();
        assert!(frozen.success_bev >= frozen.success_3d);
    }

    #[test]
    fn evaluation_is_deterministic() {
        let seqs = sequences();
        let a = evaluate(&mut Frozen, &seqs, &MetricConfig::default()).unwrap();
        let b = evaluate(&mut Frozen, &seqs, &MetricConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sweep_collects_rows_and_survives_cell_failures() {
        let seqs = sequences();
        let values: Vec<String> = vec!["ok".into(), "boom".into(), "ok2".into()];
        let table = ablation_sweep("demo", &values, |v| {
            if v == "boom" {
                Err(Error::Config("cell exploded".into()))
            } else {
                evaluate(&mut GtEcho, &seqs, &MetricConfig::default())
            }
        })
        .unwrap();
        assert_eq!(table.rows.len(), 3);
        assert!(table.rows[0].1.is_ok());
        assert!(table.rows[1].1.is_err());
        assert!(table.rows[2].1.is_ok());
        let text = table.delimited();
        assert!(text.contains("ERROR"));
        assert!(text.lines().count() == 4);
    }

    #[test]
    fn empty_sweep_values_error() {
        assert!(ablation_sweep("d", &[], |_| Ok(OPEReport::default())).is_err());
    }
}
