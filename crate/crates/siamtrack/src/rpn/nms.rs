//! Top-K selection and greedy non-maximum suppression.

use crate::error::{Error, Result};
use crate::geometry::{box_iou_3d, box_iou_bev, Box3D};

/// One per-point box proposal.
#[derive(Clone, Copy, Debug)]
pub struct Proposal {
    pub bbox: Box3D,
    /// Foreground probability in [0, 1].
    pub score: f64,
    /// Index of the search point that generated the proposal.
    pub point_index: usize,
}

fn sorted_order(proposals: &[Proposal]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..proposals.len()).collect();
    // Descending score; ties broken by the lower source point index so the
    // result is independent of input order.
    order.sort_by(|&a, &b| {
        proposals[b]
            .score
            .partial_cmp(&proposals[a].score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(proposals[a].point_index.cmp(&proposals[b].point_index))
    });
    order
}

/// Greedy NMS over `proposals[order]`: walk in order, keep a proposal iff
/// its IoU with every already-kept box is `<= iou_threshold`. Returns kept
/// indices into `proposals` in order.
pub fn nms_keep(
    proposals: &[Proposal],
    order: &[usize],
    iou_threshold: f64,
    use_3d_iou: bool,
) -> Vec<usize> {
    let iou = if use_3d_iou { box_iou_3d } else { box_iou_bev };
    let mut kept: Vec<usize> = Vec::new();
    for &i in order {
        let suppressed = kept
            .iter()
            .any(|&k| iou(&proposals[k].bbox, &proposals[i].bbox) > iou_threshold);
        if !suppressed {
            kept.push(i);
        }
    }
    kept
}

/// Inference-time selection: keep the `top_k` highest-scored proposals, run
/// greedy NMS at `iou_threshold`, return the surviving highest-score one.
pub fn select_and_nms(
    proposals: &[Proposal],
    top_k: usize,
    iou_threshold: f64,
    use_3d_iou: bool,
) -> Result<Proposal> {
    if proposals.is_empty() {
        return Err(Error::Geometry("select_and_nms: empty proposal list".into()));
    }
    let mut order = sorted_order(proposals);
    order.truncate(top_k);
    let kept = nms_keep(proposals, &order, iou_threshold, use_3d_iou);
    Ok(proposals[kept[0]])
}
