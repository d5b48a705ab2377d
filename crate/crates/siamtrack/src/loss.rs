//! Training objective: focal classification loss plus the lambda-weighted
//! bin/residual regression terms.
//!
//! The total is `mean_i focal(p_i) + lambda * (L_bin + L_res)` where the
//! regression terms are averaged over the foreground points. Per foreground
//! point, each of the four localization axes contributes a cross-entropy
//! over its bin logits plus a smooth-L1 on its residual, and the three size
//! residuals contribute smooth-L1 terms against the anchor.

use crate::error::{Error, Result};
use crate::nn::{softmax_rows_forward, Real, Tensor2D};
use crate::rpn::{BinTargets, ChannelLayout};

/// Focal loss parameters (alpha for positives, 1-alpha for negatives).
#[derive(Clone, Copy, Debug)]
pub struct FocalParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self { alpha: 0.25, gamma: 2.0 }
    }
}

/// Probability clamp that keeps `log(p_t)` finite.
pub const PROB_CLAMP: f64 = 1e-7;

/// Focal loss of one probability against a ±1 label, with its derivative
/// w.r.t. `p`.
pub fn focal_loss_grad(p: f64, label: i8, params: FocalParams) -> (f64, f64) {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let (p_t, alpha_t, dpt_dp) = if label > 0 {
        (p, params.alpha, 1.0)
    } else {
        (1.0 - p, 1.0 - params.alpha, -1.0)
    };
    let one_m = 1.0 - p_t;
    let loss = -alpha_t * one_m.powf(params.gamma) * p_t.ln();
    // d/dp_t [-(1-p_t)^g ln p_t] = g (1-p_t)^(g-1) ln p_t - (1-p_t)^g / p_t
    let dl_dpt = if params.gamma == 0.0 {
        -1.0 / p_t
    } else {
        params.gamma * one_m.powf(params.gamma - 1.0) * p_t.ln() - one_m.powf(params.gamma) / p_t
    };
    (loss, alpha_t * dl_dpt * dpt_dp)
}

pub fn focal_loss(p: f64, label: i8, params: FocalParams) -> f64 {
    focal_loss_grad(p, label, params).0
}

/// Smooth-L1 (Huber with unit transition): `0.5 x^2` for `|x| < 1`, else
/// `|x| - 0.5`. Returns `(value, derivative)`.
pub fn smooth_l1_grad(x: f64) -> (f64, f64) {
    if x.abs() < 1.0 {
        (0.5 * x * x, x)
    } else {
        (x.abs() - 0.5, x.signum())
    }
}

pub fn smooth_l1(x: f64) -> f64 {
    smooth_l1_grad(x).0
}

/// `-log softmax(logits)[target]` and its gradient w.r.t. the logits.
pub fn cross_entropy_logits<T: Real>(logits: &[T], target: usize) -> Result<(f64, Vec<T>)> {
    if target >= logits.len() {
        return Err(Error::shape("cross_entropy", format!("target < {}", logits.len()), format!("{target}")));
    }
    let row = Tensor2D::from_vec(1, logits.len(), logits.to_vec())?;
    let (sm, _) = softmax_rows_forward(&row)?;
    let p = sm.get(0, target).as_f64().max(f64::MIN_POSITIVE);
    let mut grad: Vec<T> = sm.as_slice().to_vec();
    grad[target] -= T::one();
    Ok((-p.ln(), grad))
}

/// Loss components of one training step. The regression terms are already
/// normalized by the foreground count.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub cls_loss: f64,
    pub bin_loss: f64,
    pub res_loss: f64,
    pub total: f64,
    pub n_pos: usize,
}

/// Regression target of one point: bin-coded for in-range foreground
/// points, absent otherwise.
pub type PointTarget = Option<BinTargets>;

/// Forward + backward of the full objective.
///
/// * `probs` — `N x 1` foreground probabilities;
/// * `reg` — `N x C` regression rows per [`ChannelLayout`];
/// * `labels` — ±1 per point (foreground/background);
/// * `targets` — bin targets for in-range foreground points.
///
/// Returns the breakdown plus gradients w.r.t. `probs` and `reg`.
pub struct TotalLoss<T> {
    pub breakdown: LossBreakdown,
    pub grad_probs: Tensor2D<T>,
    pub grad_reg: Tensor2D<T>,
}

pub fn total_loss<T: Real>(
    probs: &Tensor2D<T>,
    reg: &Tensor2D<T>,
    labels: &[i8],
    targets: &[PointTarget],
    layout: &ChannelLayout,
    lambda: f64,
    focal: FocalParams,
) -> Result<TotalLoss<T>> {
    let n = probs.rows();
    if probs.cols() != 1 {
        return Err(Error::shape("total_loss", "N x 1 probs", format!("{:?}", probs.shape())));
    }
    if labels.len() != n || targets.len() != n || reg.rows() != n {
        return Err(Error::shape(
            "total_loss",
            format!("{n} labels/targets/reg rows"),
            format!("{}/{}/{}", labels.len(), targets.len(), reg.rows()),
        ));
    }
    if reg.cols() != layout.channels() {
        return Err(Error::shape("total_loss", format!("{} reg cols", layout.channels()), format!("{}", reg.cols())));
    }

    let mut grad_probs = Tensor2D::zeros(n, 1);
    let mut grad_reg = Tensor2D::zeros(n, reg.cols());

    // Classification: focal loss averaged over all points.
    let mut cls_sum = 0.0;
    for i in 0..n {
        let (loss, dp) = focal_loss_grad(probs.get(i, 0).as_f64(), labels[i], focal);
        cls_sum += loss;
        grad_probs.set(i, 0, T::of(dp / n as f64));
    }
    let cls_loss = cls_sum / n as f64;

    // Regression: bin CE + residual smooth-L1 over foreground points.
    let n_pos = targets.iter().filter(|t| t.is_some()).count();
    let mut bin_sum = 0.0;
    let mut res_sum = 0.0;
    if n_pos > 0 {
        let inv_pos = 1.0 / n_pos as f64;
        // d total / d reg element = lambda * inv_pos * d term.
        let reg_scale = T::of(lambda * inv_pos);
        for (i, target) in targets.iter().enumerate() {
            let Some(t) = target else { continue };
            let row = reg.row(i);
            let grad_row = grad_reg.row_mut(i);
            let direct = layout.bins_x == 0;
            if !direct {
                for (range, bin) in [
                    (layout.logits_x(), t.bin_x),
                    (layout.logits_y(), t.bin_y),
                    (layout.logits_z(), t.bin_z),
                    (layout.logits_theta(), t.bin_theta),
                ] {
                    let (ce, grad) = cross_entropy_logits(&row[range.clone()], bin)?;
                    bin_sum += ce;
                    for (g, d) in grad_row[range].iter_mut().zip(grad) {
                        *g += reg_scale * d;
                    }
                }
            }
            // Center/heading residuals belong to the bin term; size
            // residuals form the residual term.
            let center_targets = [t.res_x, t.res_y, t.res_z, t.res_theta];
            for (k, &rt) in center_targets.iter().enumerate() {
                let idx = layout.residual(k);
                let (v, d) = smooth_l1_grad(row[idx].as_f64() - rt);
                bin_sum += v;
                grad_row[idx] += reg_scale * T::of(d);
            }
            let size_targets = [t.res_w, t.res_h, t.res_l];
            for (k, &rt) in size_targets.iter().enumerate() {
                let idx = layout.residual(4 + k);
                let (v, d) = smooth_l1_grad(row[idx].as_f64() - rt);
                res_sum += v;
                grad_row[idx] += reg_scale * T::of(d);
            }
        }
        bin_sum *= inv_pos;
        res_sum *= inv_pos;
    }

    let total = cls_loss + lambda * (bin_sum + res_sum);
    if !total.is_finite() {
        return Err(Error::NonFinite("total loss".into()));
    }
    Ok(TotalLoss {
        breakdown: LossBreakdown {
            cls_loss,
            bin_loss: bin_sum,
            res_loss: res_sum,
            total,
            n_pos,
        },
        grad_probs,
        grad_reg,
    })
}
