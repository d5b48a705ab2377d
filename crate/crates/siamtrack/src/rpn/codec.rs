//! Bin-based box encoding and decoding.
//!
//! Each axis offset between a foreground point and the target center is
//! classified into a fixed-length bin and refined by a residual normalized
//! by the bin length: `bin = floor((u_t - u_i + S) / l)` and
//! `res = (u_t - u_i + S - (bin*l + l/2)) / C` with `C = l`. The heading
//! works the same way over the full circle (`S = pi`, `l = 2*pi/n`). Sizes
//! are plain residuals against the class anchor.

use serde::{Deserialize, Serialize};

use super::AnchorSizes;
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Box3D, Vec3};

/// Version of the regression-head channel layout; stored in checkpoints.
pub const LAYOUT_VERSION: u32 = 1;

/// Search-range / bin-length configuration for the codec.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinConfig {
    /// Half search range along x and z (horizontal axes), meters.
    pub s_xz: f64,
    /// Half search range along the vertical axis, meters.
    pub s_y: f64,
    /// Bin length along x and z, meters.
    pub l_xz: f64,
    /// Bin length along the vertical axis, meters.
    pub l_y: f64,
    /// Number of orientation bins over the full circle.
    pub n_theta: usize,
    /// Regress plain per-axis offsets instead of bins (ablation option).
    pub direct_regression: bool,
}

impl Default for BinConfig {
    fn default() -> Self {
        Self {
            s_xz: 3.0,
            s_y: 0.5,
            l_xz: 0.5,
            l_y: 0.25,
            n_theta: 12,
            direct_regression: false,
        }
    }
}

impl BinConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, s, l) in [("xz", self.s_xz, self.l_xz), ("y", self.s_y, self.l_y)] {
            if !(s > 0.0 && l > 0.0) {
                return Err(Error::Config(format!("bin config {name}: S and l must be positive")));
            }
            let bins = 2.0 * s / l;
            if (bins - bins.round()).abs() > 1e-9 || bins.round() < 1.0 {
                return Err(Error::Config(format!(
                    "bin config {name}: 2S/l = {bins} must be a positive integer"
                )));
            }
        }
        if self.n_theta == 0 {
            return Err(Error::Config("bin config: n_theta must be >= 1".into()));
        }
        Ok(())
    }

    pub fn bins_xz(&self) -> usize {
        (2.0 * self.s_xz / self.l_xz).round() as usize
    }

    pub fn bins_y(&self) -> usize {
        (2.0 * self.s_y / self.l_y).round() as usize
    }

    /// Orientation bin length, radians.
    pub fn l_theta(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.n_theta as f64
    }

    pub fn layout(&self) -> ChannelLayout {
        ChannelLayout {
            version: LAYOUT_VERSION,
            bins_x: if self.direct_regression { 0 } else { self.bins_xz() },
            bins_y: if self.direct_regression { 0 } else { self.bins_y() },
            bins_z: if self.direct_regression { 0 } else { self.bins_xz() },
            bins_theta: if self.direct_regression { 0 } else { self.n_theta },
        }
    }
}

/// Frozen channel layout of one regression-head output row:
/// bin logits for x, y, z, theta followed by the seven residuals
/// (x, y, z, theta, w, h, l). With direct regression all bin counts are 0
/// and only the residual block remains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelLayout {
    pub version: u32,
    pub bins_x: usize,
    pub bins_y: usize,
    pub bins_z: usize,
    pub bins_theta: usize,
}

impl ChannelLayout {
    pub const RESIDUALS: usize = 7;

    pub fn logits_x(&self) -> std::ops::Range<usize> {
        0..self.bins_x
    }

    pub fn logits_y(&self) -> std::ops::Range<usize> {
        self.bins_x..self.bins_x + self.bins_y
    }

    pub fn logits_z(&self) -> std::ops::Range<usize> {
        let s = self.bins_x + self.bins_y;
        s..s + self.bins_z
    }

    pub fn logits_theta(&self) -> std::ops::Range<usize> {
        let s = self.bins_x + self.bins_y + self.bins_z;
        s..s + self.bins_theta
    }

    /// Index of one of the residual channels, 0 = x .. 6 = l.
    pub fn residual(&self, k: usize) -> usize {
        debug_assert!(k < Self::RESIDUALS);
        self.bins_x + self.bins_y + self.bins_z + self.bins_theta + k
    }

    pub fn channels(&self) -> usize {
        self.bins_x + self.bins_y + self.bins_z + self.bins_theta + Self::RESIDUALS
    }
}

/// Bin-coded regression targets of a ground-truth box relative to one
/// foreground point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BinTargets {
    pub bin_x: usize,
    pub bin_y: usize,
    pub bin_z: usize,
    pub bin_theta: usize,
    pub res_x: f64,
    pub res_y: f64,
    pub res_z: f64,
    pub res_theta: f64,
    pub res_w: f64,
    pub res_h: f64,
    pub res_l: f64,
}

fn encode_axis(offset: f64, s: f64, l: f64, bins: usize) -> (usize, f64) {
    let shifted = offset + s;
    let bin = (shifted / l).floor().clamp(0.0, (bins - 1) as f64) as usize;
    let res = (shifted - (bin as f64 * l + l / 2.0)) / l;
    (bin, res)
}

/// Targets for a point within range of the target center, `None` when the
/// offset leaves the search range on some axis (such points are excluded
/// from the regression loss rather than clamped).
pub fn encode_targets(
    point: Vec3,
    gt: &Box3D,
    anchor: &AnchorSizes,
    cfg: &BinConfig,
) -> Option<BinTargets> {
    let dx = gt.cx - point.x;
    let dy = gt.cz - point.z; // vertical axis
    let dz = gt.cy - point.y; // second horizontal axis
    if dx.abs() > cfg.s_xz || dz.abs() > cfg.s_xz || dy.abs() > cfg.s_y {
        return None;
    }
    let (bin_x, res_x) = encode_axis(dx, cfg.s_xz, cfg.l_xz, cfg.bins_xz());
    let (bin_z, res_z) = encode_axis(dz, cfg.s_xz, cfg.l_xz, cfg.bins_xz());
    let (bin_y, res_y) = encode_axis(dy, cfg.s_y, cfg.l_y, cfg.bins_y());
    let lt = cfg.l_theta();
    let (bin_theta, res_theta) =
        encode_axis(wrap_angle(gt.ry), std::f64::consts::PI, lt, cfg.n_theta);
    Some(BinTargets {
        bin_x,
        bin_y,
        bin_z,
        bin_theta,
        res_x,
        res_y,
        res_z,
        res_theta,
        res_w: (gt.w - anchor.w) / anchor.w,
        res_h: (gt.h - anchor.h) / anchor.h,
        res_l: (gt.l - anchor.l) / anchor.l,
    })
}

fn argmax(slice: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in slice.iter().enumerate() {
        if v > slice[best] {
            best = i;
        }
    }
    best
}

fn decode_axis(base: f64, bin: usize, res: f64, s: f64, l: f64) -> f64 {
    base - s + bin as f64 * l + l / 2.0 + res * l
}

/// Smallest decoded box size; keeps degenerate regressions representable.
const MIN_SIZE: f64 = 1e-3;

/// Decode one regression row (see [`ChannelLayout`]) into a box.
pub fn decode_proposal(
    point: Vec3,
    reg_row: &[f64],
    anchor: &AnchorSizes,
    cfg: &BinConfig,
) -> Result<Box3D> {
    let layout = cfg.layout();
    if reg_row.len() != layout.channels() {
        return Err(Error::shape(
            "decode_proposal",
            format!("{} channels", layout.channels()),
            format!("{}", reg_row.len()),
        ));
    }
    let res = |k: usize| reg_row[layout.residual(k)];
    // Codec axis naming: "x"/"z" are the horizontal axes (world x and y),
    // "y" is the vertical axis (world z).
    let (cx, cy, cz, ry) = if cfg.direct_regression {
        (
            point.x + res(0),
            point.y + res(2),
            point.z + res(1),
            wrap_angle(res(3)),
        )
    } else {
        let bx = argmax(&reg_row[layout.logits_x()]);
        let by = argmax(&reg_row[layout.logits_y()]);
        let bz = argmax(&reg_row[layout.logits_z()]);
        let bt = argmax(&reg_row[layout.logits_theta()]);
        let lt = cfg.l_theta();
        (
            decode_axis(point.x, bx, res(0), cfg.s_xz, cfg.l_xz),
            decode_axis(point.y, bz, res(2), cfg.s_xz, cfg.l_xz),
            decode_axis(point.z, by, res(1), cfg.s_y, cfg.l_y),
            wrap_angle(decode_axis(0.0, bt, res(3), std::f64::consts::PI, lt)),
        )
    };
    Box3D::new(
        cx,
        cy,
        cz,
        (anchor.w * (1.0 + res(4))).max(MIN_SIZE),
        (anchor.h * (1.0 + res(5))).max(MIN_SIZE),
        (anchor.l * (1.0 + res(6))).max(MIN_SIZE),
        ry,
    )
}

/// A regression row that reproduces `targets` exactly: saturated logits at
/// the true bins plus the exact residuals. Used by tests and the
/// oracle-network tracking harness.
pub fn targets_to_reg_row(targets: &BinTargets, cfg: &BinConfig) -> Vec<f64> {
    let layout = cfg.layout();
    let mut row = vec![0.0; layout.channels()];
    if !cfg.direct_regression {
        const HOT: f64 = 50.0;
        row[layout.logits_x()][targets.bin_x] = HOT;
        row[layout.logits_y()][targets.bin_y] = HOT;
        row[layout.logits_z()][targets.bin_z] = HOT;
        row[layout.logits_theta()][targets.bin_theta] = HOT;
    }
    row[layout.residual(0)] = targets.res_x;
    row[layout.residual(1)] = targets.res_y;
    row[layout.residual(2)] = targets.res_z;
    row[layout.residual(3)] = targets.res_theta;
    row[layout.residual(4)] = targets.res_w;
    row[layout.residual(5)] = targets.res_h;
    row[layout.residual(6)] = targets.res_l;
    row
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn anchor() -> AnchorSizes {
        AnchorSizes::new(1.6, 1.5, 3.9).unwrap()
    }

    #[test]
    fn default_layout_is_forty_seven_channels() {
        let cfg = BinConfig::default();
        cfg.validate().unwrap();
        let layout = cfg.layout();
        assert_eq!((layout.bins_x, layout.bins_y, layout.bins_z, layout.bins_theta), (12, 4, 12, 12));
        assert_eq!(layout.channels(), 47);
        assert_eq!(layout.version, LAYOUT_VERSION);
    }

    #[test]
    fn direct_layout_is_seven_channels() {
        let cfg = BinConfig { direct_regression: true, ..BinConfig::default() };
        assert_eq!(cfg.layout().channels(), 7);
    }

    #[test]
    fn invalid_bin_ratio_rejected() {
        let cfg = BinConfig { l_xz: 0.7, ..BinConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn target_at_the_point_lands_in_center_bin() {
        let cfg = BinConfig::default();
        let gt = Box3D::new(1.0, 2.0, 0.5, 1.6, 1.5, 3.9, 0.0).unwrap();
        let t = encode_targets(Vec3::new(1.0, 2.0, 0.5), &gt, &anchor(), &cfg).unwrap();
        assert_eq!((t.bin_x, t.bin_z), (6, 6));
        assert_eq!(t.bin_y, 2);
        assert!((t.res_x + 0.5).abs() < 1e-12);
        assert!((t.res_z + 0.5).abs() < 1e-12);
        assert!((t.res_y + 0.5).abs() < 1e-12);
        // Size equals the anchor -> zero size residuals.
        assert_eq!((t.res_w, t.res_h, t.res_l), (0.0, 0.0, 0.0));
    }

    #[test]
    fn offset_at_bin_center_has_zero_residual() {
        let cfg = BinConfig::default();
        let gt = Box3D::new(0.25, 0.0, 0.0, 1.6, 1.5, 3.9, 0.0).unwrap();
        let t = encode_targets(Vec3::ZERO, &gt, &anchor(), &cfg).unwrap();
        assert_eq!(t.bin_x, 6);
        assert!(t.res_x.abs() < 1e-12);
    }

    #[test]
    fn boundary_offset_hits_bin_zero() {
        let cfg = BinConfig::default();
        let gt = Box3D::new(-3.0, 0.0, 0.0, 1.6, 1.5, 3.9, 0.0).unwrap();
        let t = encode_targets(Vec3::ZERO, &gt, &anchor(), &cfg).unwrap();
        assert_eq!(t.bin_x, 0);
        assert!((t.res_x + 0.5).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_offsets_are_flagged() {
        let cfg = BinConfig::default();
        let far = Box3D::new(3.5, 0.0, 0.0, 1.6, 1.5, 3.9, 0.0).unwrap();
        assert!(encode_targets(Vec3::ZERO, &far, &anchor(), &cfg).is_none());
        let high = Box3D::new(0.0, 0.0, 0.8, 1.6, 1.5, 3.9, 0.0).unwrap();
        assert!(encode_targets(Vec3::ZERO, &high, &anchor(), &cfg).is_none());
    }

    #[test]
    fn roundtrip_reconstructs_the_box() {
        let cfg = BinConfig::default();
        let a = anchor();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..10_000 {
            let point = Vec3::new(
                rng.gen_range(-20.0..20.0),
                rng.gen_range(-20.0..20.0),
                rng.gen_range(-2.0..2.0),
            );
            let gt = Box3D::new(
                point.x + rng.gen_range(-3.0..3.0),
                point.y + rng.gen_range(-3.0..3.0),
                point.z + rng.gen_range(-0.5..0.5),
                rng.gen_range(0.5..3.0),
                rng.gen_range(0.5..3.0),
                rng.gen_range(0.5..6.0),
                rng.gen_range(-4.0..4.0),
            )
            .unwrap();
            let t = encode_targets(point, &gt, &a, &cfg).unwrap();
            let row = targets_to_reg_row(&t, &cfg);
            let decoded = decode_proposal(point, &row, &a, &cfg).unwrap();
            assert!((decoded.cx - gt.cx).abs() < 1e-9);
            assert!((decoded.cy - gt.cy).abs() < 1e-9);
            assert!((decoded.cz - gt.cz).abs() < 1e-9);
            assert!(wrap_angle(decoded.ry - gt.ry).abs() < 1e-9);
            assert!((decoded.w - gt.w).abs() < 1e-12);
            assert!((decoded.h - gt.h).abs() < 1e-12);
            assert!((decoded.l - gt.l).abs() < 1e-12);
        }
    }

    #[test]
    fn bin_only_reconstruction_error_is_bounded_by_half_bin() {
        let cfg = BinConfig::default();
        let a = anchor();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..2000 {
            let point = Vec3::ZERO;
            let gt = Box3D::new(
                rng.gen_range(-2.9..2.9),
                rng.gen_range(-2.9..2.9),
                rng.gen_range(-0.45..0.45),
                1.6,
                1.5,
                3.9,
                rng.gen_range(-3.1..3.1),
            )
            .unwrap();
            let t = encode_targets(point, &gt, &a, &cfg).unwrap();
            let zeroed = BinTargets {
                res_x: 0.0,
                res_y: 0.0,
                res_z: 0.0,
                res_theta: 0.0,
                ..t
            };
            let row = targets_to_reg_row(&zeroed, &cfg);
            let d = decode_proposal(point, &row, &a, &cfg).unwrap();
            assert!((d.cx - gt.cx).abs() <= cfg.l_xz / 2.0 + 1e-12);
            assert!((d.cy - gt.cy).abs() <= cfg.l_xz / 2.0 + 1e-12);
            assert!((d.cz - gt.cz).abs() <= cfg.l_y / 2.0 + 1e-12);
            assert!(wrap_angle(d.ry - gt.ry).abs() <= cfg.l_theta() / 2.0 + 1e-12);
        }
    }

    #[test]
    fn zero_residual_center_bin_offsets_by_half_bin_term() {
        let cfg = BinConfig::default();
        let a = anchor();
        let layout = cfg.layout();
        let mut row = vec![0.0; layout.channels()];
        row[layout.logits_x()][6] = 1.0;
        row[layout.logits_y()][2] = 1.0;
        row[layout.logits_z()][6] = 1.0;
        row[layout.logits_theta()][6] = 1.0;
        let d = decode_proposal(Vec3::ZERO, &row, &a, &cfg).unwrap();
        // -S + 6*l + l/2 = -3 + 3 + 0.25
        assert!((d.cx - 0.25).abs() < 1e-12);
        assert!((d.cy - 0.25).abs() < 1e-12);
        // y axis: -0.5 + 2*0.25 + 0.125
        assert!((d.cz - 0.125).abs() < 1e-12);
        // Anchor sizes with zero size residuals.
        assert_eq!((d.w, d.h, d.l), (a.w, a.h, a.l));
    }

    #[test]
    fn decode_is_translation_equivariant() {
        let cfg = BinConfig::default();
        let a = anchor();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..200 {
            let layout = cfg.layout();
            let row: Vec<f64> = (0..layout.channels()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let p = Vec3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-1.0..1.0));
            let shift = Vec3::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0), rng.gen_range(-3.0..3.0));
            let d0 = decode_proposal(p, &row, &a, &cfg).unwrap();
            let d1 = decode_proposal(p + shift, &row, &a, &cfg).unwrap();
            assert!((d1.cx - d0.cx - shift.x).abs() < 1e-12);
            assert!((d1.cy - d0.cy - shift.y).abs() < 1e-12);
            assert!((d1.cz - d0.cz - shift.z).abs() < 1e-12);
            assert_eq!(d0.ry, d1.ry);
        }
    }

    #[test]
    fn direct_regression_roundtrip() {
        let cfg = BinConfig { direct_regression: true, ..BinConfig::default() };
        let a = anchor();
        let p = Vec3::new(1.0, -2.0, 0.3);
        let row = vec![0.5, -0.2, 1.5, 0.7, 0.1, -0.1, 0.2];
        let d = decode_proposal(p, &row, &a, &cfg).unwrap();
        assert!((d.cx - 1.5).abs() < 1e-12);
        assert!((d.cz - 0.1).abs() < 1e-12);
        assert!((d.cy + 0.5).abs() < 1e-12);
        assert!((d.ry - 0.7).abs() < 1e-12);
        assert!((d.w - a.w * 1.1).abs() < 1e-12);
    }
}
