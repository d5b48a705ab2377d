//! Oriented 3D boxes, rotated-box IoU, rigid transforms and point-cloud
//! cropping/resampling.
//!
//! World frame convention: x forward, y left, z up. A [`Box3D`] stores its
//! length `l` along the heading direction, width `w` perpendicular to it and
//! height `h` vertically; `ry` is the heading angle about the vertical axis,
//! normalized to `(-pi, pi]`.

mod polygon;

use rand::seq::index::sample as index_sample;
use rand::Rng;

use crate::error::{Error, Result};
pub use polygon::Vec2;

/// Angle wrapped into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut r = (a + std::f64::consts::PI).rem_euclid(two_pi);
    if r == 0.0 {
        // -pi and +pi are the same heading; keep the +pi representative.
        r = two_pi;
    }
    r - std::f64::consts::PI
}

/// 3-vector in meters.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Self = Self { x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    /// Squared distance; avoids the sqrt in hot loops.
    pub fn distance_sq(self, o: Vec3) -> f64 {
        let d = self - o;
        d.dot(d)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl std::ops::Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl std::ops::Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl std::ops::Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

/// Oriented 3D bounding box: center, sizes and BEV heading.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Box3D {
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    /// Width, perpendicular to the heading (> 0).
    pub w: f64,
    /// Height, vertical extent (> 0).
    pub h: f64,
    /// Length, along the heading (> 0).
    pub l: f64,
    /// Heading about the vertical axis, in `(-pi, pi]`.
    pub ry: f64,
}

impl Box3D {
    /// Validating constructor: sizes must be strictly positive and finite;
    /// `ry` is normalized into `(-pi, pi]`.
    pub fn new(cx: f64, cy: f64, cz: f64, w: f64, h: f64, l: f64, ry: f64) -> Result<Self> {
        if !(w > 0.0 && h > 0.0 && l > 0.0) {
            return Err(Error::Geometry(format!(
                "box sizes must be positive, got w={w} h={h} l={l}"
            )));
        }
        for (name, v) in [("cx", cx), ("cy", cy), ("cz", cz), ("w", w), ("h", h), ("l", l), ("ry", ry)] {
            if !v.is_finite() {
                return Err(Error::Geometry(format!("box field {name} is not finite")));
            }
        }
        Ok(Self { cx, cy, cz, w, h, l, ry: wrap_angle(ry) })
    }

    pub fn center(&self) -> Vec3 {
        Vec3::new(self.cx, self.cy, self.cz)
    }

    pub fn volume(&self) -> f64 {
        self.w * self.h * self.l
    }

    /// BEV footprint corners in counterclockwise order.
    pub fn bev_corners(&self) -> [Vec2; 4] {
        let (s, c) = self.ry.sin_cos();
        let hl = self.l * 0.5;
        let hw = self.w * 0.5;
        let corner = |u: f64, v: f64| Vec2 {
            x: self.cx + c * u - s * v,
            y: self.cy + s * u + c * v,
        };
        [corner(hl, hw), corner(-hl, hw), corner(-hl, -hw), corner(hl, -hw)]
    }

    fn sort_key(&self) -> [f64; 7] {
        [self.cx, self.cy, self.cz, self.w, self.h, self.l, self.ry]
    }
}

/// Raw point cloud with optional per-point intensity.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub intensity: Option<Vec<f64>>,
}

impl PointCloud {
    pub fn from_points(points: Vec<Vec3>) -> Self {
        Self { points, intensity: None }
    }

    pub fn with_intensity(points: Vec<Vec3>, intensity: Vec<f64>) -> Result<Self> {
        if intensity.len() != points.len() {
            return Err(Error::shape(
                "PointCloud::with_intensity",
                format!("{} intensities", points.len()),
                format!("{}", intensity.len()),
            ));
        }
        Ok(Self { points, intensity: Some(intensity) })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Subset by indices; intensity follows along.
    pub fn select(&self, idx: &[usize]) -> PointCloud {
        PointCloud {
            points: idx.iter().map(|&i| self.points[i]).collect(),
            intensity: self
                .intensity
                .as_ref()
                .map(|ints| idx.iter().map(|&i| ints[i]).collect()),
        }
    }

    /// Concatenate two clouds. Intensity is kept only if both sides have it.
    pub fn concat(&self, other: &PointCloud) -> PointCloud {
        let mut points = self.points.clone();
        points.extend_from_slice(&other.points);
        let intensity = match (&self.intensity, &other.intensity) {
            (Some(a), Some(b)) => {
                let mut v = a.clone();
                v.extend_from_slice(b);
                Some(v)
            }
            _ => None,
        };
        PointCloud { points, intensity }
    }
}

/// True iff `p` lies inside (or on the boundary of) the oriented box.
pub fn point_in_box(p: Vec3, b: &Box3D) -> bool {
    let dx = p.x - b.cx;
    let dy = p.y - b.cy;
    let dz = p.z - b.cz;
    let (s, c) = b.ry.sin_cos();
    // Rotate the offset by -ry: u is along the heading, v lateral.
    let u = c * dx + s * dy;
    let v = -s * dx + c * dy;
    u.abs() <= b.l * 0.5 && v.abs() <= b.w * 0.5 && dz.abs() <= b.h * 0.5
}

/// Intersections below this area count as empty (degenerate contact).
const MIN_INTERSECTION_AREA: f64 = 1e-12;

/// BEV intersection area of the two boxes' rotated footprints.
///
/// Argument order is canonicalized before clipping so the result is exactly
/// symmetric despite floating-point clipping.
fn bev_intersection_area(a: &Box3D, b: &Box3D) -> f64 {
    let (first, second) = if a.sort_key() <= b.sort_key() { (a, b) } else { (b, a) };
    let inter = polygon::clip_convex(&first.bev_corners(), &second.bev_corners());
    let area = polygon::area(&inter);
    if area < MIN_INTERSECTION_AREA {
        0.0
    } else {
        area
    }
}

/// BEV footprint area from the same corner arithmetic the clipper uses, so
/// that self-intersection divides out to exactly 1.
fn bev_area(b: &Box3D) -> f64 {
    polygon::area(&b.bev_corners())
}

/// IoU of the two boxes' BEV footprints, in `[0, 1]`.
pub fn box_iou_bev(a: &Box3D, b: &Box3D) -> f64 {
    let inter = bev_intersection_area(a, b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = bev_area(a) + bev_area(b) - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// 3D IoU: BEV intersection times vertical overlap over the volume union.
pub fn box_iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    let bev = bev_intersection_area(a, b);
    if bev == 0.0 {
        return 0.0;
    }
    let lo = (a.cz - a.h * 0.5).max(b.cz - b.h * 0.5);
    let hi = (a.cz + a.h * 0.5).min(b.cz + b.h * 0.5);
    let dz = hi - lo;
    if dz <= 0.0 {
        return 0.0;
    }
    let inter = bev * dz;
    let union = bev_area(a) * a.h + bev_area(b) * b.h - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Search-area construction: grow the horizontal extents by `d` on each side
/// (`l -> l + 2d`, `w -> w + 2d`); vertical extent and heading unchanged.
pub fn enlarge_box(b: &Box3D, d: f64) -> Box3D {
    debug_assert!(d >= 0.0, "enlarge margin must be nonnegative");
    Box3D {
        w: b.w + 2.0 * d,
        l: b.l + 2.0 * d,
        ..*b
    }
}

/// Points of `c` inside `b`, original order preserved. May be empty.
pub fn crop_by_box(c: &PointCloud, b: &Box3D) -> PointCloud {
    let idx: Vec<usize> = c
        .points
        .iter()
        .enumerate()
        .filter(|(_, p)| point_in_box(**p, b))
        .map(|(i, _)| i)
        .collect();
    c.select(&idx)
}

/// Resample to exactly `n` points: without replacement when the cloud is
/// large enough, with replacement (duplication) otherwise. Deterministic for
/// a given generator state.
pub fn resample(c: &PointCloud, n: usize, rng: &mut impl Rng) -> Result<PointCloud> {
    if c.is_empty() {
        return Err(Error::EmptyCloud("resample"));
    }
    if n == 0 {
        return Err(Error::Geometry("resample target size must be >= 1".into()));
    }
    let idx: Vec<usize> = if c.len() >= n {
        index_sample(rng, c.len(), n).into_vec()
    } else {
        (0..n).map(|_| rng.gen_range(0..c.len())).collect()
    };
    Ok(c.select(&idx))
}

/// Rigid transform: proper rotation plus translation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    /// Row-major 3x3 rotation.
    pub r: [[f64; 3]; 3],
    pub t: Vec3,
}

impl RigidTransform {
    const ORTHO_TOL: f64 = 1e-6;

    /// Validating constructor: rejects rotations that are not orthonormal
    /// with determinant +1 (to 1e-6).
    pub fn new(r: [[f64; 3]; 3], t: Vec3) -> Result<Self> {
        // R R^T must be the identity.
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                if (dot - expected).abs() > Self::ORTHO_TOL {
                    return Err(Error::Geometry(format!(
                        "rotation is not orthonormal (row {i} . row {j} = {dot})"
                    )));
                }
            }
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        if (det - 1.0).abs() > Self::ORTHO_TOL {
            return Err(Error::Geometry(format!("rotation determinant {det} != +1")));
        }
        Ok(Self { r, t })
    }

    pub fn identity() -> Self {
        Self {
            r: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            t: Vec3::ZERO,
        }
    }

    pub fn translation(t: Vec3) -> Self {
        Self { t, ..Self::identity() }
    }

    /// Rotation about the vertical axis by `yaw`.
    pub fn yaw_about_z(yaw: f64) -> Self {
        let (s, c) = yaw.sin_cos();
        Self {
            r: [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
            t: Vec3::ZERO,
        }
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        Vec3::new(
            self.r[0][0] * p.x + self.r[0][1] * p.y + self.r[0][2] * p.z + self.t.x,
            self.r[1][0] * p.x + self.r[1][1] * p.y + self.r[1][2] * p.z + self.t.y,
            self.r[2][0] * p.x + self.r[2][1] * p.y + self.r[2][2] * p.z + self.t.z,
        )
    }

    /// Rotate a direction (no translation).
    pub fn rotate(&self, p: Vec3) -> Vec3 {
        Vec3::new(
            self.r[0][0] * p.x + self.r[0][1] * p.y + self.r[0][2] * p.z,
            self.r[1][0] * p.x + self.r[1][1] * p.y + self.r[1][2] * p.z,
            self.r[2][0] * p.x + self.r[2][1] * p.y + self.r[2][2] * p.z,
        )
    }

    /// `self` after `first`: `(self ∘ first)(p) = self(first(p))`.
    pub fn compose(&self, first: &RigidTransform) -> RigidTransform {
        let mut r = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                r[i][j] = (0..3).map(|k| self.r[i][k] * first.r[k][j]).sum();
            }
        }
        RigidTransform { r, t: self.rotate(first.t) + self.t }
    }

    pub fn inverse(&self) -> RigidTransform {
        let mut rt = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                rt[i][j] = self.r[j][i];
            }
        }
        let inv = RigidTransform { r: rt, t: Vec3::ZERO };
        let t = inv.rotate(self.t) * -1.0;
        RigidTransform { r: rt, t }
    }

    /// Heading change induced in the horizontal plane.
    pub fn yaw(&self) -> f64 {
        self.r[1][0].atan2(self.r[0][0])
    }
}

/// Rigidly transform every point of a cloud.
pub fn apply_transform(t: &RigidTransform, c: &PointCloud) -> PointCloud {
    PointCloud {
        points: c.points.iter().map(|&p| t.apply(p)).collect(),
        intensity: c.intensity.clone(),
    }
}

/// Transform a box: center is mapped, heading adjusted by the transform's
/// yaw, sizes unchanged.
pub fn apply_to_box(t: &RigidTransform, b: &Box3D) -> Box3D {
    let c = t.apply(b.center());
    Box3D {
        cx: c.x,
        cy: c.y,
        cz: c.z,
        ry: wrap_angle(b.ry + t.yaw()),
        ..*b
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_cube_at(x: f64, y: f64, z: f64, ry: f64) -> Box3D {
        Box3D::new(x, y, z, 1.0, 1.0, 1.0, ry).unwrap()
    }

    /// Independent oracle: rotate the point into the box frame via an
    /// explicit rotation matrix and compare against the half extents.
    fn point_in_box_oracle(p: Vec3, b: &Box3D) -> bool {
        let rot = RigidTransform::yaw_about_z(-b.ry);
        let local = rot.apply(p - b.center());
        local.x.abs() <= b.l * 0.5 && local.y.abs() <= b.w * 0.5 && local.z.abs() <= b.h * 0.5
    }

    #[test]
    fn center_is_inside() {
        let b = Box3D::new(1.0, -2.0, 0.5, 2.0, 1.5, 4.0, 0.7).unwrap();
        assert!(point_in_box(b.center(), &b));
    }

    #[test]
    fn boundary_counts_as_inside() {
        let b = unit_cube_at(0.0, 0.0, 0.0, 0.0);
        assert!(point_in_box(Vec3::new(0.5, 0.0, 0.0), &b));
        assert!(!point_in_box(Vec3::new(0.5 + 1e-9, 0.0, 0.0), &b));
    }

    #[test]
    fn rotated_membership_matches_frame_oracle() {
        let b = unit_cube_at(0.0, 0.0, 0.0, std::f64::consts::FRAC_PI_4);
        let p = Vec3::new(0.6, 0.0, 0.0);
        assert_eq!(point_in_box(p, &b), point_in_box_oracle(p, &b));

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..2000 {
            let b = Box3D::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(0.3..3.0),
                rng.gen_range(0.3..3.0),
                rng.gen_range(0.3..3.0),
                rng.gen_range(-4.0..4.0),
            )
            .unwrap();
            let p = Vec3::new(
                rng.gen_range(-4.0..4.0),
                rng.gen_range(-4.0..4.0),
                rng.gen_range(-3.0..3.0),
            );
            assert_eq!(point_in_box(p, &b), point_in_box_oracle(p, &b));
        }
    }

    #[test]
    fn iou_identity_is_one() {
        let b = Box3D::new(3.0, -1.0, 0.2, 1.8, 1.5, 4.2, 0.9).unwrap();
        assert!((box_iou_bev(&b, &b) - 1.0).abs() < 1e-9);
        assert!((box_iou_3d(&b, &b) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn iou_disjoint_is_zero() {
        let a = unit_cube_at(0.0, 0.0, 0.0, 0.0);
        let b = unit_cube_at(100.0, 0.0, 0.0, 0.3);
        assert_eq!(box_iou_bev(&a, &b), 0.0);
        assert_eq!(box_iou_3d(&a, &b), 0.0);
    }

    #[test]
    fn half_shifted_unit_squares_give_one_third() {
        let a = unit_cube_at(0.0, 0.0, 0.0, 0.0);
        let b = unit_cube_at(0.5, 0.0, 0.0, 0.0);
        assert!((box_iou_bev(&a, &b) - 1.0 / 3.0).abs() < 1e-9);
        assert!((box_iou_3d(&a, &b) - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn stacked_boxes_have_zero_3d_iou() {
        let a = unit_cube_at(0.0, 0.0, 0.0, 0.0);
        let b = unit_cube_at(0.0, 0.0, 1.0, 0.0);
        assert_eq!(box_iou_3d(&a, &b), 0.0);
    }

    fn random_box(rng: &mut ChaCha8Rng) -> Box3D {
        Box3D::new(
            rng.gen_range(-1.5..1.5),
            rng.gen_range(-1.5..1.5),
            rng.gen_range(-0.5..0.5),
            rng.gen_range(1.0..3.0),
            rng.gen_range(1.0..3.0),
            rng.gen_range(1.0..3.0),
            rng.gen_range(-3.2..3.2),
        )
        .unwrap()
    }

    /// Monte-Carlo estimate of the BEV IoU by uniform sampling over the
    /// joint bounding rectangle.
    pub(crate) fn monte_carlo_bev_iou(a: &Box3D, b: &Box3D, samples: usize, seed: u64) -> f64 {
        let corners: Vec<Vec2> = a.bev_corners().into_iter().chain(b.bev_corners()).collect();
        let min_x = corners.iter().map(|c| c.x).fold(f64::INFINITY, f64::min);
        let max_x = corners.iter().map(|c| c.x).fold(f64::NEG_INFINITY, f64::max);
        let min_y = corners.iter().map(|c| c.y).fold(f64::INFINITY, f64::min);
        let max_y = corners.iter().map(|c| c.y).fold(f64::NEG_INFINITY, f64::max);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut n_a, mut n_b, mut n_ab) = (0u64, 0u64, 0u64);
        let in_bev = |p: Vec2, bx: &Box3D| point_in_box(Vec3::new(p.x, p.y, bx.cz), bx);
        for _ in 0..samples {
            let p = Vec2 {
                x: rng.gen_range(min_x..max_x),
                y: rng.gen_range(min_y..max_y),
            };
            let ia = in_bev(p, a);
            let ib = in_bev(p, b);
            n_a += ia as u64;
            n_b += ib as u64;
            n_ab += (ia && ib) as u64;
        }
        let union = n_a + n_b - n_ab;
        if union == 0 {
            0.0
        } else {
            n_ab as f64 / union as f64
        }
    }

    #[test]
    fn bev_iou_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..20 {
            let a = random_box(&mut rng);
            let b = random_box(&mut rng);
            let exact = box_iou_bev(&a, &b);
            let mc = monte_carlo_bev_iou(&a, &b, 1_000_000, 1000 + trial);
            assert!(
                (exact - mc).abs() < 0.01,
                "trial {trial}: exact {exact} vs MC {mc}"
            );
        }
    }

    #[test]
    fn iou_symmetry_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let a = random_box(&mut rng);
            let b = random_box(&mut rng);
            assert_eq!(box_iou_bev(&a, &b), box_iou_bev(&b, &a));
            assert_eq!(box_iou_3d(&a, &b), box_iou_3d(&b, &a));
        }
    }

    #[test]
    fn iou_rotation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let a = random_box(&mut rng);
            let b = random_box(&mut rng);
            let yaw = rng.gen_range(-3.0..3.0);
            let t = RigidTransform::yaw_about_z(yaw);
            let (ar, br) = (apply_to_box(&t, &a), apply_to_box(&t, &b));
            assert!((box_iou_bev(&a, &b) - box_iou_bev(&ar, &br)).abs() < 1e-6);
            assert!((box_iou_3d(&a, &b) - box_iou_3d(&ar, &br)).abs() < 1e-6);
        }
    }

    #[test]
    fn enlarge_zero_is_identity() {
        let b = Box3D::new(1.0, 2.0, 3.0, 2.0, 1.5, 4.0, 0.3).unwrap();
        assert_eq!(enlarge_box(&b, 0.0), b);
    }

    #[test]
    fn enlarge_grows_only_horizontal_extents() {
        let car = Box3D::new(0.0, 0.0, 0.0, 2.0, 1.5, 4.0, 0.0).unwrap();
        let g = enlarge_box(&car, 1.0);
        assert_eq!((g.l, g.w, g.h), (6.0, 4.0, 1.5));

        let ped = Box3D::new(0.0, 0.0, 0.0, 0.6, 1.7, 0.8, 0.0).unwrap();
        let g = enlarge_box(&ped, 0.5);
        assert_eq!((g.l, g.w, g.h), (1.8, 1.6, 1.7));
    }

    #[test]
    fn crop_matches_per_point_filter() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = Box3D::new(0.5, -0.2, 0.1, 1.5, 1.0, 2.5, 0.8).unwrap();
        let points: Vec<Vec3> = (0..500)
            .map(|_| {
                Vec3::new(
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(-2.0..2.0),
                )
            })
            .collect();
        let cloud = PointCloud::from_points(points.clone());
        let cropped = crop_by_box(&cloud, &b);
        let expected: Vec<Vec3> = points.into_iter().filter(|p| point_in_box(*p, &b)).collect();
        assert_eq!(cropped.points, expected);
    }

    #[test]
    fn crop_enlarge_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let b = Box3D::new(0.0, 0.0, 0.0, 1.0, 1.0, 2.0, 0.4).unwrap();
        let cloud = PointCloud::from_points(
            (0..400)
                .map(|_| {
                    Vec3::new(
                        rng.gen_range(-4.0..4.0),
                        rng.gen_range(-4.0..4.0),
                        rng.gen_range(-1.0..1.0),
                    )
                })
                .collect(),
        );
        let small = crop_by_box(&cloud, &enlarge_box(&b, 0.5));
        let large = crop_by_box(&cloud, &enlarge_box(&b, 1.5));
        for p in &small.points {
            assert!(large.points.contains(p));
        }
    }

    #[test]
    fn resample_exact_size_is_permutation() {
        let cloud = PointCloud::from_points(
            (0..50).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect(),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = resample(&cloud, 50, &mut rng).unwrap();
        let mut xs: Vec<i64> = out.points.iter().map(|p| p.x as i64).collect();
        xs.sort_unstable();
        assert_eq!(xs, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn resample_duplicates_single_point() {
        let cloud = PointCloud::from_points(vec![Vec3::new(1.0, 2.0, 3.0)]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = resample(&cloud, 500, &mut rng).unwrap();
        assert_eq!(out.len(), 500);
        assert!(out.points.iter().all(|p| *p == Vec3::new(1.0, 2.0, 3.0)));
    }

    #[test]
    fn resample_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let cloud = PointCloud::from_points(
            (0..1000)
                .map(|_| {
                    Vec3::new(
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    )
                })
                .collect(),
        );
        let a = resample(&cloud, 500, &mut ChaCha8Rng::seed_from_u64(123)).unwrap();
        let b = resample(&cloud, 500, &mut ChaCha8Rng::seed_from_u64(123)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn resample_empty_cloud_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(resample(&PointCloud::default(), 10, &mut rng).is_err());
    }

    #[test]
    fn transform_identity_and_translation() {
        let id = RigidTransform::identity();
        let p = Vec3::new(0.3, -0.7, 2.0);
        assert_eq!(id.apply(p), p);

        let t = RigidTransform::translation(Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(t.apply(Vec3::ZERO), Vec3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn transform_composition_matches_sequential() {
        let t1 = RigidTransform::yaw_about_z(0.7)
            .compose(&RigidTransform::translation(Vec3::new(1.0, -2.0, 0.5)));
        let t2 = RigidTransform::yaw_about_z(-1.3)
            .compose(&RigidTransform::translation(Vec3::new(-0.4, 0.9, 2.0)));
        let composed = t2.compose(&t1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let p = Vec3::new(
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
            );
            let seq = t2.apply(t1.apply(p));
            let one = composed.apply(p);
            assert!(seq.distance(one) < 1e-9);
        }
    }

    #[test]
    fn non_orthonormal_rotation_rejected() {
        let r = [[1.0, 0.1, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(RigidTransform::new(r, Vec3::ZERO).is_err());
        // Determinant -1 (reflection) is rejected too.
        let refl = [[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(RigidTransform::new(refl, Vec3::ZERO).is_err());
    }

    #[test]
    fn transform_inverse_roundtrip() {
        let t = RigidTransform::yaw_about_z(1.1)
            .compose(&RigidTransform::translation(Vec3::new(4.0, -1.0, 2.0)));
        let inv = t.inverse();
        let p = Vec3::new(0.5, 0.25, -3.0);
        assert!(inv.apply(t.apply(p)).distance(p) < 1e-9);
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(std::f64::consts::PI), std::f64::consts::PI);
        assert_eq!(wrap_angle(-std::f64::consts::PI), std::f64::consts::PI);
        assert!((wrap_angle(3.0 * std::f64::consts::PI) - std::f64::consts::PI).abs() < 1e-12);
        assert!(wrap_angle(0.0).abs() < 1e-12);
        let two_pi = 2.0 * std::f64::consts::PI;
        assert!((wrap_angle(0.3 + 5.0 * two_pi) - 0.3).abs() < 1e-9);
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn arb_box() -> impl Strategy<Value = Box3D> {
        (
            -5.0f64..5.0,
            -5.0f64..5.0,
            -2.0f64..2.0,
            0.2f64..4.0,
            0.2f64..4.0,
            0.2f64..4.0,
            -6.0f64..6.0,
        )
            .prop_map(|(cx, cy, cz, w, h, l, ry)| Box3D::new(cx, cy, cz, w, h, l, ry).unwrap())
    }

    proptest! {
        #[test]
        fn iou_bounds_and_symmetry(a in arb_box(), b in arb_box()) {
            let bev = box_iou_bev(&a, &b);
            let full = box_iou_3d(&a, &b);
            prop_assert!((0.0..=1.0).contains(&bev));
            prop_assert!((0.0..=1.0).contains(&full));
            prop_assert_eq!(bev, box_iou_bev(&b, &a));
            prop_assert_eq!(full, box_iou_3d(&b, &a));
            // Vertical slimming can only shrink the 3D overlap ratio.
            prop_assert!(full <= bev + 1e-12);
        }

        #[test]
        fn self_iou_is_one(a in arb_box()) {
            prop_assert!((box_iou_bev(&a, &a) - 1.0).abs() < 1e-9);
            prop_assert!((box_iou_3d(&a, &a) - 1.0).abs() < 1e-9);
        }

        #[test]
        fn wrapped_angles_stay_in_range(a in -100.0f64..100.0) {
            let w = wrap_angle(a);
            prop_assert!(w > -std::f64::consts::PI && w <= std::f64::consts::PI);
        }
    }
}
