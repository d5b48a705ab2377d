//! Seeded synthetic LIDAR scenes: a rigid target moving along a waypoint
//! trajectory through static clutter and ground returns.
//!
//! The target's surface points are sampled once in the object frame and
//! rigidly re-posed every frame, so box and support co-move exactly; sensor
//! dropout then removes a fixed fraction of the target points per frame.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Box3D, PointCloud, RigidTransform, Vec3};

use super::{SequenceFrame, TrackingSequence};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetShape {
    /// Points on the surface of the target box (a car-like shell).
    BoxShell,
    /// Cylinder with hemispherical caps (a pedestrian-like shell).
    Capsule,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSceneConfig {
    pub target_shape: TargetShape,
    /// Target box dimensions (w, h, l), meters.
    pub target_size: [f64; 3],
    pub points_per_object: usize,
    pub n_frames: usize,
    /// Trajectory waypoints traversed at uniform frame rate; the vertical
    /// component is the box center height.
    pub waypoints: Vec<[f64; 3]>,
    /// Per-frame headings; derived from the motion direction when absent.
    pub yaws: Option<Vec<f64>>,
    pub clutter_count: usize,
    pub points_per_clutter: usize,
    /// Center and half-extent of the horizontal clutter spawn square.
    pub clutter_center: [f64; 2],
    pub clutter_half_extent: f64,
    /// Ground-plane returns scattered under the scene.
    pub ground_points: usize,
    /// Fraction of target points removed per frame (deterministic count).
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticSceneConfig {
    fn default() -> Self {
        Self {
            target_shape: TargetShape::BoxShell,
            target_size: [1.8, 1.5, 4.0],
            points_per_object: 120,
            n_frames: 20,
            waypoints: vec![[0.0, 0.0, 0.85], [8.0, 4.0, 0.85]],
            yaws: None,
            clutter_count: 4,
            points_per_clutter: 60,
            clutter_center: [4.0, 2.0],
            clutter_half_extent: 6.0,
            ground_points: 400,
            dropout_rate: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticSceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_frames < 2 {
            return Err(Error::Config("synthetic scene needs at least 2 frames".into()));
        }
        if self.waypoints.is_empty() {
            return Err(Error::Config("synthetic scene needs at least 1 waypoint".into()));
        }
        if self.points_per_object == 0 {
            return Err(Error::Config("points_per_object must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout_rate {} must be in [0, 1)", self.dropout_rate)));
        }
        if let Some(yaws) = &self.yaws {
            if yaws.len() != self.n_frames {
                return Err(Error::Config(format!(
                    "yaws has {} entries for {} frames",
                    yaws.len(),
                    self.n_frames
                )));
            }
        }
        if self.target_size.iter().any(|&v| v <= 0.0) {
            return Err(Error::Config("target_size must be positive".into()));
        }
        Ok(())
    }
}

/// Sample the shell surface in the object frame, shrunk slightly so every
/// return is strictly interior to the ground-truth box.
fn sample_shell(shape: TargetShape, size: [f64; 3], n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec3> {
    const SHRINK: f64 = 0.97;
    let [w, h, l] = size;
    let (hw, hh, hl) = (w * 0.5 * SHRINK, h * 0.5 * SHRINK, l * 0.5 * SHRINK);
    match shape {
        TargetShape::BoxShell => {
            // Area-weighted choice among the 6 faces; x is the length axis.
            let areas = [
                w * h, // +x
                w * h, // -x
                l * h, // +y
                l * h, // -y
                l * w, // +z
                l * w, // -z
            ];
            let total: f64 = areas.iter().sum();
            (0..n)
                .map(|_| {
                    let mut pick = rng.gen_range(0.0..total);
                    let mut face = 0;
                    for (i, &a) in areas.iter().enumerate() {
                        if pick < a {
                            face = i;
                            break;
                        }
                        pick -= a;
                    }
                    let u = rng.gen_range(-1.0..1.0);
                    let v = rng.gen_range(-1.0..1.0);
                    match face {
                        0 => Vec3::new(hl, u * hw, v * hh),
                        1 => Vec3::new(-hl, u * hw, v * hh),
                        2 => Vec3::new(u * hl, hw, v * hh),
                        3 => Vec3::new(u * hl, -hw, v * hh),
                        4 => Vec3::new(u * hl, v * hw, hh),
                        _ => Vec3::new(u * hl, v * hw, -hh),
                    }
                })
                .collect()
        }
        TargetShape::Capsule => {
            // Vertical capsule: cylinder of radius r with hemispherical
            // caps, bounded by the target box.
            let r = hw.min(hl);
            let cyl_half = (hh - r).max(0.0);
            let a_cyl = 2.0 * std::f64::consts::PI * r * (2.0 * cyl_half);
            let a_caps = 4.0 * std::f64::consts::PI * r * r;
            (0..n)
                .map(|_| {
                    let phi = rng.gen_range(0.0..std::f64::consts::TAU);
                    if rng.gen_range(0.0..a_cyl + a_caps) < a_cyl {
                        let z = rng.gen_range(-cyl_half..cyl_half.max(1e-9));
                        Vec3::new(r * phi.cos(), r * phi.sin(), z)
                    } else {
                        // Uniform on the sphere, split into top/bottom caps.
                        let cos_t = rng.gen_range(-1.0f64..1.0);
                        let sin_t = (1.0 - cos_t * cos_t).sqrt();
                        let (x, y) = (r * sin_t * phi.cos(), r * sin_t * phi.sin());
                        let zc = r * cos_t;
                        if zc >= 0.0 {
                            Vec3::new(x, y, cyl_half + zc)
                        } else {
                            Vec3::new(x, y, -cyl_half + zc)
                        }
                    }
                })
                .collect()
        }
    }
}

/// Pose of the target at frame `i`: linear interpolation through the
/// waypoints at uniform rate, heading from the motion direction unless
/// explicit yaws are configured.
fn pose_at(cfg: &SyntheticSceneConfig, frame: usize) -> (Vec3, f64) {
    let wp = &cfg.waypoints;
    let last = cfg.n_frames - 1;
    let position = if wp.len() == 1 || last == 0 {
        Vec3::new(wp[0][0], wp[0][1], wp[0][2])
    } else {
        let t = frame as f64 / last as f64 * (wp.len() - 1) as f64;
        let seg = (t.floor() as usize).min(wp.len() - 2);
        let frac = t - seg as f64;
        let a = Vec3::new(wp[seg][0], wp[seg][1], wp[seg][2]);
        let b = Vec3::new(wp[seg + 1][0], wp[seg + 1][1], wp[seg + 1][2]);
        a + (b - a) * frac
    };
    let yaw = match &cfg.yaws {
        Some(yaws) => yaws[frame],
        None => {
            if wp.len() < 2 {
                0.0
            } else {
                let t = frame as f64 / last.max(1) as f64 * (wp.len() - 1) as f64;
                let seg = (t.floor() as usize).min(wp.len() - 2);
                let dx = wp[seg + 1][0] - wp[seg][0];
                let dy = wp[seg + 1][1] - wp[seg][1];
                if dx == 0.0 && dy == 0.0 {
                    0.0
                } else {
                    dy.atan2(dx)
                }
            }
        }
    };
    (position, wrap_angle(yaw))
}

/// Deterministic per-seed scene: returns the per-frame clouds and boxes.
pub fn generate_synthetic(cfg: &SyntheticSceneConfig) -> Result<TrackingSequence> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let canonical = sample_shell(cfg.target_shape, cfg.target_size, cfg.points_per_object, &mut rng);

    // Static background: clutter shells plus ground returns.
    let mut background: Vec<Vec3> = Vec::new();
    for _ in 0..cfg.clutter_count {
        let size = [
            rng.gen_range(0.4..2.0),
            rng.gen_range(0.5..2.0),
            rng.gen_range(0.4..3.0),
        ];
        let center = Vec3::new(
            cfg.clutter_center[0] + rng.gen_range(-cfg.clutter_half_extent..cfg.clutter_half_extent),
            cfg.clutter_center[1] + rng.gen_range(-cfg.clutter_half_extent..cfg.clutter_half_extent),
            size[1] * 0.5,
        );
        let yaw = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        let shell = sample_shell(TargetShape::BoxShell, size, cfg.points_per_clutter, &mut rng);
        let pose = RigidTransform::yaw_about_z(yaw);
        background.extend(shell.into_iter().map(|p| pose.apply(p) + center));
    }
    for _ in 0..cfg.ground_points {
        background.push(Vec3::new(
            cfg.clutter_center[0] + rng.gen_range(-cfg.clutter_half_extent..cfg.clutter_half_extent),
            cfg.clutter_center[1] + rng.gen_range(-cfg.clutter_half_extent..cfg.clutter_half_extent),
            rng.gen_range(-0.05..0.0),
        ));
    }

    let drop_count = (cfg.dropout_rate * cfg.points_per_object as f64).floor() as usize;
    let mut frames = Vec::with_capacity(cfg.n_frames);
    for i in 0..cfg.n_frames {
        let (position, yaw) = pose_at(cfg, i);
        let pose = RigidTransform::yaw_about_z(yaw);
        let mut target: Vec<Vec3> = canonical.iter().map(|&p| pose.apply(p) + position).collect();
        // Deterministic dropout: remove exactly drop_count random points.
        for _ in 0..drop_count {
            let k = rng.gen_range(0..target.len());
            target.swap_remove(k);
        }
        let mut points = target;
        points.extend_from_slice(&background);
        let gt = Box3D::new(
            position.x,
            position.y,
            position.z,
            cfg.target_size[0],
            cfg.target_size[1],
            cfg.target_size[2],
            yaw,
        )?;
        frames.push(SequenceFrame { cloud: PointCloud::from_points(points), gt });
    }
    Ok(TrackingSequence { frames })
}

/// Write a generated sequence set: a config echo, per-frame binary point
/// arrays (little-endian u32 count then f32 triples) and a ground-truth
/// text table per sequence.
pub fn write_synthetic_dir(
    dir: &Path,
    cfg: &SyntheticSceneConfig,
    sequences: &[TrackingSequence],
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let echo = toml::to_string_pretty(cfg).map_err(|e| Error::Config(format!("config echo: {e}")))?;
    std::fs::write(dir.join("config.toml"), echo)?;
    for (si, seq) in sequences.iter().enumerate() {
        let seq_dir = dir.join(format!("seq_{si:03}"));
        std::fs::create_dir_all(&seq_dir)?;
        let mut gt = std::fs::File::create(seq_dir.join("gt.txt"))?;
        for (fi, frame) in seq.frames.iter().enumerate() {
            let mut bytes = Vec::with_capacity(4 + frame.cloud.len() * 12);
            bytes.extend_from_slice(&(frame.cloud.len() as u32).to_le_bytes());
            for p in &frame.cloud.points {
                bytes.extend_from_slice(&(p.x as f32).to_le_bytes());
                bytes.extend_from_slice(&(p.y as f32).to_le_bytes());
                bytes.extend_from_slice(&(p.z as f32).to_le_bytes());
            }
            std::fs::write(seq_dir.join(format!("frame_{fi:04}.bin")), bytes)?;
            let b = frame.gt;
            writeln!(gt, "{fi} {} {} {} {} {} {} {}", b.cx, b.cy, b.cz, b.w, b.h, b.l, b.ry)?;
        }
    }
    Ok(())
}

/// Load sequences written by [`write_synthetic_dir`].
pub fn load_synthetic_dir(dir: &Path) -> Result<Vec<TrackingSequence>> {
    let mut seq_dirs: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::Data { path: dir.into(), reason: format!("cannot list: {e}") })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("seq_")))
        .collect();
    seq_dirs.sort();
    if seq_dirs.is_empty() {
        return Err(Error::Data { path: dir.into(), reason: "no seq_* directories".into() });
    }
    let mut sequences = Vec::new();
    for seq_dir in seq_dirs {
        let gt_path = seq_dir.join("gt.txt");
        let gt_text = std::fs::read_to_string(&gt_path)
            .map_err(|e| Error::Data { path: gt_path.clone(), reason: format!("cannot read: {e}") })?;
        let mut frames = Vec::new();
        for (lineno, line) in gt_text.lines().enumerate() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 8 {
                return Err(Error::Data {
                    path: gt_path.clone(),
                    reason: format!("line {}: expected 8 fields", lineno + 1),
                });
            }
            let num = |i: usize| -> Result<f64> {
                fields[i].parse().map_err(|e| Error::Data {
                    path: gt_path.clone(),
                    reason: format!("line {}: {e}", lineno + 1),
                })
            };
            let fi: usize = num(0)? as usize;
            let gt = Box3D::new(num(1)?, num(2)?, num(3)?, num(4)?, num(5)?, num(6)?, num(7)?)?;
            let bin_path = seq_dir.join(format!("frame_{fi:04}.bin"));
            let bytes = std::fs::read(&bin_path)
                .map_err(|e| Error::Data { path: bin_path.clone(), reason: format!("cannot read: {e}") })?;
            if bytes.len() < 4 {
                return Err(Error::Data { path: bin_path, reason: "missing point count".into() });
            }
            let count = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
            if bytes.len() != 4 + count * 12 {
                return Err(Error::Data {
                    path: bin_path,
                    reason: format!("expected {} point bytes, got {}", count * 12, bytes.len() - 4),
                });
            }
            let mut points = Vec::with_capacity(count);
            for i in 0..count {
                let at = 4 + i * 12;
                let f = |o: usize| f32::from_le_bytes(bytes[at + o..at + o + 4].try_into().unwrap()) as f64;
                points.push(Vec3::new(f(0), f(4), f(8)));
            }
            frames.push(SequenceFrame { cloud: PointCloud::from_points(points), gt });
        }
        sequences.push(TrackingSequence { frames });
    }
    Ok(sequences)
}
