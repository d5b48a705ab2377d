//! KITTI tracking-benchmark ingestion: velodyne scans, per-sequence label
//! files and calibration.
//!
//! Labels live in the rectified camera frame with a bottom-center box
//! origin; everything is converted into the LIDAR world frame (x forward,
//! y left, z up) at load time: the bottom center is transformed through the
//! inverse calibration, lifted by `h/2` vertically, and the camera-frame
//! heading direction is rotated to recover `ry`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Box3D, PointCloud, RigidTransform, Vec3};

use super::{SequenceFrame, TrackingSequence};

/// One row of a KITTI tracking label file (17 whitespace-separated fields).
#[derive(Clone, Debug, PartialEq)]
pub struct FrameLabel {
    pub frame: usize,
    pub track_id: i64,
    pub class: String,
    pub truncation: f64,
    pub occlusion: f64,
    pub alpha: f64,
    /// 2D image-plane box (left, top, right, bottom); carried but unused.
    pub bbox_2d: [f64; 4],
    /// Camera-frame size convention: height, width, length.
    pub h: f64,
    pub w: f64,
    pub l: f64,
    /// Camera-frame bottom-center location.
    pub location: Vec3,
    pub rotation_y: f64,
}

fn data_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Data { path: path.to_path_buf(), reason: reason.into() }
}

/// Parse a `label_02/<seq>.txt` file. Malformed rows report their 1-based
/// line number.
pub fn parse_label_file(path: &Path) -> Result<Vec<FrameLabel>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| data_err(path, format!("cannot read: {e}")))?;
    let mut labels = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 17 {
            return Err(data_err(
                path,
                format!("line {}: expected 17 fields, got {}", lineno + 1, fields.len()),
            ));
        }
        let num = |i: usize| -> Result<f64> {
            fields[i]
                .parse::<f64>()
                .map_err(|e| data_err(path, format!("line {}: field {}: {e}", lineno + 1, i + 1)))
        };
        labels.push(FrameLabel {
            frame: num(0)? as usize,
            track_id: num(1)? as i64,
            class: fields[2].to_string(),
            truncation: num(3)?,
            occlusion: num(4)?,
            alpha: num(5)?,
            bbox_2d: [num(6)?, num(7)?, num(8)?, num(9)?],
            h: num(10)?,
            w: num(11)?,
            l: num(12)?,
            location: Vec3::new(num(13)?, num(14)?, num(15)?),
            rotation_y: num(16)?,
        });
    }
    Ok(labels)
}

fn parse_matrix_row(path: &Path, key: &str, vals: &[&str], n: usize) -> Result<Vec<f64>> {
    if vals.len() != n {
        return Err(data_err(path, format!("{key}: expected {n} values, got {}", vals.len())));
    }
    vals.iter()
        .map(|v| v.parse::<f64>().map_err(|e| data_err(path, format!("{key}: {e}"))))
        .collect()
}

/// Parse a `calib/<seq>.txt` file into the velodyne-to-rectified-camera
/// transform (`R_rect * Tr_velo_cam`). Both the tracking-benchmark key
/// names (`Tr_velo_cam`, `R_rect`) and the detection-benchmark names
/// (`Tr_velo_to_cam`, `R0_rect`) are accepted; a missing rectification is
/// treated as identity.
pub fn parse_calib_file(path: &Path) -> Result<RigidTransform> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| data_err(path, format!("cannot read: {e}")))?;
    let mut velo_to_cam: Option<([[f64; 3]; 3], Vec3)> = None;
    let mut rect: Option<[[f64; 3]; 3]> = None;
    for line in text.lines() {
        let mut parts: Vec<&str> = line.split([' ', ':']).collect();
        parts.retain(|s| !s.is_empty());
        let Some(&key) = parts.first() else { continue };
        match key {
            "Tr_velo_cam" | "Tr_velo_to_cam" => {
                let v = parse_matrix_row(path, key, &parts[1..], 12)?;
                velo_to_cam = Some((
                    [[v[0], v[1], v[2]], [v[4], v[5], v[6]], [v[8], v[9], v[10]]],
                    Vec3::new(v[3], v[7], v[11]),
                ));
            }
            "R_rect" | "R0_rect" => {
                let v = parse_matrix_row(path, key, &parts[1..], 9)?;
                rect = Some([[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]]);
            }
            _ => {}
        }
    }
    let (r, t) = velo_to_cam.ok_or_else(|| data_err(path, "missing Tr_velo_cam row"))?;
    let base = RigidTransform::new(r, t)?;
    match rect {
        None => Ok(base),
        Some(rr) => {
            let rect_t = RigidTransform::new(rr, Vec3::ZERO)?;
            Ok(rect_t.compose(&base))
        }
    }
}

/// Parse a velodyne `.bin` scan: little-endian f32 quadruples
/// (x, y, z, intensity).
pub fn read_velodyne_bin(path: &Path) -> Result<PointCloud> {
    let bytes = std::fs::read(path).map_err(|e| data_err(path, format!("cannot read: {e}")))?;
    if bytes.len() % 16 != 0 {
        return Err(data_err(
            path,
            format!("scan byte length {} is not divisible by 16", bytes.len()),
        ));
    }
    let n = bytes.len() / 16;
    let mut points = Vec::with_capacity(n);
    let mut intensity = Vec::with_capacity(n);
    for i in 0..n {
        let at = i * 16;
        let f = |o: usize| f32::from_le_bytes(bytes[at + o..at + o + 4].try_into().unwrap()) as f64;
        let p = Vec3::new(f(0), f(4), f(8));
        if !p.is_finite() {
            return Err(data_err(path, format!("non-finite point at offset {at}")));
        }
        points.push(p);
        intensity.push(f(12));
    }
    PointCloud::with_intensity(points, intensity)
}

/// Convert one label into a LIDAR-frame box using the velodyne-to-camera
/// calibration.
pub fn label_to_lidar_box(label: &FrameLabel, velo_to_cam: &RigidTransform) -> Result<Box3D> {
    let cam_to_velo = velo_to_cam.inverse();
    let bottom = cam_to_velo.apply(label.location);
    // KITTI heading: rotation about the camera y axis; the object's length
    // axis in camera coordinates is (cos ry, 0, -sin ry).
    let heading_cam = Vec3::new(label.rotation_y.cos(), 0.0, -label.rotation_y.sin());
    let heading = cam_to_velo.rotate(heading_cam);
    let ry = wrap_angle(heading.y.atan2(heading.x));
    Box3D::new(bottom.x, bottom.y, bottom.z + label.h / 2.0, label.w, label.h, label.l, ry)
}

/// One loaded sequence: scans indexed by frame, labels, calibration.
pub struct KittiSequence {
    pub clouds: Vec<PointCloud>,
    pub labels: Vec<FrameLabel>,
    pub velo_to_cam: RigidTransform,
}

/// Load `{velodyne/<seq>/<frame>.bin, label_02/<seq>.txt, calib/<seq>.txt}`
/// for one zero-padded sequence id.
pub fn load_kitti_sequence(root: &Path, sequence: usize) -> Result<KittiSequence> {
    let seq = format!("{sequence:04}");
    let labels = parse_label_file(&root.join("label_02").join(format!("{seq}.txt")))?;
    let velo_to_cam = parse_calib_file(&root.join("calib").join(format!("{seq}.txt")))?;
    let scan_dir = root.join("velodyne").join(&seq);
    let mut frames: Vec<PathBuf> = std::fs::read_dir(&scan_dir)
        .map_err(|e| data_err(&scan_dir, format!("cannot list: {e}")))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "bin"))
        .collect();
    frames.sort();
    let clouds = frames
        .iter()
        .map(|p| read_velodyne_bin(p))
        .collect::<Result<Vec<_>>>()?;
    Ok(KittiSequence { clouds, labels, velo_to_cam })
}

/// One object's ordered ground-truth boxes.
#[derive(Clone, Debug)]
pub struct Tracklet {
    pub track_id: i64,
    pub class: String,
    /// Strictly increasing frame indices with LIDAR-frame boxes.
    pub frames: Vec<(usize, Box3D)>,
}

/// Group labels by track id, convert to LIDAR boxes, filter by class and
/// drop single-frame tracks.
pub fn build_tracklets(
    labels: &[FrameLabel],
    class_filter: Option<&str>,
    velo_to_cam: &RigidTransform,
) -> Result<Vec<Tracklet>> {
    let mut by_track: BTreeMap<i64, Vec<&FrameLabel>> = BTreeMap::new();
    for label in labels {
        if label.track_id < 0 {
            continue; // DontCare regions
        }
        if let Some(class) = class_filter {
            if !label.class.eq_ignore_ascii_case(class) {
                continue;
            }
        }
        by_track.entry(label.track_id).or_default().push(label);
    }
    let mut tracklets = Vec::new();
    for (track_id, mut rows) in by_track {
        rows.sort_by_key(|l| l.frame);
        if rows.len() < 2 {
            continue;
        }
        let frames = rows
            .iter()
            .map(|l| Ok((l.frame, label_to_lidar_box(l, velo_to_cam)?)))
            .collect::<Result<Vec<_>>>()?;
        tracklets.push(Tracklet { track_id, class: rows[0].class.clone(), frames });
    }
    Ok(tracklets)
}

impl KittiSequence {
    /// Materialize one tracklet as a cloud+box sequence for tracking.
    pub fn tracklet_sequence(&self, tracklet: &Tracklet) -> Result<TrackingSequence> {
        let frames = tracklet
            .frames
            .iter()
            .map(|&(frame, gt)| {
                let cloud = self.clouds.get(frame).cloned().ok_or_else(|| Error::Data {
                    path: PathBuf::from(format!("frame {frame}")),
                    reason: format!("tracklet {} references a missing scan", tracklet.track_id),
                })?;
                Ok(SequenceFrame { cloud, gt })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TrackingSequence { frames })
    }
}
