//! Data ingestion: KITTI tracking files, tracklet assembly, training-pair
//! sampling and a seeded synthetic scene generator.

pub mod kitti;
pub mod pairs;
pub mod synth;

pub use kitti::{
    build_tracklets, label_to_lidar_box, load_kitti_sequence, parse_calib_file, parse_label_file,
    read_velodyne_bin, FrameLabel, KittiSequence, Tracklet,
};
pub use pairs::{sample_training_pair, PairConfig, TrainingPair};
pub use synth::{
    generate_synthetic, load_synthetic_dir, write_synthetic_dir, SyntheticSceneConfig, TargetShape,
};

use crate::geometry::{Box3D, PointCloud};

/// One tracked object's frames: the per-frame cloud plus its ground-truth
/// box. This is the unit both the trainer and the evaluator consume.
#[derive(Clone, Debug)]
pub struct TrackingSequence {
    pub frames: Vec<SequenceFrame>,
}

#[derive(Clone, Debug)]
pub struct SequenceFrame {
    pub cloud: PointCloud,
    pub gt: Box3D,
}

impl TrackingSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}
