//! Run configuration: named sections covering every module, two built-in
//! profiles (desk and paper scale), TOML overlays and environment
//! overrides.
//!
//! Resolution order: profile preset, then the config file's keys, then
//! `SIAMTRACK_SECTION__KEY=value` environment overrides, then explicit CLI
//! flags. Unknown keys are rejected; the effective config is echoed into
//! every output directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataio::pairs::PairConfig;
use crate::dataio::synth::SyntheticSceneConfig;
use crate::encoder::{EncoderConfig, FpLayerConfig, SaLayerConfig, ScaleConfig};
use crate::error::{Error, Result};
use crate::eval::MetricConfig;
use crate::rpn::{AnchorSizes, BinConfig};
use crate::tracker::{SizeSource, TemplateMode, TrackerConfig};
use crate::xcorr::XcorrVariant;

pub const CONFIG_VERSION: u32 = 1;
pub const ENV_PREFIX: &str = "SIAMTRACK_";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Desk,
    Paper,
}

impl std::str::FromStr for Profile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(Error::Config(format!("unknown profile {other:?} (expected desk or paper)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackerSection {
    /// Search margin D in meters; `None` picks the per-class default.
    pub search_margin: Option<f64>,
    pub top_k: usize,
    pub nms_iou: f64,
    pub nms_in_3d: bool,
    pub template_mode: TemplateMode,
    pub size_source: SizeSource,
    pub min_search_points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSection {
    pub lambda: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub pairs_per_epoch: usize,
    /// Template-box margin used when cutting training templates, meters.
    pub template_margin: f64,
    /// Horizontal center jitter on training search areas, meters.
    pub center_jitter: f64,
    /// Bound on the template/search frame gap (None = unbounded).
    pub max_frame_gap: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub kitti_root: Option<PathBuf>,
    pub kitti_train_sequences: Vec<usize>,
    pub kitti_val_sequences: Vec<usize>,
    pub kitti_test_sequences: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub scene: SyntheticSceneConfig,
    /// Sequences generated for training (seeds `scene.seed..+n`).
    pub train_sequences: usize,
    /// Held-out sequences (seeds continue after the training block).
    pub eval_sequences: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,
    /// Target class: car, pedestrian, van or cyclist.
    pub class: String,
    /// Element type for training/inference: "f32" or "f64".
    pub dtype: String,
    pub head_hidden: usize,
    pub xcorr: XcorrVariant,
    pub encoder: EncoderConfig,
    pub bins: BinConfig,
    pub tracker: TrackerSection,
    pub loss: LossSection,
    pub train: TrainSection,
    /// Per-class anchor sizes (w, h, l), meters.
    pub anchors: BTreeMap<String, [f64; 3]>,
    pub data: DataSection,
    pub synth: SynthSection,
    pub metrics: MetricConfig,
}

fn default_anchors() -> BTreeMap<String, [f64; 3]> {
    BTreeMap::from([
        ("car".to_string(), [1.6, 1.56, 3.9]),
        ("pedestrian".to_string(), [0.6, 1.73, 0.8]),
        ("van".to_string(), [1.9, 2.06, 5.08]),
        ("cyclist".to_string(), [0.6, 1.74, 1.76]),
    ])
}

/// Default search margin per class (meters).
pub fn default_search_margin(class: &str) -> f64 {
    match class {
        "pedestrian" | "cyclist" => 0.5,
        _ => 1.0,
    }
}

impl RunConfig {
    /// Desk-scale profile: small encoder and short synthetic training runs
    /// that finish on a laptop CPU in minutes.
    pub fn desk() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 0,
            class: "car".into(),
            dtype: "f32".into(),
            head_hidden: 32,
            xcorr: XcorrVariant::Pw,
            encoder: crate::encoder::desk_encoder_config(),
            bins: BinConfig::default(),
            tracker: TrackerSection {
                search_margin: None,
                top_k: 100,
                nms_iou: 0.8,
                nms_in_3d: false,
                template_mode: TemplateMode::FirstGt,
                size_source: SizeSource::AnchorRegressed,
                min_search_points: 5,
            },
            loss: LossSection { lambda: 10.0, focal_alpha: 0.25, focal_gamma: 2.0 },
            train: TrainSection {
                lr: 0.002,
                batch_size: 10,
                epochs: 50,
                pairs_per_epoch: 20,
                template_margin: 0.1,
                center_jitter: 0.3,
                max_frame_gap: None,
            },
            anchors: default_anchors(),
            data: DataSection {
                kitti_root: None,
                kitti_train_sequences: (0..=16).collect(),
                kitti_val_sequences: vec![17, 18],
                kitti_test_sequences: vec![19, 20],
            },
            synth: SynthSection {
                scene: SyntheticSceneConfig::default(),
                train_sequences: 10,
                eval_sequences: 10,
            },
            metrics: MetricConfig::default(),
        }
    }

    /// Full-scale profile: 500-point input, 128-wide features, four SA and
    /// four FP layers. Provided for completeness; not sized for CI.
    pub fn paper() -> Self {
        let sa_widths: [(usize, [usize; 3]); 4] = [
            (500, [32, 32, 64]),
            (318, [64, 64, 128]),
            (256, [128, 128, 256]),
            (64, [256, 256, 512]),
        ];
        let mut radius = 0.2;
        let sa = sa_widths
            .iter()
            .map(|&(n_out, widths)| {
                let layer = SaLayerConfig {
                    n_out,
                    scales: vec![
                        ScaleConfig { radius, max_neighbors: 16, mlp: widths.to_vec() },
                        ScaleConfig { radius: radius * 2.0, max_neighbors: 32, mlp: widths.to_vec() },
                    ],
                };
                radius *= 2.0;
                layer
            })
            .collect();
        let fp = vec![
            FpLayerConfig { mlp: vec![128, 128] },
            FpLayerConfig { mlp: vec![256, 128] },
            FpLayerConfig { mlp: vec![256, 256] },
            FpLayerConfig { mlp: vec![256, 256] },
        ];
        Self {
            encoder: EncoderConfig { input_points: 500, feature_dim: 128, sa, fp },
            head_hidden: 128,
            synth: SynthSection {
                scene: SyntheticSceneConfig {
                    points_per_object: 400,
                    ground_points: 1500,
                    ..SyntheticSceneConfig::default()
                },
                train_sequences: 10,
                eval_sequences: 10,
            },
            ..Self::desk()
        }
    }

    pub fn profile(p: Profile) -> Self {
        match p {
            Profile::Desk => Self::desk(),
            Profile::Paper => Self::paper(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config version {} unsupported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if !matches!(self.dtype.as_str(), "f32" | "f64") {
            return Err(Error::Config(format!("dtype must be f32 or f64, got {:?}", self.dtype)));
        }
        if !self.anchors.contains_key(&self.class) {
            return Err(Error::Config(format!("no anchor sizes for class {:?}", self.class)));
        }
        self.encoder.validate()?;
        self.bins.validate()?;
        self.anchor()?;
        self.synth.scene.validate()?;
        if self.train.batch_size == 0 || self.train.pairs_per_epoch == 0 {
            return Err(Error::Config("train: batch_size and pairs_per_epoch must be >= 1".into()));
        }
        Ok(())
    }

    pub fn anchor(&self) -> Result<AnchorSizes> {
        let [w, h, l] = self
            .anchors
            .get(&self.class)
            .ok_or_else(|| Error::Config(format!("no anchor sizes for class {:?}", self.class)))?;
        AnchorSizes::new(*w, *h, *l)
    }

    pub fn search_margin(&self) -> f64 {
        self.tracker
            .search_margin
            .unwrap_or_else(|| default_search_margin(&self.class))
    }

    pub fn tracker_config(&self) -> TrackerConfig {
        TrackerConfig {
            search_margin: self.search_margin(),
            input_points: self.encoder.input_points,
            top_k: self.tracker.top_k,
            nms_iou: self.tracker.nms_iou,
            nms_in_3d: self.tracker.nms_in_3d,
            template_mode: self.tracker.template_mode,
            size_source: self.tracker.size_source,
            min_search_points: self.tracker.min_search_points,
            seed: self.seed,
        }
    }

    pub fn pair_config(&self) -> PairConfig {
        PairConfig {
            input_points: self.encoder.input_points,
            template_margin: self.train.template_margin,
            search_margin: self.search_margin(),
            center_jitter: self.train.center_jitter,
            max_frame_gap: self.train.max_frame_gap,
            min_crop_points: self.tracker.min_search_points,
            max_retries: 20,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("serialize config: {e}")))
    }

    /// Write the effective config into an output directory.
    pub fn echo_into(&self, out_dir: &Path) -> Result<()> {
        std::fs::create_dir_all(out_dir)?;
        std::fs::write(out_dir.join("config.toml"), self.to_toml()?)?;
        Ok(())
    }
}

/// Deep-merge `overlay` into `base` (tables merge key-wise, everything else
/// replaces).
fn merge_toml(base: &mut toml::Value, overlay: toml::Value) {
    match (base, overlay) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge_toml(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Apply one `SECTION__KEY=value` override onto the config tree.
fn apply_env_override(tree: &mut toml::Value, dotted: &str, raw: &str) -> Result<()> {
    // Values parse as TOML scalars where possible, else as strings.
    let parsed: toml::Value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(t) => t["v"].clone(),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut slot = tree;
    let parts: Vec<&str> = dotted.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = slot
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {dotted}: {part} is not a table")))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), parsed);
            return Ok(());
        }
        slot = table
            .entry(part.to_string())
            .or_insert(toml::Value::Table(Default::default()));
    }
    Ok(())
}

/// Resolve the effective config: profile preset, optional TOML file,
/// `SIAMTRACK_*` environment overrides.
pub fn load_config(
    profile: Profile,
    config_path: Option<&Path>,
    env: impl Iterator<Item = (String, String)>,
) -> Result<RunConfig> {
    let preset = RunConfig::profile(profile);
    let mut tree: toml::Value = toml::Value::try_from(&preset)
        .map_err(|e| Error::Config(format!("preset serialization: {e}")))?;

    if let Some(path) = config_path {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let overlay: toml::Value = text
            .parse()
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        merge_toml(&mut tree, overlay);
    }

    for (key, value) in env {
        let Some(rest) = key.strip_prefix(ENV_PREFIX) else { continue };
        let dotted = rest.to_lowercase().replace("__", ".");
        apply_env_override(&mut tree, &dotted, &value)?;
    }

    let cfg: RunConfig = tree
        .try_into()
        .map_err(|e| Error::Config(format!("config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}
