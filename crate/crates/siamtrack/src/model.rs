//! The full network: shared encoder, correlation fusion and the two
//! proposal heads, plus checkpoint serialization.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{Encoder, EncoderConfig, EncoderTrace, FeatureMap};
use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Vec3};
use crate::nn::{ParamSet, Real, Tensor2D};
use crate::rpn::{BinConfig, ChannelLayout, ClsHead, ClsHeadCache, RegHead, RegHeadCache};
use crate::xcorr::{
    weight_features_backward, weight_features_forward, xcorr_backward, xcorr_forward, WeightCache,
    XcorrCache, XcorrVariant,
};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Template branch, correlation fusion and heads over one shared parameter
/// set. The correlation variant is runtime-switchable; every variant feeds
/// the same `N x F` weighted features to the heads.
pub struct TrackNet<T> {
    pub encoder: Encoder<T>,
    pub cls_head: ClsHead<T>,
    pub reg_head: RegHead<T>,
    pub xcorr: XcorrVariant,
    pub bins: BinConfig,
}

/// Per-point network outputs for one search cloud, in f64 for the codec.
pub struct InferOutput {
    pub coords: Vec<Vec3>,
    pub scores: Vec<f64>,
    pub reg_rows: Vec<Vec<f64>>,
}

pub struct TrainTrace<T> {
    pub template_features: Tensor2D<T>,
    template_trace: EncoderTrace<T>,
    search_trace: EncoderTrace<T>,
    xcorr_cache: XcorrCache<T>,
    weight_cache: WeightCache<T>,
    cls_cache: ClsHeadCache<T>,
    reg_cache: RegHeadCache<T>,
    pub search_coords: Vec<Vec3>,
}

impl<T: Real> TrackNet<T> {
    pub fn new(
        encoder_cfg: EncoderConfig,
        head_hidden: usize,
        bins: BinConfig,
        xcorr: XcorrVariant,
        init_seed: u64,
    ) -> Result<Self> {
        bins.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let feature_dim = encoder_cfg.feature_dim;
        let encoder = Encoder::new(encoder_cfg, &mut rng)?;
        let cls_head = ClsHead::new(feature_dim, head_hidden, &mut rng);
        let reg_head = RegHead::new(feature_dim, head_hidden, bins.layout(), &mut rng);
        Ok(Self { encoder, cls_head, reg_head, xcorr, bins })
    }

    pub fn layout(&self) -> ChannelLayout {
        self.reg_head.layout
    }

    /// Encode a (cropped, resampled) template cloud once.
    pub fn encode_template(&self, cloud: &PointCloud, sampling_seed: u64) -> Result<FeatureMap<T>> {
        let (fm, _) = self.encoder.forward(cloud, sampling_seed)?;
        Ok(fm)
    }

    /// Inference over one search cloud against cached template features.
    pub fn infer(
        &self,
        template: &Tensor2D<T>,
        search: &PointCloud,
        sampling_seed: u64,
    ) -> Result<InferOutput> {
        let (fm, _) = self.encoder.forward(search, sampling_seed)?;
        let (psi, _) = xcorr_forward(self.xcorr, template, &fm.features)?;
        let (weighted, _) = weight_features_forward(&psi, &fm.features)?;
        // Dropout is inactive in eval mode; the rng is never consumed.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (probs, _) = self.cls_head.forward(&weighted, false, &mut rng)?;
        let (reg, _) = self.reg_head.forward(&weighted, false, &mut rng)?;
        Ok(InferOutput {
            coords: fm.coords,
            scores: probs.as_slice().iter().map(|v| v.as_f64()).collect(),
            reg_rows: (0..reg.rows())
                .map(|r| reg.row(r).iter().map(|v| v.as_f64()).collect())
                .collect(),
        })
    }

    /// Training forward over a template/search pair. Returns per-point
    /// probabilities, regression rows and the trace for [`Self::backward`].
    pub fn forward_train(
        &self,
        template: &PointCloud,
        search: &PointCloud,
        template_seed: u64,
        search_seed: u64,
        dropout_rng: &mut ChaCha8Rng,
    ) -> Result<(Tensor2D<T>, Tensor2D<T>, TrainTrace<T>)> {
        let (tf, template_trace) = self.encoder.forward(template, template_seed)?;
        let (sf, search_trace) = self.encoder.forward(search, search_seed)?;
        let (psi, xcorr_cache) = xcorr_forward(self.xcorr, &tf.features, &sf.features)?;
        let (weighted, weight_cache) = weight_features_forward(&psi, &sf.features)?;
        let (probs, cls_cache) = self.cls_head.forward(&weighted, true, dropout_rng)?;
        let (reg, reg_cache) = self.reg_head.forward(&weighted, true, dropout_rng)?;
        Ok((
            probs,
            reg,
            TrainTrace {
                template_features: tf.features,
                template_trace,
                search_trace,
                xcorr_cache,
                weight_cache,
                cls_cache,
                reg_cache,
                search_coords: sf.coords,
            },
        ))
    }

    /// Backpropagate loss gradients through heads, fusion and both encoder
    /// branches; parameter gradients accumulate in place.
    pub fn backward(
        &mut self,
        trace: &TrainTrace<T>,
        grad_probs: &Tensor2D<T>,
        grad_reg: &Tensor2D<T>,
    ) -> Result<()> {
        let g_cls = self.cls_head.backward(&trace.cls_cache, grad_probs)?;
        let g_reg = self.reg_head.backward(&trace.reg_cache, grad_reg)?;
        let mut g_weighted = g_cls;
        g_weighted.add_assign(&g_reg)?;
        let (g_psi, mut g_search) = weight_features_backward(&trace.weight_cache, &g_weighted)?;
        let (g_template, g_search_xc) = xcorr_backward(self.xcorr, &trace.xcorr_cache, &g_psi)?;
        g_search.add_assign(&g_search_xc)?;
        self.encoder.backward(&trace.search_trace, &g_search)?;
        self.encoder.backward(&trace.template_trace, &g_template)?;
        Ok(())
    }
}

impl<T: Real> ParamSet<T> for TrackNet<T> {
    fn for_each_param(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &mut Tensor2D<T>, &mut Tensor2D<T>),
    ) {
        // "encoder." is the reserved prefix for the shared feature network.
        self.encoder.for_each_param(&format!("{prefix}encoder"), f);
        self.cls_head.for_each_param(&format!("{prefix}cls"), f);
        self.reg_head.for_each_param(&format!("{prefix}reg"), f);
    }
}

#[derive(Serialize, Deserialize)]
struct TensorData {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    dtype: String,
    channel_layout: ChannelLayout,
    epoch: u64,
    tensors: BTreeMap<String, TensorData>,
}

/// Write all named parameters plus the channel-layout descriptor.
pub fn save_checkpoint<T: Real>(net: &mut TrackNet<T>, epoch: u64, path: &Path) -> Result<()> {
    let mut tensors = BTreeMap::new();
    net.for_each_param("", &mut |name, value, _| {
        tensors.insert(
            name.to_string(),
            TensorData { rows: value.rows(), cols: value.cols(), data: value.to_f64_vec() },
        );
    });
    let file = CheckpointFile {
        format_version: CHECKPOINT_FORMAT_VERSION,
        dtype: T::DTYPE.to_string(),
        channel_layout: net.layout(),
        epoch,
        tensors,
    };
    let json = serde_json::to_string(&file)
        .map_err(|e| Error::Checkpoint(format!("serialize failed: {e}")))?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, json)?;
    Ok(())
}

/// Load parameters into an architecture-compatible net; returns the stored
/// epoch counter.
pub fn load_checkpoint<T: Real>(net: &mut TrackNet<T>, path: &Path) -> Result<u64> {
    let json = std::fs::read_to_string(path)?;
    let file: CheckpointFile = serde_json::from_str(&json)
        .map_err(|e| Error::Checkpoint(format!("{}: parse failed: {e}", path.display())))?;
    if file.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {} (expected {CHECKPOINT_FORMAT_VERSION})",
            file.format_version
        )));
    }
    if file.channel_layout != net.layout() {
        return Err(Error::Checkpoint(format!(
            "channel layout mismatch: checkpoint {:?} vs model {:?}",
            file.channel_layout,
            net.layout()
        )));
    }
    let mut missing = Vec::new();
    let mut used = 0usize;
    let mut fail: Option<Error> = None;
    net.for_each_param("", &mut |name, value, _| {
        let Some(t) = file.tensors.get(name) else {
            missing.push(name.to_string());
            return;
        };
        used += 1;
        if (t.rows, t.cols) != value.shape() {
            fail = Some(Error::Checkpoint(format!(
                "tensor {name}: shape {:?} vs model {:?}",
                (t.rows, t.cols),
                value.shape()
            )));
            return;
        }
        match Tensor2D::from_f64_data(t.rows, t.cols, &t.data) {
            Ok(loaded) => *value = loaded,
            Err(e) => fail = Some(e),
        }
    });
    if let Some(e) = fail {
        return Err(e);
    }
    if !missing.is_empty() {
        return Err(Error::Checkpoint(format!("missing tensors: {missing:?}")));
    }
    if used != file.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} tensors, model consumed {used}",
            file.tensors.len()
        )));
    }
    Ok(file.epoch)
}
