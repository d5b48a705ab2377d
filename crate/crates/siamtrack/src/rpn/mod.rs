//! Region proposal heads and the bin-based box codec.
//!
//! Every search point proposes one box: the regression head emits bin
//! logits plus residuals relative to that point, the classification head
//! scores it as foreground, and greedy NMS over the top-scored proposals
//! picks the final box.

mod codec;
mod heads;
mod nms;

pub use codec::{
    decode_proposal, encode_targets, targets_to_reg_row, BinConfig, BinTargets, ChannelLayout,
    LAYOUT_VERSION,
};
pub use heads::{ClsHead, ClsHeadCache, RegHead, RegHeadCache};
pub use nms::{nms_keep, select_and_nms, Proposal};

use serde::{Deserialize, Serialize};

/// Per-class anchor sizes: mean ground-truth dimensions the size residuals
/// are regressed against.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorSizes {
    pub w: f64,
    pub h: f64,
    pub l: f64,
}

impl AnchorSizes {
    pub fn new(w: f64, h: f64, l: f64) -> crate::Result<Self> {
        if !(w > 0.0 && h > 0.0 && l > 0.0) {
            return Err(crate::Error::Config(format!(
                "anchor sizes must be positive, got ({w}, {h}, {l})"
            )));
        }
        Ok(Self { w, h, l })
    }
}
