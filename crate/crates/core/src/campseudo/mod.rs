//! CAM pseudo labels: threshold per-class attention scores into class,
//! background and ignore pixels, then optionally refine with a dense CRF.

pub mod crf;
pub mod threshold;

use std::collections::BTreeSet;

pub use crf::{refine_crf, refine_crf_traced, CrfConfig, CrfTrace};
pub use threshold::{threshold_cam, ThresholdConfig};

use crate::error::Result;
use crate::model::{LabelMask, RgbImage, ScoreMap};

/// Thresholding followed by optional CRF refinement.
pub fn cam_pseudo_label(
    scoremap: &ScoreMap,
    image: &RgbImage,
    image_level_labels: &BTreeSet<u8>,
    threshold: &ThresholdConfig,
    crf: Option<&CrfConfig>,
) -> Result<LabelMask> {
    let mask = threshold_cam(scoremap, image_level_labels, threshold)?;
    match crf {
        Some(cfg) => refine_crf(scoremap, image, &mask, cfg),
        None => Ok(mask),
    }
}
