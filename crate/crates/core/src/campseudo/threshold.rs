use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LabelMask, ScoreMap, BACKGROUND, IGNORE};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdConfig {
    pub fg_threshold: f64,
    pub bg_threshold: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            fg_threshold: 0.30,
            bg_threshold: 0.05,
        }
    }
}

impl ThresholdConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = 0.0..=1.0;
        if !unit.contains(&self.fg_threshold) || !unit.contains(&self.bg_threshold) {
            return Err(Error::ConfigInvariantViolation(format!(
                "thresholds must lie in [0, 1] (fg = {}, bg = {})",
                self.fg_threshold, self.bg_threshold
            )));
        }
        if self.bg_threshold > self.fg_threshold {
            return Err(Error::ConfigInvariantViolation(format!(
                "bg threshold {} exceeds fg threshold {}",
                self.bg_threshold, self.fg_threshold
            )));
        }
        Ok(())
    }
}

/// Best admissible class at pixel `j`; ties go to the smaller index because
/// `labels` iterates in ascending order and only a strictly larger score wins.
pub(crate) fn best_class(scoremap: &ScoreMap, labels: &[u8], j: usize) -> (u8, f32) {
    let mut best = (labels[0], scoremap.score(labels[0], j));
    for &c in &labels[1..] {
        let s = scoremap.score(c, j);
        if s > best.1 {
            best = (c, s);
        }
    }
    best
}

pub(crate) fn check_labels(scoremap: &ScoreMap, labels: &BTreeSet<u8>) -> Result<Vec<u8>> {
    if labels.is_empty() {
        return Err(Error::EmptyLabelSet);
    }
    if let Some(&c) = labels
        .iter()
        .find(|&&c| c == 0 || c as usize > scoremap.n_cl())
    {
        return Err(Error::ConfigInvariantViolation(format!(
            "image-level label {c} outside 1..={}",
            scoremap.n_cl()
        )));
    }
    Ok(labels.iter().copied().collect())
}

/// Splits pixels into class, background and ignore by comparing the best
/// admissible score against the two thresholds.
pub fn threshold_cam(
    scoremap: &ScoreMap,
    image_level_labels: &BTreeSet<u8>,
    config: &ThresholdConfig,
) -> Result<LabelMask> {
    config.validate()?;
    let labels = check_labels(scoremap, image_level_labels)?;
    let n = scoremap.width() as usize * scoremap.height() as usize;
    let data = (0..n)
        .map(|j| {
            let (class, score) = best_class(scoremap, &labels, j);
            let score = f64::from(score);
            if score > config.fg_threshold {
                class
            } else if score < config.bg_threshold {
                BACKGROUND
            } else {
                IGNORE
            }
        })
        .collect();
    LabelMask::new(scoremap.width(), scoremap.height(), data)
}
