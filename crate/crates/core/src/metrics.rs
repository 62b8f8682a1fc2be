//! Confusion matrices and IoU-family metrics.
//!
//! Rows are ground-truth classes, columns predicted classes. Pixels where
//! either side is the ignore value are tallied separately and never enter
//! the matrix.

use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ClassTable, LabelMask, IGNORE};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    n: usize,
    counts: Vec<u64>,
    ignored: u64,
    include_background: bool,
}

impl ConfusionMatrix {
    /// Empty matrix over `n_classes_total` classes (background included).
    pub fn new(n_classes_total: usize, include_background: bool) -> Self {
        Self {
            n: n_classes_total,
            counts: vec![0; n_classes_total * n_classes_total],
            ignored: 0,
            include_background,
        }
    }

    pub fn n_classes_total(&self) -> usize {
        self.n
    }

    pub fn include_background(&self) -> bool {
        self.include_background
    }

    /// n_ij: pixels of ground-truth class `i` predicted as `j`.
    pub fn count(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.n + j]
    }

    pub fn ignored(&self) -> u64 {
        self.ignored
    }

    /// t_i: ground-truth pixels of class `i`.
    pub fn gt_total(&self, i: usize) -> u64 {
        (0..self.n).map(|j| self.count(i, j)).sum()
    }

    /// Pixels predicted as class `j`.
    pub fn pred_total(&self, j: usize) -> u64 {
        (0..self.n).map(|i| self.count(i, j)).sum()
    }

    /// Pixels that entered the matrix.
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Accumulates one (prediction, ground truth) pair.
    pub fn add_pair(&mut self, pred: &LabelMask, gt: &LabelMask) -> Result<()> {
        pred.ensure_same_dims(gt, "prediction vs ground truth")?;
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            if p == IGNORE || g == IGNORE {
                self.ignored += 1;
                continue;
            }
            let (p, g) = (p as usize, g as usize);
            if p >= self.n || g >= self.n {
                return Err(Error::ValueOutOfRange {
                    value: p.max(g).to_string(),
                    detail: format!("class index beyond {} classes", self.n),
                });
            }
            self.counts[g * self.n + p] += 1;
        }
        Ok(())
    }

    fn scored_classes(&self) -> impl Iterator<Item = usize> + '_ {
        let start = usize::from(!self.include_background);
        start..self.n
    }

    /// IoU of class `i`, or `None` when its denominator is zero.
    pub fn class_iou(&self, i: usize) -> Option<f64> {
        let nii = self.count(i, i);
        let denom = self.gt_total(i) + self.pred_total(i) - nii;
        (denom > 0).then(|| nii as f64 / denom as f64)
    }

    /// Scored classes whose IoU is undefined.
    pub fn excluded_classes(&self) -> Vec<usize> {
        self.scored_classes()
            .filter(|&i| self.class_iou(i).is_none())
            .collect()
    }
}

impl AddAssign<&ConfusionMatrix> for ConfusionMatrix {
    fn add_assign(&mut self, rhs: &ConfusionMatrix) {
        assert_eq!(self.n, rhs.n, "matrices over different class counts");
        for (a, b) in self.counts.iter_mut().zip(&rhs.counts) {
            *a += b;
        }
        self.ignored += rhs.ignored;
    }
}

pub fn confusion_matrix(
    pred: &LabelMask,
    gt: &LabelMask,
    n_classes_total: usize,
    include_background: bool,
) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(n_classes_total, include_background);
    cm.add_pair(pred, gt)?;
    Ok(cm)
}

/// Mean of the defined per-class IoUs.
pub fn mean_iou(cm: &ConfusionMatrix) -> Result<f64> {
    let ious: Vec<f64> = cm.scored_classes().filter_map(|i| cm.class_iou(i)).collect();
    if ious.is_empty() {
        return Err(Error::NoScorableClass);
    }
    Ok(ious.iter().sum::<f64>() / ious.len() as f64)
}

/// Frequency-weighted IoU: per-class IoU weighted by ground-truth share.
pub fn fw_iou(cm: &ConfusionMatrix) -> Result<f64> {
    let total: u64 = cm.scored_classes().map(|i| cm.gt_total(i)).sum();
    if total == 0 {
        return Err(Error::NoPixels);
    }
    Ok(cm
        .scored_classes()
        .filter_map(|i| cm.class_iou(i).map(|iou| cm.gt_total(i) as f64 * iou))
        .sum::<f64>()
        / total as f64)
}

/// The frequency-weighted expression with an extra leading `1 / n_cl`,
/// where `n_cl` counts the scored classes.
pub fn fw_iou_literal(cm: &ConfusionMatrix) -> Result<f64> {
    let n_cl = cm.scored_classes().count();
    Ok(fw_iou(cm)? / n_cl as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub index: u8,
    pub name: String,
    pub iou: Option<f64>,
    pub gt_pixels: u64,
    pub pred_pixels: u64,
    pub intersection: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub images_evaluated: usize,
    pub include_background: bool,
    pub per_class: Vec<ClassScore>,
    pub mean_iou: f64,
    pub fw_iou: f64,
    pub fw_iou_literal: f64,
    pub excluded_classes: Vec<u8>,
    pub pixels_compared: u64,
    pub pixels_ignored: u64,
}

impl MetricsReport {
    pub fn from_matrix(
        cm: &ConfusionMatrix,
        classes: &ClassTable,
        images_evaluated: usize,
    ) -> Result<Self> {
        let per_class = cm
            .scored_classes()
            .map(|i| ClassScore {
                index: i as u8,
                name: classes.name(i as u8).unwrap_or_default().to_string(),
                iou: cm.class_iou(i),
                gt_pixels: cm.gt_total(i),
                pred_pixels: cm.pred_total(i),
                intersection: cm.count(i, i),
            })
            .collect();
        Ok(Self {
            images_evaluated,
            include_background: cm.include_background(),
            per_class,
            mean_iou: mean_iou(cm)?,
            fw_iou: fw_iou(cm)?,
            fw_iou_literal: fw_iou_literal(cm)?,
            excluded_classes: cm.excluded_classes().into_iter().map(|i| i as u8).collect(),
            pixels_compared: cm.total(),
            pixels_ignored: cm.ignored(),
        })
    }
}
