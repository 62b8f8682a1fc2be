//! Merges the one manual annotation of a sequence with each member's CAM
//! pseudo label.
//!
//! The merged label starts as the annotation. A pixel takes the CAM value
//! only when the CAM assigns it a class and the annotation marks it as
//! background; everywhere else the annotation wins.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LabelMask, BACKGROUND, IGNORE};
use crate::sequencer::Sequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MergeOptions {
    /// Additionally require the CAM class to be absent from the
    /// annotation's class inventory.
    pub strict_class_set: bool,
    /// Let CAM ignore pixels through where the annotation is background.
    /// Has no effect in strict mode.
    pub propagate_ignore: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MergeReport {
    pub pixels_from_sequence: u64,
    pub pixels_from_cam: u64,
    /// Ignore pixels in the CAM label.
    pub ignored_pixels: u64,
    pub per_class_added: BTreeMap<u8, u64>,
}

pub fn merge_labels(
    annotation: &LabelMask,
    cam: &LabelMask,
    options: &MergeOptions,
) -> Result<(LabelMask, MergeReport)> {
    annotation.ensure_same_dims(cam, "annotation vs CAM label")?;
    if annotation.has_ignore() {
        return Err(Error::AnnotationHasIgnorePixels);
    }
    let inventory: BTreeSet<u8> = if options.strict_class_set {
        annotation.classes_present().into_iter().collect()
    } else {
        BTreeSet::new()
    };

    let mut merged = annotation.clone();
    let mut report = MergeReport::default();
    for (out, &p) in merged.data_mut().iter_mut().zip(cam.data()) {
        if p == IGNORE {
            report.ignored_pixels += 1;
        }
        let s = *out;
        let take = if s != BACKGROUND {
            false
        } else if p == IGNORE {
            options.propagate_ignore && !options.strict_class_set
        } else {
            p != BACKGROUND && !inventory.contains(&p)
        };
        if take {
            *out = p;
            report.pixels_from_cam += 1;
            if p != IGNORE {
                *report.per_class_added.entry(p).or_default() += 1;
            }
        } else {
            report.pixels_from_sequence += 1;
        }
    }
    Ok((merged, report))
}

/// Outcome of spreading one annotation across a sequence. Per-image failures
/// are collected rather than aborting the whole sequence.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Propagation {
    pub masks: BTreeMap<String, LabelMask>,
    pub reports: BTreeMap<String, MergeReport>,
    pub warnings: Vec<String>,
    pub errors: BTreeMap<String, String>,
}

pub fn propagate_sequence(
    sequence: &Sequence,
    annotation: &LabelMask,
    cam_labels: &BTreeMap<String, LabelMask>,
    options: &MergeOptions,
) -> Result<Propagation> {
    if annotation.has_ignore() {
        return Err(Error::AnnotationHasIgnorePixels);
    }
    enum Outcome {
        Merged(LabelMask, MergeReport, Option<String>),
        Failed(String),
    }
    let verbatim = || MergeReport {
        pixels_from_sequence: annotation.len() as u64,
        ..Default::default()
    };
    let outcomes: Vec<(String, Outcome)> = sequence
        .image_ids
        .par_iter()
        .map(|id| {
            let outcome = if *id == sequence.representative_id {
                Outcome::Merged(annotation.clone(), verbatim(), None)
            } else {
                match cam_labels.get(id) {
                    None => Outcome::Merged(
                        annotation.clone(),
                        verbatim(),
                        Some(format!("image {id:?} has no CAM label; annotation copied")),
                    ),
                    Some(cam) => match merge_labels(annotation, cam, options) {
                        Ok((m, r)) => Outcome::Merged(m, r, None),
                        Err(e) => Outcome::Failed(e.to_string()),
                    },
                }
            };
            (id.clone(), outcome)
        })
        .collect();

    let mut result = Propagation::default();
    for (id, outcome) in outcomes {
        match outcome {
            Outcome::Merged(mask, report, warning) => {
                result.warnings.extend(warning);
                result.masks.insert(id.clone(), mask);
                result.reports.insert(id, report);
            }
            Outcome::Failed(e) => {
                result.errors.insert(id, e);
            }
        }
    }
    Ok(result)
}
