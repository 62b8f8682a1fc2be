//! Workspace-level stages: each reads its inputs from a [`Workspace`],
//! writes its outputs back atomically, and reports per-image problems
//! without aborting the whole batch.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::campseudo::{cam_pseudo_label, refine_crf, CrfConfig, ThresholdConfig};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::merger::{propagate_sequence, MergeOptions, MergeReport};
use crate::metrics::{ConfusionMatrix, MetricsReport};
use crate::model::{
    read_mask, read_rgb, read_scoremap, write_mask, DatasetManifest, LabelMask, BACKGROUND, IGNORE,
};
use crate::sequencer::{build_sequences, extract_all, save_sequences, Sequence, SequenceSet, SequencerConfig};
use crate::workspace::Workspace;

/// What a stage wrote, what it skipped and what failed, keyed by image id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub written: Vec<String>,
    pub warnings: Vec<String>,
    pub failures: BTreeMap<String, String>,
}

impl StageOutcome {
    pub fn into_result(self, stage: &'static str) -> Result<Self> {
        if self.failures.is_empty() {
            Ok(self)
        } else {
            Err(Error::PartialFailure {
                stage,
                failed: self.failures.len(),
                total: self.failures.len() + self.written.len(),
            })
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn run_sequence(
    ws: &Workspace,
    manifest: &DatasetManifest,
    config: &SequencerConfig,
) -> Result<SequenceSet> {
    let features = extract_all(manifest, config)?;
    let set = build_sequences(manifest, &features, config)?;
    save_sequences(&set, &ws.sequences_path())?;
    Ok(set)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CamStageConfig {
    pub threshold: ThresholdConfig,
    /// CRF refinement, skipped when absent.
    pub crf: Option<CrfConfig>,
}

/// Where dense-CRF refinement runs: on the CAM branch before merging (the
/// default), on merged labels after merging, or not at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrfStage {
    #[default]
    Cam,
    Merged,
    Off,
}

impl CrfStage {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "cam" => Some(Self::Cam),
            "merged" => Some(Self::Merged),
            "off" => Some(Self::Off),
            _ => None,
        }
    }

    /// CRF to apply in the campseudo stage.
    pub fn for_cam(self, crf: CrfConfig) -> Option<CrfConfig> {
        (self == Self::Cam).then_some(crf)
    }

    /// CRF to apply after merging.
    pub fn for_merge(self, crf: CrfConfig) -> Option<CrfConfig> {
        (self == Self::Merged).then_some(crf)
    }
}

/// Options for propagating an annotation into merged masks.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PropagateConfig {
    pub merge: MergeOptions,
    /// Refines merged masks of non-representative members.
    pub refine: Option<CrfConfig>,
}

/// Writes one CAM pseudo label per image that has a score map.
pub fn run_campseudo(
    ws: &Workspace,
    manifest: &DatasetManifest,
    config: &CamStageConfig,
) -> Result<StageOutcome> {
    config.threshold.validate()?;
    if let Some(crf) = &config.crf {
        crf.validate()?;
    }
    let results: Vec<(String, Option<Result<()>>)> = manifest
        .images
        .par_iter()
        .map(|rec| {
            let Some(smp) = &rec.scoremap_path else {
                return (rec.id.clone(), None);
            };
            let run = || -> Result<()> {
                let scores = read_scoremap(smp)?;
                if scores.n_cl() != manifest.classes.n_cl() {
                    return Err(Error::DimensionMismatch(format!(
                        "score map has {} planes, class table has {} classes",
                        scores.n_cl(),
                        manifest.classes.n_cl()
                    )));
                }
                let image = if config.crf.is_some() {
                    read_rgb(&rec.image_path)?
                } else {
                    crate::model::RgbImage::new(scores.width(), scores.height())
                };
                let mask = cam_pseudo_label(
                    &scores,
                    &image,
                    &rec.class_labels,
                    &config.threshold,
                    config.crf.as_ref(),
                )?;
                write_mask(&mask, &ws.campseudo_path(&rec.id))
            };
            (rec.id.clone(), Some(run()))
        })
        .collect();
    let mut outcome = StageOutcome::default();
    for (id, r) in results {
        match r {
            None => outcome
                .warnings
                .push(format!("image {id:?} has no score map; skipped")),
            Some(Ok(())) => outcome.written.push(id),
            Some(Err(e)) => {
                outcome.failures.insert(id, e.to_string());
            }
        }
    }
    Ok(outcome)
}

/// Grows (`radius > 0`) or shrinks (`radius < 0`) every class region by
/// `|radius|` steps of 4-connected morphology. Background fills eroded pixels.
pub fn perturb_annotation(mask: &LabelMask, radius: i32) -> LabelMask {
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let mut cur = mask.clone();
    for _ in 0..radius.unsigned_abs() {
        let prev = cur.clone();
        let at = |x: i64, y: i64| prev.data()[(y * w + x) as usize];
        for y in 0..h {
            for x in 0..w {
                let v = at(x, y);
                let neighbours = [(x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)]
                    .into_iter()
                    .filter(|&(nx, ny)| nx >= 0 && ny >= 0 && nx < w && ny < h)
                    .map(|(nx, ny)| at(nx, ny));
                let idx = (y * w + x) as usize;
                if radius > 0 {
                    if v == BACKGROUND {
                        if let Some(c) = neighbours.filter(|&c| c != BACKGROUND && c != IGNORE).min() {
                            cur.data_mut()[idx] = c;
                        }
                    }
                } else if v != BACKGROUND && neighbours.into_iter().any(|c| c != v) {
                    cur.data_mut()[idx] = BACKGROUND;
                }
            }
        }
    }
    cur
}

/// Stands in for the human annotator: copies each representative's
/// ground-truth mask into `annotations/`, optionally perturbed.
pub fn simulate_annotations(
    ws: &Workspace,
    manifest: &DatasetManifest,
    sequences: &SequenceSet,
    noise_radius: i32,
) -> Result<Vec<String>> {
    let mut written = Vec::new();
    for seq in &sequences.sequences {
        let rec = manifest.get(&seq.representative_id).ok_or_else(|| {
            Error::InvariantViolation(format!("unknown representative {:?}", seq.representative_id))
        })?;
        let Some(gt_path) = &rec.gt_mask_path else {
            continue;
        };
        let gt = read_mask(gt_path, Some(&manifest.classes))?.ignore_as_background();
        let annotation = perturb_annotation(&gt, noise_radius);
        write_mask(&annotation, &ws.annotation_path(&seq.id))?;
        written.push(seq.id.clone());
    }
    Ok(written)
}

/// Sidecar written next to every merged mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeRecord {
    pub image_id: String,
    pub sequence_id: String,
    pub representative: bool,
    pub annotation_sha256: String,
    pub report: MergeReport,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PropagationSummary {
    pub sequence_id: String,
    pub records: Vec<MergeRecord>,
    pub warnings: Vec<String>,
    pub failures: BTreeMap<String, String>,
}

/// Validates an uploaded or stored annotation for `seq`.
pub fn check_annotation(
    manifest: &DatasetManifest,
    seq: &Sequence,
    bytes: &[u8],
) -> Result<LabelMask> {
    let annotation = LabelMask::decode_png(bytes, Some(&manifest.classes))?;
    if annotation.has_ignore() {
        return Err(Error::AnnotationHasIgnorePixels);
    }
    if let Some(rec) = manifest.get(&seq.representative_id) {
        let dims = image::image_dimensions(&rec.image_path)
            .map_err(|e| Error::UndecodableImage {
                path: rec.image_path.clone(),
                detail: e.to_string(),
            })?;
        if dims != annotation.dims() {
            return Err(Error::DimensionMismatch(format!(
                "annotation is {}x{}, representative image {:?} is {}x{}",
                annotation.width(),
                annotation.height(),
                rec.id,
                dims.0,
                dims.1
            )));
        }
    }
    Ok(annotation)
}

/// Merges the stored annotation of `seq` into every member and writes the
/// merged masks with their report sidecars.
pub fn propagate_to_workspace(
    ws: &Workspace,
    manifest: &DatasetManifest,
    seq: &Sequence,
    annotation_bytes: &[u8],
    config: &PropagateConfig,
) -> Result<PropagationSummary> {
    if let Some(crf) = &config.refine {
        crf.validate()?;
    }
    let annotation = check_annotation(manifest, seq, annotation_bytes)?;
    let digest = sha256_hex(annotation_bytes);
    let mut cams = BTreeMap::new();
    let mut failures = BTreeMap::new();
    for id in &seq.image_ids {
        if *id == seq.representative_id {
            continue;
        }
        let path = ws.campseudo_path(id);
        match read_mask(&path, Some(&manifest.classes)) {
            Ok(m) => {
                cams.insert(id.clone(), m);
            }
            Err(Error::MissingFile(_)) => {}
            Err(e) => {
                failures.insert(id.clone(), e.to_string());
            }
        }
    }
    let mut propagation = propagate_sequence(seq, &annotation, &cams, &config.merge)?;
    failures.extend(std::mem::take(&mut propagation.errors));
    if let Some(crf) = &config.refine {
        let refined: Vec<(String, Result<Option<LabelMask>>)> = propagation
            .masks
            .par_iter()
            .filter(|(id, _)| **id != seq.representative_id)
            .map(|(id, mask)| (id.clone(), refine_member(manifest, id, mask, crf)))
            .collect();
        for (id, r) in refined {
            match r {
                Ok(Some(mask)) => {
                    propagation.masks.insert(id, mask);
                }
                Ok(None) => propagation
                    .warnings
                    .push(format!("image {id:?} has no score map; merged mask not refined")),
                Err(e) => {
                    propagation.masks.remove(&id);
                    failures.insert(id, e.to_string());
                }
            }
        }
    }

    let mut summary = PropagationSummary {
        sequence_id: seq.id.clone(),
        warnings: propagation.warnings.clone(),
        failures,
        ..Default::default()
    };
    for id in &seq.image_ids {
        let (Some(mask), Some(report)) = (propagation.masks.get(id), propagation.reports.get(id))
        else {
            continue;
        };
        let warnings = propagation
            .warnings
            .iter()
            .filter(|w| w.contains(&format!("{id:?}")))
            .cloned()
            .collect();
        let record = MergeRecord {
            image_id: id.clone(),
            sequence_id: seq.id.clone(),
            representative: *id == seq.representative_id,
            annotation_sha256: digest.clone(),
            report: report.clone(),
            warnings,
        };
        write_mask(mask, &ws.merged_path(id))?;
        fsutil::write_json(&ws.merge_report_path(id), &record)?;
        summary.records.push(record);
    }
    Ok(summary)
}

fn refine_member(
    manifest: &DatasetManifest,
    id: &str,
    mask: &LabelMask,
    crf: &CrfConfig,
) -> Result<Option<LabelMask>> {
    let Some(rec) = manifest.get(id) else {
        return Ok(None);
    };
    let Some(smp) = &rec.scoremap_path else {
        return Ok(None);
    };
    let scores = read_scoremap(smp)?;
    let image = read_rgb(&rec.image_path)?;
    refine_crf(&scores, &image, mask, crf).map(Some)
}

/// Propagates every stored annotation. Sequences with members beyond their
/// representative must be annotated.
pub fn run_merge(
    ws: &Workspace,
    manifest: &DatasetManifest,
    sequences: &SequenceSet,
    config: &PropagateConfig,
) -> Result<StageOutcome> {
    let missing: Vec<String> = sequences
        .sequences
        .iter()
        .filter(|s| s.len() > 1 && !ws.annotation_path(&s.id).exists())
        .map(|s| s.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingAnnotation(missing));
    }
    let mut outcome = StageOutcome::default();
    for seq in &sequences.sequences {
        let path = ws.annotation_path(&seq.id);
        if !path.exists() {
            outcome
                .warnings
                .push(format!("sequence {:?} has no annotation; skipped", seq.id));
            continue;
        }
        let bytes = fsutil::read(&path)?;
        let summary = propagate_to_workspace(ws, manifest, seq, &bytes, config)?;
        outcome
            .written
            .extend(summary.records.into_iter().map(|r| r.image_id));
        outcome.warnings.extend(summary.warnings);
        outcome.failures.extend(summary.failures);
    }
    Ok(outcome)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceStatus {
    Unannotated,
    Annotated,
    Propagated,
}

/// Derives a sequence's status from disk: propagated means every member has a
/// merged mask produced from the annotation currently stored.
pub fn sequence_status(ws: &Workspace, seq: &Sequence) -> SequenceStatus {
    let Ok(bytes) = std::fs::read(ws.annotation_path(&seq.id)) else {
        return SequenceStatus::Unannotated;
    };
    let digest = sha256_hex(&bytes);
    let current = seq.image_ids.iter().all(|id| {
        ws.merged_path(id).exists()
            && std::fs::read(ws.merge_report_path(id))
                .ok()
                .and_then(|b| serde_json::from_slice::<MergeRecord>(&b).ok())
                .is_some_and(|r| r.annotation_sha256 == digest && r.sequence_id == seq.id)
    });
    if current {
        SequenceStatus::Propagated
    } else {
        SequenceStatus::Annotated
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsOptions {
    pub include_background: bool,
    /// Score ignore pixels in predictions as background instead of dropping them.
    pub ignore_as_background: bool,
}

impl Default for MetricsOptions {
    fn default() -> Self {
        Self {
            include_background: true,
            ignore_as_background: false,
        }
    }
}

/// Evaluates every image having both `<pred_dir>/<id>.png` and a
/// ground-truth mask, summing per-image confusion matrices.
pub fn evaluate_dir(
    manifest: &DatasetManifest,
    pred_dir: &Path,
    options: &MetricsOptions,
) -> Result<MetricsReport> {
    let pairs: Vec<_> = manifest
        .images
        .iter()
        .filter_map(|r| {
            let gt = r.gt_mask_path.as_ref()?;
            let pred = pred_dir.join(format!("{}.png", r.id));
            pred.exists().then(|| (pred, gt.clone()))
        })
        .collect();
    if pairs.is_empty() {
        return Err(Error::NoOverlap);
    }
    let n = manifest.classes.n_cl() + 1;
    let matrices = pairs
        .par_iter()
        .map(|(pred, gt)| {
            let mut p = read_mask(pred, Some(&manifest.classes))?;
            if options.ignore_as_background {
                p = p.ignore_as_background();
            }
            let g = read_mask(gt, Some(&manifest.classes))?;
            crate::metrics::confusion_matrix(&p, &g, n, options.include_background)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = ConfusionMatrix::new(n, options.include_background);
    for m in &matrices {
        total += m;
    }
    MetricsReport::from_matrix(&total, &manifest.classes, pairs.len())
}
