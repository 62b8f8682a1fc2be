//! Groups images of the same evolving subject into sequences of similar
//! images and picks the image of each sequence that gets annotated by hand.
//!
//! Images are bucketed by `(subject, image-level label set)`, ordered by
//! `(timestep, id)`, and a bucket is cut wherever the feature distance between
//! two adjacent images exceeds the split threshold.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::model::{read_rgb, DatasetManifest, ImageRecord, RgbImage};

pub const FVE1_MAGIC: [u8; 4] = *b"FVE1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    Cosine,
    L1,
}

impl DistanceMetric {
    /// Upper bound of the metric on L1-normalized non-negative vectors.
    pub fn max_value(self) -> f64 {
        match self {
            DistanceMetric::Cosine => 1.0,
            DistanceMetric::L1 => 2.0,
        }
    }

    pub fn eval(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            DistanceMetric::Cosine => {
                if a == b {
                    return 0.0;
                }
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                if na == 0.0 && nb == 0.0 {
                    0.0
                } else if na == 0.0 || nb == 0.0 {
                    1.0
                } else {
                    (1.0 - dot / (na * nb)).max(0.0)
                }
            }
            DistanceMetric::L1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    Histogram,
    ExternalFile,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequencerConfig {
    pub distance: DistanceMetric,
    pub split_threshold: f64,
    pub feature_source: FeatureSource,
    pub histogram_bins: u32,
}

impl Default for SequencerConfig {
    fn default() -> Self {
        Self {
            distance: DistanceMetric::Cosine,
            split_threshold: 0.15,
            feature_source: FeatureSource::Histogram,
            histogram_bins: 64,
        }
    }
}

impl SequencerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.split_threshold >= 0.0) {
            return Err(Error::ConfigInvariantViolation(format!(
                "split threshold {} must be >= 0",
                self.split_threshold
            )));
        }
        if !(2..=256).contains(&self.histogram_bins) {
            return Err(Error::ConfigInvariantViolation(format!(
                "histogram bins {} outside 2..=256",
                self.histogram_bins
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Histogram,
    External,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub source: FeatureKind,
}

/// Concatenated per-channel RGB histograms, normalized to sum to one over
/// all three channels.
pub fn histogram_features(img: &RgbImage, bins: u32) -> FeatureVector {
    let bins = bins as usize;
    let mut counts = vec![0u64; 3 * bins];
    for px in img.pixels() {
        for (c, &v) in px.0.iter().enumerate() {
            counts[c * bins + v as usize * bins / 256] += 1;
        }
    }
    let total = (3 * img.width() as u64 * img.height() as u64).max(1) as f64;
    FeatureVector {
        values: counts.into_iter().map(|n| n as f64 / total).collect(),
        source: FeatureKind::Histogram,
    }
}

/// Path of the external feature file that accompanies an image.
pub fn feature_sidecar(image_path: &Path) -> PathBuf {
    image_path.with_extension("fve")
}

pub fn encode_fve(values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * values.len());
    out.extend_from_slice(&FVE1_MAGIC);
    out.extend_from_slice(&(values.len() as u32).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_fve(bytes: &[u8]) -> Result<Vec<f32>> {
    if bytes.len() < 4 || bytes[..4] != FVE1_MAGIC {
        return Err(Error::BadMagic {
            expected: FVE1_MAGIC,
            found: bytes[..bytes.len().min(4)].to_vec(),
        });
    }
    if bytes.len() < 8 {
        return Err(Error::TruncatedFile {
            expected: 8,
            actual: bytes.len() as u64,
        });
    }
    let dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as u64;
    let actual = (bytes.len() - 8) as u64;
    if actual < dim * 4 {
        return Err(Error::TruncatedFile {
            expected: dim * 4,
            actual,
        });
    }
    let values: Vec<f32> = bytes[8..8 + dim as usize * 4]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue { plane: 0, index });
    }
    Ok(values)
}

pub fn extract_features(record: &ImageRecord, config: &SequencerConfig) -> Result<FeatureVector> {
    match config.feature_source {
        FeatureSource::Histogram => {
            let img = read_rgb(&record.image_path)?;
            Ok(histogram_features(&img, config.histogram_bins))
        }
        FeatureSource::ExternalFile => {
            let path = feature_sidecar(&record.image_path);
            let bytes = std::fs::read(&path).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => Error::MissingFeatureFile(path.clone()),
                _ => Error::io(&path, e),
            })?;
            Ok(FeatureVector {
                values: decode_fve(&bytes)?.into_iter().map(f64::from).collect(),
                source: FeatureKind::External,
            })
        }
    }
}

/// Extracts features for every image (in parallel) and checks they share
/// one dimension.
pub fn extract_all(
    manifest: &DatasetManifest,
    config: &SequencerConfig,
) -> Result<BTreeMap<String, FeatureVector>> {
    config.validate()?;
    let features = manifest
        .images
        .par_iter()
        .map(|r| extract_features(r, config).map(|f| (r.id.clone(), f)))
        .collect::<Result<Vec<_>>>()?;
    check_common_dimension(features.iter().map(|(id, f)| (id.as_str(), f)))?;
    Ok(features.into_iter().collect())
}

fn check_common_dimension<'a>(
    features: impl IntoIterator<Item = (&'a str, &'a FeatureVector)>,
) -> Result<()> {
    let mut expected: Option<(&str, usize)> = None;
    for (id, f) in features {
        match expected {
            None => expected = Some((id, f.values.len())),
            Some((first, dim)) if dim != f.values.len() => {
                return Err(Error::DimensionMismatch(format!(
                    "feature of {id:?} has {} dimensions, {first:?} has {dim}",
                    f.values.len()
                )))
            }
            _ => {}
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sequence {
    pub id: String,
    pub image_ids: Vec<String>,
    pub representative_id: String,
    pub class_labels: BTreeSet<u8>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.image_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.image_ids.is_empty()
    }

    pub fn contains(&self, image_id: &str) -> bool {
        self.image_ids.iter().any(|i| i == image_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SequenceSet {
    pub sequences: Vec<Sequence>,
}

#[derive(Serialize, Deserialize)]
struct SequenceSetDoc {
    sequences: Vec<SequenceDoc>,
}

#[derive(Serialize, Deserialize)]
struct SequenceDoc {
    id: String,
    image_ids: Vec<String>,
    representative_id: String,
}

impl SequenceSet {
    /// Sequence count.
    pub fn n(&self) -> usize {
        self.sequences.len()
    }

    pub fn get(&self, id: &str) -> Option<&Sequence> {
        self.sequences.iter().find(|s| s.id == id)
    }

    pub fn sequence_of(&self, image_id: &str) -> Option<&Sequence> {
        self.sequences.iter().find(|s| s.contains(image_id))
    }

    pub fn to_json_bytes(&self) -> Vec<u8> {
        let doc = SequenceSetDoc {
            sequences: self
                .sequences
                .iter()
                .map(|s| SequenceDoc {
                    id: s.id.clone(),
                    image_ids: s.image_ids.clone(),
                    representative_id: s.representative_id.clone(),
                })
                .collect(),
        };
        fsutil::to_json_bytes(&doc)
    }

    /// Parses a serialized set, restoring label sets from the manifest and
    /// checking that the set partitions the manifest's images.
    pub fn from_json(text: &str, manifest: &DatasetManifest) -> Result<Self> {
        let doc: SequenceSetDoc = serde_json::from_str(text).map_err(|e| {
            Error::InvariantViolation(format!(
                "sequences document, line {} column {}: {e}",
                e.line(),
                e.column()
            ))
        })?;
        let records: HashMap<&str, &ImageRecord> =
            manifest.images.iter().map(|r| (r.id.as_str(), r)).collect();
        let mut seen = BTreeSet::new();
        let mut ids = BTreeSet::new();
        let mut sequences = Vec::with_capacity(doc.sequences.len());
        for s in doc.sequences {
            if !crate::model::manifest::is_safe_id(&s.id) || !ids.insert(s.id.clone()) {
                return Err(Error::InvariantViolation(format!(
                    "invalid or duplicate sequence id {:?}",
                    s.id
                )));
            }
            let first = s
                .image_ids
                .first()
                .and_then(|i| records.get(i.as_str()))
                .ok_or_else(|| {
                    Error::InvariantViolation(format!("sequence {:?} is empty or unknown", s.id))
                })?;
            for image_id in &s.image_ids {
                let rec = records.get(image_id.as_str()).ok_or_else(|| {
                    Error::InvariantViolation(format!(
                        "sequence {:?} lists unknown image {image_id:?}",
                        s.id
                    ))
                })?;
                if rec.subject != first.subject || rec.class_labels != first.class_labels {
                    return Err(Error::InvariantViolation(format!(
                        "sequence {:?} mixes subjects or label sets",
                        s.id
                    )));
                }
                if !seen.insert(image_id.clone()) {
                    return Err(Error::InvariantViolation(format!(
                        "image {image_id:?} appears in more than one sequence"
                    )));
                }
            }
            if !s.image_ids.contains(&s.representative_id) {
                return Err(Error::InvariantViolation(format!(
                    "representative {:?} is not a member of sequence {:?}",
                    s.representative_id, s.id
                )));
            }
            sequences.push(Sequence {
                class_labels: first.class_labels.clone(),
                id: s.id,
                image_ids: s.image_ids,
                representative_id: s.representative_id,
            });
        }
        if seen.len() != records.len() {
            return Err(Error::InvariantViolation(format!(
                "sequences cover {} of {} images",
                seen.len(),
                records.len()
            )));
        }
        Ok(Self { sequences })
    }
}

pub fn load_sequences(path: &Path, manifest: &DatasetManifest) -> Result<SequenceSet> {
    let bytes = fsutil::read(path)?;
    SequenceSet::from_json(&String::from_utf8_lossy(&bytes), manifest)
}

pub fn save_sequences(set: &SequenceSet, path: &Path) -> Result<()> {
    fsutil::write_atomic(path, &set.to_json_bytes())
}

pub fn build_sequences(
    manifest: &DatasetManifest,
    features: &BTreeMap<String, FeatureVector>,
    config: &SequencerConfig,
) -> Result<SequenceSet> {
    config.validate()?;
    let mut vectors = Vec::with_capacity(manifest.len());
    for r in &manifest.images {
        let f = features.get(&r.id).ok_or_else(|| {
            Error::InvariantViolation(format!("no feature vector for image {:?}", r.id))
        })?;
        vectors.push((r.id.as_str(), f));
    }
    check_common_dimension(vectors.iter().copied())?;

    let mut groups: BTreeMap<(&str, Vec<u8>), Vec<&ImageRecord>> = BTreeMap::new();
    for r in &manifest.images {
        groups
            .entry((r.subject.as_str(), r.class_labels.iter().copied().collect()))
            .or_default()
            .push(r);
    }

    let mut sequences = Vec::new();
    for (_, mut members) in groups {
        members.sort_by(|a, b| a.timestep.cmp(&b.timestep).then_with(|| a.id.cmp(&b.id)));
        let mut current: Vec<&ImageRecord> = vec![members[0]];
        for pair in members.windows(2) {
            let d = config
                .distance
                .eval(&features[&pair[0].id].values, &features[&pair[1].id].values);
            if d > config.split_threshold {
                sequences.push(finish_sequence(sequences.len(), &current, features, config));
                current.clear();
            }
            current.push(pair[1]);
        }
        sequences.push(finish_sequence(sequences.len(), &current, features, config));
    }
    Ok(SequenceSet { sequences })
}

fn finish_sequence(
    index: usize,
    members: &[&ImageRecord],
    features: &BTreeMap<String, FeatureVector>,
    config: &SequencerConfig,
) -> Sequence {
    let image_ids: Vec<String> = members.iter().map(|r| r.id.clone()).collect();
    let representative_id = select_representative(&image_ids, features, config.distance);
    Sequence {
        id: format!("seq-{index:04}"),
        representative_id,
        class_labels: members[0].class_labels.clone(),
        image_ids,
    }
}

/// Medoid of the members: the one minimizing the summed distance to all
/// others, ties going to the lexicographically smallest id.
pub fn select_representative(
    image_ids: &[String],
    features: &BTreeMap<String, FeatureVector>,
    metric: DistanceMetric,
) -> String {
    let mut best: Option<(f64, &String)> = None;
    for a in image_ids {
        let total: f64 = image_ids
            .iter()
            .filter(|b| *b != a)
            .map(|b| metric.eval(&features[a].values, &features[b].values))
            .sum();
        best = match best {
            Some((t, id)) if t < total || (t == total && id <= a) => Some((t, id)),
            _ => Some((total, a)),
        };
    }
    best.map(|(_, id)| id.clone())
        .expect("sequences are never empty")
}
