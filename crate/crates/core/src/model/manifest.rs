use std::collections::{BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::classes::ClassTable;
use crate::error::{Error, Result};
use crate::fsutil;

/// One image of the dataset with its weak (image-level) labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRecord {
    pub id: String,
    pub image_path: PathBuf,
    pub scoremap_path: Option<PathBuf>,
    pub class_labels: BTreeSet<u8>,
    pub subject: String,
    pub timestep: u64,
    pub gt_mask_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub classes: ClassTable,
    pub images: Vec<ImageRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestDoc {
    classes: Vec<String>,
    images: Vec<ImageDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImageDoc {
    id: String,
    image_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scoremap_path: Option<String>,
    class_labels: Vec<String>,
    subject: String,
    timestep: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gt_mask_path: Option<String>,
}

impl DatasetManifest {
    pub fn new(classes: ClassTable, images: Vec<ImageRecord>) -> Result<Self> {
        let manifest = Self { classes, images };
        manifest.validate()?;
        Ok(manifest)
    }

    /// Image count.
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ImageRecord> {
        self.images.iter().find(|r| r.id == id)
    }

    pub fn validate(&self) -> Result<()> {
        let n_cl = self.classes.n_cl();
        let mut ids = HashSet::new();
        for rec in &self.images {
            if rec.id.is_empty() {
                return Err(Error::InvariantViolation("empty image id".into()));
            }
            if !is_safe_id(&rec.id) {
                return Err(Error::InvariantViolation(format!(
                    "image id {:?} contains path separators or control characters",
                    rec.id
                )));
            }
            if !ids.insert(rec.id.as_str()) {
                return Err(Error::InvariantViolation(format!(
                    "duplicate image id {:?}",
                    rec.id
                )));
            }
            if rec.class_labels.is_empty() {
                return Err(Error::InvariantViolation(format!(
                    "image {:?} has no class labels",
                    rec.id
                )));
            }
            if let Some(&bad) = rec
                .class_labels
                .iter()
                .find(|&&c| c == 0 || c as usize > n_cl)
            {
                return Err(Error::InvariantViolation(format!(
                    "image {:?} has class index {bad} outside 1..={n_cl}",
                    rec.id
                )));
            }
        }
        Ok(())
    }

    /// Parses a manifest document; relative paths are resolved against `base_dir`.
    pub fn from_json(text: &str, base_dir: &Path, origin: &Path) -> Result<Self> {
        let malformed = |detail: String| Error::MalformedManifest {
            path: origin.to_path_buf(),
            detail,
        };
        let doc: ManifestDoc = serde_json::from_str(text).map_err(|e| {
            malformed(format!("line {} column {}: {e}", e.line(), e.column()))
        })?;
        let classes = ClassTable::new(doc.classes)?;
        let resolve = |p: &str| {
            let p = Path::new(p);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base_dir.join(p)
            }
        };
        let mut images = Vec::with_capacity(doc.images.len());
        for (i, img) in doc.images.into_iter().enumerate() {
            let mut class_labels = BTreeSet::new();
            for name in &img.class_labels {
                let idx = classes.index_of(name).filter(|&c| c != 0).ok_or_else(|| {
                    Error::InvariantViolation(format!(
                        "images[{i}] ({:?}).class_labels: unknown class {name:?}",
                        img.id
                    ))
                })?;
                class_labels.insert(idx);
            }
            images.push(ImageRecord {
                image_path: resolve(&img.image_path),
                scoremap_path: img.scoremap_path.as_deref().map(resolve),
                gt_mask_path: img.gt_mask_path.as_deref().map(resolve),
                id: img.id,
                class_labels,
                subject: img.subject,
                timestep: img.timestep,
            });
        }
        Self::new(classes, images)
    }

    /// Renders the manifest document with paths relative to `base_dir` where possible.
    pub fn to_json_bytes(&self, base_dir: &Path) -> Vec<u8> {
        let rel = |p: &Path| {
            p.strip_prefix(base_dir)
                .unwrap_or(p)
                .to_string_lossy()
                .replace('\\', "/")
        };
        let doc = ManifestDoc {
            classes: self.classes.names().to_vec(),
            images: self
                .images
                .iter()
                .map(|r| ImageDoc {
                    id: r.id.clone(),
                    image_path: rel(&r.image_path),
                    scoremap_path: r.scoremap_path.as_deref().map(rel),
                    class_labels: r
                        .class_labels
                        .iter()
                        .map(|&c| self.classes.name(c).unwrap_or_default().to_string())
                        .collect(),
                    subject: r.subject.clone(),
                    timestep: r.timestep,
                    gt_mask_path: r.gt_mask_path.as_deref().map(rel),
                })
                .collect(),
        };
        fsutil::to_json_bytes(&doc)
    }
}

/// Ids double as file stems, so they must not escape their directory.
pub fn is_safe_id(id: &str) -> bool {
    !id.is_empty()
        && id != "."
        && id != ".."
        && !id.chars().any(|c| c == '/' || c == '\\' || c.is_control())
}

fn manifest_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let bytes = fsutil::read(path)?;
    let text = String::from_utf8(bytes).map_err(|e| Error::MalformedManifest {
        path: path.to_path_buf(),
        detail: format!("not UTF-8: {e}"),
    })?;
    DatasetManifest::from_json(&text, &manifest_dir(path), path)
}

pub fn save_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    manifest.validate()?;
    fsutil::write_atomic(path, &manifest.to_json_bytes(&manifest_dir(path)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const BODY: &str = r#"["background","hand","arm","foot","leg","torso","head"]"#;

    fn parse(text: &str) -> Result<DatasetManifest> {
        DatasetManifest::from_json(text, Path::new("/data"), Path::new("/data/manifest.json"))
    }

    #[test]
    fn empty_manifest() {
        let m = parse(&format!(r#"{{"classes":{BODY},"images":[]}}"#)).unwrap();
        assert_eq!(m.len(), 0);
        assert_eq!(m.classes.n_cl(), 6);
    }

    #[test]
    fn resolves_relative_paths() {
        let m = parse(&format!(
            r#"{{"classes":{BODY},"images":[{{"id":"a","image_path":"img/a.png","scoremap_path":"/abs/a.smp","class_labels":["arm","head"],"subject":"s1","timestep":3}}]}}"#
        ))
        .unwrap();
        let r = &m.images[0];
        assert_eq!(r.image_path, Path::new("/data/img/a.png"));
        assert_eq!(r.scoremap_path.as_deref(), Some(Path::new("/abs/a.smp")));
        assert_eq!(r.class_labels, BTreeSet::from([2, 6]));
        assert_eq!(r.gt_mask_path, None);
    }

    #[test]
    fn duplicate_id_names_the_id() {
        let img = r#"{"id":"a","image_path":"a.png","class_labels":["hand"],"subject":"s","timestep":0}"#;
        let err = parse(&format!(r#"{{"classes":{BODY},"images":[{img},{img}]}}"#)).unwrap_err();
        assert!(matches!(err, Error::InvariantViolation(ref m) if m.contains("\"a\"")), "{err}");
    }

    #[test]
    fn malformed_reports_line() {
        let err = parse("{\n\"classes\": [\"background\", \"x\"],\n\"images\": [ oops ]}").unwrap_err();
        match err {
            Error::MalformedManifest { detail, .. } => assert!(detail.contains("line 3"), "{detail}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_class_and_empty_labels() {
        let bad = format!(
            r#"{{"classes":{BODY},"images":[{{"id":"a","image_path":"a.png","class_labels":["tail"],"subject":"s","timestep":0}}]}}"#
        );
        assert!(matches!(parse(&bad), Err(Error::InvariantViolation(_))));
        let bg = format!(
            r#"{{"classes":{BODY},"images":[{{"id":"a","image_path":"a.png","class_labels":["background"],"subject":"s","timestep":0}}]}}"#
        );
        assert!(matches!(parse(&bg), Err(Error::InvariantViolation(_))));
        let empty = format!(
            r#"{{"classes":{BODY},"images":[{{"id":"a","image_path":"a.png","class_labels":[],"subject":"s","timestep":0}}]}}"#
        );
        assert!(matches!(parse(&empty), Err(Error::InvariantViolation(_))));
    }

    #[test]
    fn unsafe_ids_rejected() {
        let bad = format!(
            r#"{{"classes":{BODY},"images":[{{"id":"../x","image_path":"a.png","class_labels":["arm"],"subject":"s","timestep":0}}]}}"#
        );
        assert!(matches!(parse(&bad), Err(Error::InvariantViolation(_))));
    }

    #[test]
    fn missing_file() {
        let err = load_manifest(Path::new("/nonexistent/manifest.json")).unwrap_err();
        assert!(matches!(err, Error::MissingFile(_)));
    }

    proptest! {
        #[test]
        fn save_load_round_trip(
            entries in proptest::collection::vec((0u8..3, 0u64..20, proptest::collection::btree_set(1u8..=6, 1..4), any::<bool>()), 0..12)
        ) {
            let dir = tempfile::tempdir().unwrap();
            let images = entries
                .into_iter()
                .enumerate()
                .map(|(i, (subject, timestep, labels, with_gt))| ImageRecord {
                    id: format!("img{i:03}"),
                    image_path: dir.path().join(format!("images/img{i:03}.png")),
                    scoremap_path: Some(dir.path().join(format!("scoremaps/img{i:03}.smp"))),
                    class_labels: labels,
                    subject: format!("s{subject}"),
                    timestep,
                    gt_mask_path: with_gt.then(|| dir.path().join(format!("gt/img{i:03}.png"))),
                })
                .collect();
            let m = DatasetManifest::new(ClassTable::body_parts(), images).unwrap();
            let path = dir.path().join("manifest.json");
            save_manifest(&m, &path).unwrap();
            let back = load_manifest(&path).unwrap();
            prop_assert_eq!(&back, &m);
            let again = back.to_json_bytes(dir.path());
            prop_assert_eq!(again, std::fs::read(&path).unwrap());
        }
    }
}
