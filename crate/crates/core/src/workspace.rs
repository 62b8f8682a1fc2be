//! On-disk layout shared by the CLI and the annotation service.
//!
//! ```text
//! <root>/manifest.json
//! <root>/sequences.json
//! <root>/annotations/<sequence_id>.png
//! <root>/campseudo/<image_id>.png
//! <root>/merged/<image_id>.png
//! <root>/merged/<image_id>.report.json
//! <root>/reports/
//! ```

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const LOCK_FILE: &str = ".seqlabel.lock";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn sequences_path(&self) -> PathBuf {
        self.root.join("sequences.json")
    }

    pub fn annotations_dir(&self) -> PathBuf {
        self.root.join("annotations")
    }

    pub fn annotation_path(&self, sequence_id: &str) -> PathBuf {
        self.annotations_dir().join(format!("{sequence_id}.png"))
    }

    pub fn campseudo_dir(&self) -> PathBuf {
        self.root.join("campseudo")
    }

    pub fn campseudo_path(&self, image_id: &str) -> PathBuf {
        self.campseudo_dir().join(format!("{image_id}.png"))
    }

    pub fn merged_dir(&self) -> PathBuf {
        self.root.join("merged")
    }

    pub fn merged_path(&self, image_id: &str) -> PathBuf {
        self.merged_dir().join(format!("{image_id}.png"))
    }

    pub fn merge_report_path(&self, image_id: &str) -> PathBuf {
        self.merged_dir().join(format!("{image_id}.report.json"))
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn session_path(&self, sequence_id: &str) -> PathBuf {
        self.reports_dir()
            .join("sessions")
            .join(format!("{sequence_id}.json"))
    }

    pub fn lock_path(&self) -> PathBuf {
        self.root.join(LOCK_FILE)
    }

    /// Takes the single-writer lock, failing fast when another writer holds it.
    pub fn lock(&self) -> Result<WriterLock> {
        fs::create_dir_all(&self.root).map_err(|e| Error::io(&self.root, e))?;
        let path = self.lock_path();
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(WriterLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(Error::WorkspaceLocked(path))
            }
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

/// Held while mutating a workspace; released on drop.
#[derive(Debug)]
pub struct WriterLock {
    path: PathBuf,
}

impl Drop for WriterLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
