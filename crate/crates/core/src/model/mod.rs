//! Shared domain types and their on-disk codecs.

pub mod classes;
pub mod manifest;
pub mod mask;
pub mod rgb;
pub mod scoremap;

pub use classes::{ClassTable, BACKGROUND, IGNORE, MAX_CLASSES};
pub use manifest::{load_manifest, save_manifest, DatasetManifest, ImageRecord};
pub use mask::{read_mask, write_mask, LabelMask};
pub use rgb::{read_rgb, RgbImage};
pub use scoremap::{read_scoremap, write_scoremap, ScoreMap};
