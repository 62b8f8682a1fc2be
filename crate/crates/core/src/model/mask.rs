use std::io::Cursor;
use std::path::Path;

use image::{ExtendedColorType, ImageEncoder};

use super::classes::{ClassTable, BACKGROUND, IGNORE};
use crate::error::{Error, Result};
use crate::fsutil;

const PNG_SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];

/// Per-pixel class raster: 0 is background, `1..=n_cl` are classes and 255 is
/// ignore. Row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelMask {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl LabelMask {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        let expected = width as usize * height as usize;
        if data.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "mask data has {} values, {width}x{height} needs {expected}",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: u32, height: u32, value: u8) -> Self {
        Self {
            width,
            height,
            data: vec![value; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.data[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: u8) {
        self.data[(y * self.width + x) as usize] = value;
    }

    pub fn has_ignore(&self) -> bool {
        self.data.contains(&IGNORE)
    }

    /// Sorted distinct class indices present, excluding background and ignore.
    pub fn classes_present(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        for &v in &self.data {
            seen[v as usize] = true;
        }
        (1..IGNORE).filter(|&c| seen[c as usize]).collect()
    }

    /// Checks every value against the class table.
    pub fn validate(&self, classes: &ClassTable) -> Result<()> {
        match self.data.iter().position(|&v| !classes.admits(v)) {
            None => Ok(()),
            Some(i) => Err(Error::ValueOutOfRange {
                value: self.data[i].to_string(),
                detail: format!(
                    "pixel {i} exceeds n_cl = {} and is not the ignore value",
                    classes.n_cl()
                ),
            }),
        }
    }

    /// Replaces ignore pixels with background.
    pub fn ignore_as_background(&self) -> Self {
        let data = self
            .data
            .iter()
            .map(|&v| if v == IGNORE { BACKGROUND } else { v })
            .collect();
        Self { data, ..*self }
    }

    pub fn ensure_same_dims(&self, other: &LabelMask, what: &str) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch(format!(
                "{what}: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    pub fn encode_png(&self) -> Vec<u8> {
        let mut out = Vec::new();
        image::codecs::png::PngEncoder::new(&mut out)
            .write_image(&self.data, self.width, self.height, ExtendedColorType::L8)
            .expect("encoding into memory");
        out
    }

    /// Decodes an 8-bit single-channel PNG, validating values against
    /// `classes` when given.
    pub fn decode_png(bytes: &[u8], classes: Option<&ClassTable>) -> Result<Self> {
        if !bytes.starts_with(&PNG_SIGNATURE) {
            return Err(Error::UnsupportedPng("not a PNG stream".into()));
        }
        let decoder = image::codecs::png::PngDecoder::new(Cursor::new(bytes))
            .map_err(|e| Error::UnsupportedPng(e.to_string()))?;
        let color = image::ImageDecoder::color_type(&decoder);
        if color != image::ColorType::L8 {
            return Err(Error::UnsupportedPng(format!(
                "expected 8-bit grayscale, found {color:?}"
            )));
        }
        let img = image::DynamicImage::from_decoder(decoder)
            .map_err(|e| Error::UnsupportedPng(e.to_string()))?;
        let gray = img.into_luma8();
        let (w, h) = gray.dimensions();
        let mask = Self::new(w, h, gray.into_raw())?;
        if let Some(classes) = classes {
            mask.validate(classes)?;
        }
        Ok(mask)
    }
}

pub fn read_mask(path: &Path, classes: Option<&ClassTable>) -> Result<LabelMask> {
    let bytes = fsutil::read(path)?;
    LabelMask::decode_png(&bytes, classes)
}

pub fn write_mask(mask: &LabelMask, path: &Path) -> Result<()> {
    fsutil::write_atomic(path, &mask.encode_png())
}
