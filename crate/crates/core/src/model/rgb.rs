use std::io::Cursor;
use std::path::Path;

pub use image::RgbImage;

use crate::error::{Error, Result};
use crate::fsutil;

/// Decodes a PNG or baseline JPEG into 8-bit RGB.
pub fn decode_rgb(bytes: &[u8], origin: &Path) -> Result<RgbImage> {
    let undecodable = |detail: String| Error::UndecodableImage {
        path: origin.to_path_buf(),
        detail,
    };
    let format = image::guess_format(bytes).map_err(|e| undecodable(e.to_string()))?;
    if !matches!(format, image::ImageFormat::Png | image::ImageFormat::Jpeg) {
        return Err(undecodable(format!("unsupported format {format:?}")));
    }
    image::ImageReader::with_format(Cursor::new(bytes), format)
        .decode()
        .map(|img| img.into_rgb8())
        .map_err(|e| undecodable(e.to_string()))
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    decode_rgb(&fsutil::read(path)?, path)
}

pub fn encode_rgb_png(img: &RgbImage) -> Vec<u8> {
    use image::ImageEncoder;
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(
            img.as_raw(),
            img.width(),
            img.height(),
            image::ExtendedColorType::Rgb8,
        )
        .expect("encoding into memory");
    out
}
