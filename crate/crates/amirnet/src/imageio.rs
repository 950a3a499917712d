//! 8-bit PNG reading and writing.

use std::io::Cursor;
use std::path::{Path, PathBuf};

use amirnet_core::image::{Image, ImageError};
use image::{DynamicImage, ImageFormat, ImageReader};

#[derive(Debug, thiserror::Error)]
pub enum ImageIoError {
    #[error("image file not found: {0}")]
    Missing(PathBuf),
    #[error("unsupported image {path}: {reason}")]
    Unsupported { path: PathBuf, reason: String },
    #[error("corrupt image {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {reason}")]
    Write { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Invalid { path: PathBuf, source: ImageError },
}

/// Reads an 8-bit grayscale or RGB PNG, dividing by 255.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image, ImageIoError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => ImageIoError::Missing(path.to_path_buf()),
        _ => ImageIoError::Read { path: path.to_path_buf(), source: e },
    })?;
    let unsupported = |reason: String| ImageIoError::Unsupported { path: path.to_path_buf(), reason };
    match image::guess_format(&bytes) {
        Ok(ImageFormat::Png) => {}
        Ok(other) => return Err(unsupported(format!("{other:?} files are not supported, only PNG"))),
        Err(_) => return Err(unsupported("not a recognized image format".into())),
    }
    let decoded = ImageReader::with_format(Cursor::new(&bytes), ImageFormat::Png)
        .decode()
        .map_err(|e| ImageIoError::Corrupt { path: path.to_path_buf(), reason: e.to_string() })?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let (channels, raw) = match decoded {
        DynamicImage::ImageLuma8(b) => (1, b.into_raw()),
        DynamicImage::ImageRgb8(b) => (3, b.into_raw()),
        other => return Err(unsupported(format!("pixel layout {:?}; expected 8-bit gray or RGB", other.color()))),
    };
    let data = raw.iter().map(|&v| v as f32 / 255.0).collect();
    Image::new(h, w, channels, data).map_err(|source| ImageIoError::Invalid { path: path.to_path_buf(), source })
}

/// Quantizes by `round(v · 255)` (halves round up) and writes a PNG.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<(), ImageIoError> {
    let path = path.as_ref();
    let bytes: Vec<u8> = img.data().iter().map(|&v| quantize(v)).collect();
    let (w, h) = (img.width() as u32, img.height() as u32);
    let dynamic = match img.channels() {
        1 => image::GrayImage::from_raw(w, h, bytes).map(DynamicImage::ImageLuma8),
        _ => image::RgbImage::from_raw(w, h, bytes).map(DynamicImage::ImageRgb8),
    }
    .expect("buffer length matches dimensions");
    dynamic
        .save_with_format(path, ImageFormat::Png)
        .map_err(|e| ImageIoError::Write { path: path.to_path_buf(), reason: e.to_string() })
}

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_rounds_up() {
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
    }
}
