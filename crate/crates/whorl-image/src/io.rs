//! PNG and PGM round-trips through the `image` crate.

use std::path::Path;

use image::{ImageFormat, ImageReader};
use thiserror::Error;

use crate::gray::GrayImage;

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error("image i/o at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("image decode/encode at {path}: {source}")]
    Codec {
        path: String,
        #[source]
        source: image::ImageError,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> ImageIoError {
    ImageIoError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn codec_err(path: &Path, source: image::ImageError) -> ImageIoError {
    ImageIoError::Codec {
        path: path.display().to_string(),
        source,
    }
}

fn to_dynamic(img: &GrayImage) -> image::GrayImage {
    image::GrayImage::from_raw(
        img.width() as u32,
        img.height() as u32,
        img.pixels().to_vec(),
    )
    .expect("buffer size matches extents")
}

/// Writes 8-bit grayscale PNG.
pub fn save_png(img: &GrayImage, path: &Path) -> Result<(), ImageIoError> {
    to_dynamic(img)
        .save_with_format(path, ImageFormat::Png)
        .map_err(|e| codec_err(path, e))
}

/// Writes binary (P5) PGM.
pub fn save_pgm(img: &GrayImage, path: &Path) -> Result<(), ImageIoError> {
    to_dynamic(img)
        .save_with_format(path, ImageFormat::Pnm)
        .map_err(|e| codec_err(path, e))
}

/// Reads PNG or PGM (any bit depth the codec handles), flattening to 8-bit
/// grayscale.
pub fn load_png(path: &Path) -> Result<GrayImage, ImageIoError> {
    let reader = ImageReader::open(path).map_err(|e| io_err(path, e))?;
    let img = reader.decode().map_err(|e| codec_err(path, e))?.into_luma8();
    Ok(GrayImage::from_pixels(
        img.width() as usize,
        img.height() as usize,
        img.into_raw(),
    ))
}
