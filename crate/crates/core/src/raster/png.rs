//! 8-bit grayscale / RGB PNG via the `image` crate.

use std::path::Path;

use image::{DynamicImage, ExtendedColorType, ImageReader};

use super::{codes_to_raster, Raster, RasterError};
use crate::scalar::Scalar;

pub(super) fn load<S: Scalar>(path: &Path) -> Result<Raster<S>, RasterError> {
    let img = ImageReader::open(path)?
        .decode()
        .map_err(|e| RasterError::Format(format!("{}: {e}", path.display())))?;
    match img {
        DynamicImage::ImageLuma8(g) => {
            let (w, h) = (g.width() as usize, g.height() as usize);
            codes_to_raster(h, w, 1, g.as_raw())
        }
        DynamicImage::ImageRgb8(rgb) => {
            let (w, h) = (rgb.width() as usize, rgb.height() as usize);
            codes_to_raster(h, w, 3, rgb.as_raw())
        }
        other => Err(RasterError::Unsupported(format!(
            "{}: {:?} (only 8-bit gray/RGB supported)",
            path.display(),
            other.color()
        ))),
    }
}

pub(super) fn save(
    path: &Path,
    height: usize,
    width: usize,
    channels: usize,
    codes: &[u8],
) -> Result<(), RasterError> {
    let color = match channels {
        1 => ExtendedColorType::L8,
        3 => ExtendedColorType::Rgb8,
        c => return Err(RasterError::BadChannels(c)),
    };
    image::save_buffer(path, codes, width as u32, height as u32, color)
        .map_err(|e| RasterError::Format(format!("{}: {e}", path.display())))
}
