//! Binary PGM/PPM frames.
//!
//! Pixel values in `[-1, 1]` map linearly onto `0..=255`; anything outside
//! is clamped. One-channel grids are written as PGM and three-channel grids
//! as PPM.

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};

use crate::error::{invalid, Result};
use crate::numerics::{GridDims, ImageGrid};

pub fn to_byte(v: f64) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

pub fn from_byte(b: u8) -> f64 {
    b as f64 / 127.5 - 1.0
}

/// File extension matching the grid's channel count.
pub fn extension(dims: GridDims) -> Result<&'static str> {
    match dims.channels {
        1 => Ok("pgm"),
        3 => Ok("ppm"),
        c => Err(invalid("channels", format!("PNM output needs 1 or 3 channels, got {c}"))),
    }
}

fn to_dynamic(grid: &ImageGrid) -> Result<DynamicImage> {
    let d = grid.dims();
    let bytes: Vec<u8> = grid.as_slice().iter().map(|&v| to_byte(v)).collect();
    let (w, h) = (d.width as u32, d.height as u32);
    Ok(match d.channels {
        1 => DynamicImage::ImageLuma8(GrayImage::from_raw(w, h, bytes).expect("buffer sized from dims")),
        3 => DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, bytes).expect("buffer sized from dims")),
        c => return Err(invalid("channels", format!("PNM output needs 1 or 3 channels, got {c}"))),
    })
}

pub fn write_pnm(path: &Path, grid: &ImageGrid) -> Result<()> {
    to_dynamic(grid)?.save_with_format(path, ImageFormat::Pnm)?;
    Ok(())
}

/// Reads a PGM or PPM file. Grayscale files load as one channel, everything
/// else as three.
pub fn read_pnm(path: &Path) -> Result<ImageGrid> {
    let img = image::ImageReader::open(path)?
        .with_guessed_format()?
        .decode()?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, bytes) = match img {
        DynamicImage::ImageLuma8(g) => (1, g.into_raw()),
        DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA8(_) | DynamicImage::ImageLumaA16(_) => {
            (1, img.to_luma8().into_raw())
        }
        other => (3, other.to_rgb8().into_raw()),
    };
    ImageGrid::from_vec(
        GridDims::new(h, w, channels)?,
        bytes.into_iter().map(from_byte).collect(),
    )
}
