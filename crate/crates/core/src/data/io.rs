//! Raster I/O for single-channel images and masks.

use std::path::Path;

use image::{DynamicImage, GrayImage};
use serde::{Deserialize, Serialize};

use super::image::{BinaryMask, Image};
use crate::error::{Result, SpeError};

/// How multi-channel inputs collapse to one channel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrayConversion {
    /// ITU-R BT.601 luma weights.
    #[default]
    Luma,
    Average,
    Red,
    Green,
    Blue,
}

impl GrayConversion {
    fn apply(self, rgb: [f32; 3]) -> f64 {
        let [r, g, b] = rgb.map(f64::from);
        match self {
            GrayConversion::Luma => 0.299 * r + 0.587 * g + 0.114 * b,
            GrayConversion::Average => (r + g + b) / 3.0,
            GrayConversion::Red => r,
            GrayConversion::Green => g,
            GrayConversion::Blue => b,
        }
    }
}

fn open(path: &Path) -> Result<DynamicImage> {
    if !path.exists() {
        return Err(SpeError::ingestion(path, "file not found"));
    }
    image::open(path).map_err(|e| SpeError::ingestion(path, e))
}

/// Raw single-channel samples, before any normalization.
pub fn read_gray_raw(path: &Path, conversion: GrayConversion) -> Result<(usize, usize, Vec<f64>)> {
    let img = open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = match img {
        DynamicImage::ImageLuma8(g) => g.into_raw().into_iter().map(f64::from).collect(),
        DynamicImage::ImageLuma16(g) => g.into_raw().into_iter().map(f64::from).collect(),
        DynamicImage::ImageLumaA8(_) | DynamicImage::ImageLumaA16(_) => img
            .to_luma32f()
            .into_raw()
            .into_iter()
            .map(f64::from)
            .collect(),
        other => other
            .to_rgb32f()
            .pixels()
            .map(|p| conversion.apply(p.0))
            .collect(),
    };
    Ok((h, w, raw))
}

/// Reads an image and min-max normalizes it to `[0, 1]`.
pub fn read_image(path: &Path, conversion: GrayConversion) -> Result<Image> {
    let (h, w, raw) = read_gray_raw(path, conversion)?;
    Image::from_raw(h, w, &raw).map_err(|e| SpeError::ingestion(path, e))
}

/// Reads a label raster; any nonzero sample (in any channel) is foreground.
pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    let img = open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let bits: Vec<bool> = match img {
        DynamicImage::ImageLuma8(g) => g.into_raw().into_iter().map(|v| v != 0).collect(),
        DynamicImage::ImageLuma16(g) => g.into_raw().into_iter().map(|v| v != 0).collect(),
        other => other
            .to_rgba16()
            .pixels()
            .map(|p| p.0[..3].iter().any(|v| *v != 0))
            .collect(),
    };
    BinaryMask::new(h, w, bits).map_err(|e| SpeError::ingestion(path, e))
}

fn write_gray8(path: &Path, height: usize, width: usize, data: Vec<u8>) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let buf = GrayImage::from_raw(width as u32, height as u32, data)
        .expect("buffer length matches dimensions");
    buf.save(path)
        .map_err(|e| SpeError::Io(std::io::Error::other(format!("{}: {e}", path.display()))))
}

/// Writes an 8-bit mask with foreground 255 and background 0.
pub fn write_mask(path: &Path, mask: &BinaryMask) -> Result<()> {
    write_gray8(path, mask.height(), mask.width(), mask.to_gray8())
}

pub fn write_image(path: &Path, image: &Image) -> Result<()> {
    write_gray8(path, image.height(), image.width(), image.to_gray8())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let mask = BinaryMask::from_fn(7, 5, |r, c| (r * 3 + c) % 4 == 0);
        write_mask(&path, &mask).unwrap();
        assert_eq!(read_mask(&path).unwrap(), mask);
    }

    #[test]
    fn sixteen_bit_input_is_normalized() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("i16.png");
        let buf = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(2, 1, vec![1000u16, 3000])
            .unwrap();
        buf.save(&path).unwrap();
        let img = read_image(&path, GrayConversion::Luma).unwrap();
        assert_eq!(img.pixels(), &[0.0, 1.0]);
    }

    #[test]
    fn rgb_uses_requested_conversion() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rgb.png");
        let buf = image::RgbImage::from_raw(2, 1, vec![255, 0, 0, 0, 0, 255]).unwrap();
        buf.save(&path).unwrap();
        let (_, _, raw) = read_gray_raw(&path, GrayConversion::Red).unwrap();
        assert_eq!(raw, vec![1.0, 0.0]);
        let (_, _, raw) = read_gray_raw(&path, GrayConversion::Luma).unwrap();
        assert!((raw[0] - 0.299).abs() < 1e-6 && (raw[1] - 0.114).abs() < 1e-6);
    }

    #[test]
    fn missing_file_names_path() {
        let err = read_mask(Path::new("/nonexistent/label.png")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/label.png"));
    }
}
