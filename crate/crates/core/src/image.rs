//! Validated image container, luminance conversion and PNG I/O.

use std::io::Cursor;
use std::ops::Deref;
use std::path::Path;

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageFormat};

use crate::error::{Error, Result};
use crate::tensor::{Plane, Tensor};

/// Smallest accepted side length for images entering the protection pipeline.
pub const MIN_SIDE: usize = 16;

/// ITU-R BT.601 luma weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// An `H×W×C` image with `C ∈ {1, 3}`, every sample finite and in `[0,1]`,
/// and both sides at least [`MIN_SIDE`] pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor(Tensor);

impl ImageTensor {
    pub fn new(tensor: Tensor) -> Result<Self> {
        if tensor.channels() != 1 && tensor.channels() != 3 {
            return Err(Error::input(format!(
                "images must have 1 or 3 channels, got {}",
                tensor.channels()
            )));
        }
        if tensor.height() < MIN_SIDE || tensor.width() < MIN_SIDE {
            return Err(Error::input(format!(
                "image is {}x{}; both sides must be at least {MIN_SIDE}",
                tensor.height(),
                tensor.width()
            )));
        }
        if let Some(bad) = tensor.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::input(format!("pixel value {bad} outside [0,1]")));
        }
        Ok(ImageTensor(tensor))
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(Tensor::from_vec(height, width, channels, data)?)
    }

    /// Constant-valued image.
    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(Tensor::filled(height, width, channels, value))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    /// Round every sample to the 8-bit grid.
    pub fn quantized_8bit(&self) -> ImageTensor {
        ImageTensor(self.0.map(|v| (v * 255.0).round() / 255.0))
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_png_bytes(&bytes)
    }

    /// Decode a PNG. 16-bit files keep full precision; alpha is dropped.
    pub fn from_png_bytes(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        let wide = matches!(
            img,
            DynamicImage::ImageLuma16(_)
                | DynamicImage::ImageLumaA16(_)
                | DynamicImage::ImageRgb16(_)
                | DynamicImage::ImageRgba16(_)
        );
        let gray = !img.color().has_color();
        let data: Vec<f64> = match (gray, wide) {
            (true, false) => img.to_luma8().into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
            (true, true) => img.to_luma16().into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
            (false, false) => img.to_rgb8().into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
            (false, true) => img.to_rgb16().into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
        };
        Self::from_vec(h, w, if gray { 1 } else { 3 }, data)
    }

    pub fn to_png_bytes(&self, depth: BitDepth) -> Result<Vec<u8>> {
        encode_png(&self.0, depth)
    }

    pub fn save_png(&self, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
        std::fs::write(path, self.to_png_bytes(depth)?)?;
        Ok(())
    }
}

impl Deref for ImageTensor {
    type Target = Tensor;

    fn deref(&self) -> &Tensor {
        &self.0
    }
}

impl AsRef<Tensor> for ImageTensor {
    fn as_ref(&self) -> &Tensor {
        &self.0
    }
}

/// Sample depth for PNG output. Sixteen bits keeps perturbations that are
/// smaller than one 8-bit step; eight bits rounds them away.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BitDepth {
    #[serde(rename = "8")]
    Eight,
    #[default]
    #[serde(rename = "16")]
    Sixteen,
}

/// Encode a 1- or 3-channel tensor as PNG, clamping samples to `[0,1]`.
pub fn encode_png(t: &Tensor, depth: BitDepth) -> Result<Vec<u8>> {
    let color = match (t.channels(), depth) {
        (1, BitDepth::Eight) => ExtendedColorType::L8,
        (3, BitDepth::Eight) => ExtendedColorType::Rgb8,
        (1, BitDepth::Sixteen) => ExtendedColorType::L16,
        (3, BitDepth::Sixteen) => ExtendedColorType::Rgb16,
        (c, _) => return Err(Error::input(format!("cannot encode {c}-channel image as PNG"))),
    };
    let raw: Vec<u8> = match depth {
        BitDepth::Eight => t.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect(),
        BitDepth::Sixteen => t
            .data()
            .iter()
            .flat_map(|&v| ((v.clamp(0.0, 1.0) * 65535.0).round() as u16).to_ne_bytes())
            .collect(),
    };
    let mut out = Cursor::new(Vec::new());
    PngEncoder::new_with_quality(&mut out, CompressionType::Default, FilterType::Adaptive)
        .write_image(&raw, t.width() as u32, t.height() as u32, color)?;
    Ok(out.into_inner())
}

/// Write a plane as a grayscale PNG; values are clamped to `[0,1]`.
pub fn save_plane_png(plane: &Plane, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let t = Tensor::from_vec(plane.height(), plane.width(), 1, plane.data().to_vec())?;
    std::fs::write(path, encode_png(&t, depth)?)?;
    Ok(())
}

/// 8-bit-scaled luminance in `[0,255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LuminancePlane(Plane);

impl LuminancePlane {
    pub fn new(plane: Plane) -> Result<Self> {
        if let Some(bad) = plane.data().iter().find(|v| !(0.0..=255.0).contains(*v)) {
            return Err(Error::input(format!("luminance {bad} outside [0,255]")));
        }
        Ok(LuminancePlane(plane))
    }

    pub fn plane(&self) -> &Plane {
        &self.0
    }

    pub fn into_plane(self) -> Plane {
        self.0
    }
}

impl Deref for LuminancePlane {
    type Target = Plane;

    fn deref(&self) -> &Plane {
        &self.0
    }
}

/// BT.601 luminance scaled to `[0,255]`. Single-channel inputs are scaled
/// directly.
pub fn to_luminance(img: &Tensor) -> Result<LuminancePlane> {
    let plane = match img.channels() {
        1 => Plane::from_vec(img.height(), img.width(), img.data().iter().map(|v| v * 255.0).collect())?,
        3 => Plane::from_vec(
            img.height(),
            img.width(),
            img.data()
                .chunks_exact(3)
                .map(|p| 255.0 * (LUMA_WEIGHTS[0] * p[0] + LUMA_WEIGHTS[1] * p[1] + LUMA_WEIGHTS[2] * p[2]))
                .collect(),
        )?,
        c => return Err(Error::input(format!("luminance needs 1 or 3 channels, got {c}"))),
    };
    // The weights sum to one only up to rounding.
    LuminancePlane::new(plane.map(|v| v.clamp(0.0, 255.0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rgb(r: f64, g: f64, b: f64) -> ImageTensor {
        ImageTensor::new(Tensor::from_fn(16, 16, 3, |_, _, c| [r, g, b][c])).unwrap()
    }

    #[test]
    fn white_and_black_luminance() {
        let white = to_luminance(&rgb(1.0, 1.0, 1.0)).unwrap();
        assert!(white.data().iter().all(|&v| (v - 255.0).abs() < 1e-9));
        let black = to_luminance(&rgb(0.0, 0.0, 0.0)).unwrap();
        assert!(black.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pure_red_luminance() {
        let red = to_luminance(&rgb(1.0, 0.0, 0.0)).unwrap();
        assert!((red.get(3, 3) - 76.245).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_channel_count() {
        let t = Tensor::zeros(16, 16, 2);
        assert!(matches!(to_luminance(&t), Err(Error::InvalidInput(_))));
        assert!(ImageTensor::new(t).is_err());
    }

    #[test]
    fn rejects_small_and_out_of_range() {
        assert!(ImageTensor::filled(15, 32, 3, 0.5).is_err());
        assert!(ImageTensor::filled(16, 16, 1, 1.5).is_err());
        assert!(ImageTensor::filled(16, 16, 1, f64::NAN).is_err());
        assert!(ImageTensor::filled(16, 16, 1, 1.0).is_ok());
    }

    #[test]
    fn sixteen_bit_png_keeps_sub_8bit_detail() {
        let img = ImageTensor::new(Tensor::from_fn(16, 17, 3, |y, x, c| {
            (y * 17 + x + c) as f64 / 1000.0 + 1e-4
        }))
        .unwrap();
        let back = ImageTensor::from_png_bytes(&img.to_png_bytes(BitDepth::Sixteen).unwrap()).unwrap();
        assert_eq!(back.shape(), img.shape());
        assert!(back.sub(&img).max_abs() <= 0.5 / 65535.0 + 1e-12);
    }

    #[test]
    fn grayscale_png_roundtrip() {
        let img = ImageTensor::new(Tensor::from_fn(20, 16, 1, |y, x, _| ((y + x) % 256) as f64 / 255.0)).unwrap();
        let back = ImageTensor::from_png_bytes(&img.to_png_bytes(BitDepth::Eight).unwrap()).unwrap();
        assert_eq!(back, img);
    }
}
