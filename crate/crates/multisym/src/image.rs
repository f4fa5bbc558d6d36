//! Dense C×H×W image grids with values in [0, 1].
//!
//! Pixels produced by the dataset generators and augmentations are quantized
//! to multiples of 2⁻¹⁶. On that grid `v -> 1 - v` is exact in f32, which is
//! what makes color inversion a bit-exact involution (see [`crate::groups`]).

use crate::error::{Error, Result};

/// Quantization step for generated pixel values.
pub const PIXEL_QUANTUM: f32 = 1.0 / 65536.0;

/// A C×H×W image with pixel values in [0, 1], stored row-major per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl Image {
    /// Creates an all-zero image.
    pub fn zeros(channels: usize, height: usize, width: usize) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {channels}x{height}x{width}"
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            pixels: vec![0.0; channels * height * width],
        })
    }

    /// Builds an image from a raw pixel buffer in channel-major order.
    pub fn from_pixels(
        channels: usize,
        height: usize,
        width: usize,
        pixels: Vec<f32>,
    ) -> Result<Self> {
        if pixels.len() != channels * height * width {
            return Err(Error::DimensionMismatch(format!(
                "pixel buffer has {} values, expected {}",
                pixels.len(),
                channels * height * width
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "pixel value {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            pixels,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Raw pixel buffer, channel-major then row-major.
    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.pixels[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.pixels[(c * self.height + y) * self.width + x] = v;
    }

    pub(crate) fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.pixels
    }

    pub(crate) fn from_pixels_unchecked(
        channels: usize,
        height: usize,
        width: usize,
        pixels: Vec<f32>,
    ) -> Self {
        debug_assert_eq!(pixels.len(), channels * height * width);
        Self {
            channels,
            height,
            width,
            pixels,
        }
    }
}

/// Clamps to [0, 1] and snaps to the 2⁻¹⁶ pixel grid.
pub fn quantize_pixel(v: f32) -> f32 {
    let clamped = v.clamp(0.0, 1.0);
    (clamped / PIXEL_QUANTUM).round() * PIXEL_QUANTUM
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantized_values_invert_exactly() {
        // 1 - v must be lossless on the pixel grid; this is what the
        // color-inversion involution relies on.
        for i in 0..=65536u32 {
            let v = i as f32 * PIXEL_QUANTUM;
            let inv = 1.0 - v;
            assert_eq!(1.0 - inv, v, "inversion not exact for {v}");
            assert_eq!(quantize_pixel(v), v);
        }
    }

    #[test]
    fn rejects_out_of_range_pixels() {
        assert!(Image::from_pixels(1, 1, 2, vec![0.5, 1.5]).is_err());
        assert!(Image::from_pixels(1, 1, 2, vec![0.5]).is_err());
    }

    #[test]
    fn index_round_trip() {
        let mut img = Image::zeros(2, 3, 4).unwrap();
        img.set(1, 2, 3, 0.25);
        assert_eq!(img.get(1, 2, 3), 0.25);
        assert_eq!(img.get(0, 0, 0), 0.0);
    }
}
