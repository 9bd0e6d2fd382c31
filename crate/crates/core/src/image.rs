//! Image buffers: scene-referred linear radiance and display-encoded sRGB.
//!
//! [`LinearImage`] stores nonnegative floating-point linear RGB (values above
//! 1 are legal pre-clipping highlights). [`SrgbImage`] stores 8-bit
//! display-encoded RGB. Blur averaging and all radiometric math happen in
//! linear space; conversion lives in [`crate::blursynth`].

use crate::error::{Error, Result};

pub type Rgb = [f64; 3];

/// Floating-point linear-radiance image, row-major, origin top-left.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearImage {
    width: usize,
    height: usize,
    pixels: Vec<Rgb>,
}

impl LinearImage {
    pub fn new(width: usize, height: usize) -> Self {
        LinearImage {
            width,
            height,
            pixels: vec![[0.0; 3]; width * height],
        }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<Rgb>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "expected {}x{}={} pixels, got {}",
                width,
                height,
                width * height,
                pixels.len()
            )));
        }
        Ok(LinearImage {
            width,
            height,
            pixels,
        })
    }

    pub fn constant(width: usize, height: usize, value: Rgb) -> Self {
        LinearImage {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [Rgb] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: Rgb) {
        self.pixels[y * self.width + x] = value;
    }

    pub fn same_dims(&self, other: &LinearImage) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Extract one channel as a flat plane (used by per-channel filters).
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.pixels.iter().map(|p| p[c]).collect()
    }

    /// Rebuild an image from three channel planes.
    pub fn from_channels(width: usize, height: usize, planes: [Vec<f64>; 3]) -> Result<Self> {
        let n = width * height;
        if planes.iter().any(|p| p.len() != n) {
            return Err(Error::DimensionMismatch(
                "channel plane size does not match image dimensions".into(),
            ));
        }
        let pixels = (0..n).map(|i| [planes[0][i], planes[1][i], planes[2][i]]).collect();
        LinearImage::from_pixels(width, height, pixels)
    }

    /// Mean BT.709 luma; the scalar view used by kernel estimation and scoring.
    pub fn luma(&self) -> Vec<f64> {
        self.pixels
            .iter()
            .map(|p| 0.2126 * p[0] + 0.7152 * p[1] + 0.0722 * p[2])
            .collect()
    }

    pub fn mean(&self) -> f64 {
        let n = (self.pixels.len() * 3) as f64;
        self.pixels.iter().map(|p| p[0] + p[1] + p[2]).sum::<f64>() / n
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Sync) -> LinearImage {
        LinearImage {
            width: self.width,
            height: self.height,
            pixels: self
                .pixels
                .iter()
                .map(|p| [f(p[0]), f(p[1]), f(p[2])])
                .collect(),
        }
    }

    pub fn is_finite_nonnegative(&self) -> bool {
        self.pixels
            .iter()
            .all(|p| p.iter().all(|&v| v.is_finite() && v >= 0.0))
    }
}

/// 8-bit display-encoded RGB image, row-major, origin top-left.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SrgbImage {
    width: usize,
    height: usize,
    pixels: Vec<[u8; 3]>,
}

impl SrgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        SrgbImage {
            width,
            height,
            pixels: vec![[0; 3]; width * height],
        }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<[u8; 3]>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "expected {}x{}={} pixels, got {}",
                width,
                height,
                width * height,
                pixels.len()
            )));
        }
        Ok(SrgbImage {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [[u8; 3]] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: [u8; 3]) {
        self.pixels[y * self.width + x] = value;
    }
}
