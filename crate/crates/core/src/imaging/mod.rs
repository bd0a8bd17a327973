//! Grayscale rasters, quality metrics, morphology, and the preprocessing
//! defenses applied to adversarial images.

mod defenses;
mod filters;
mod metrics;
pub mod pgm;

pub use defenses::{compress_roundtrip, inpaint, salt_pepper, Defense};
pub use filters::{average_blur, erode, gaussian_blur, gaussian_sigma_for, median_blur};
pub use metrics::{lenient_f64, mse, psnr, quality_report, ssim, QualityReport};

use crate::error::{invalid, Error, Result};

/// Grayscale image with values in `[0, 1]`; 0 is black and 1 is white.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    /// Rejects data that is non-finite or outside `[0, 1]`.
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::ShapeMismatch {
                expected: vec![height, width],
                actual: vec![data.len()],
            });
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(invalid(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self { height, width, data })
    }

    /// Clamps every value into `[0, 1]`; NaN is rejected.
    pub fn from_clamped(height: usize, width: usize, mut data: Vec<f64>) -> Result<Self> {
        if data.iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite("NaN pixel".into()));
        }
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Self::new(height, width, data)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            data: vec![value.clamp(0.0, 1.0); height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Edge-replicating accessor for signed coordinates.
    #[inline]
    pub(crate) fn get_clamped(&self, y: isize, x: isize) -> f64 {
        let yy = y.clamp(0, self.height as isize - 1) as usize;
        let xx = x.clamp(0, self.width as isize - 1) as usize;
        self.data[yy * self.width + xx]
    }

    /// Sets a pixel, clamping the value into `[0, 1]`.
    pub fn set(&mut self, y: usize, x: usize, value: f64) {
        self.data[y * self.width + x] = value.clamp(0.0, 1.0);
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest absolute per-pixel difference.
    pub fn linf_distance(&self, other: &Image) -> Result<f64> {
        same_dims(self, other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Rounds to the 8-bit grid used by PGM files.
    pub fn quantized(&self) -> Image {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| (v * 255.0).round() / 255.0).collect(),
        }
    }
}

pub(crate) fn same_dims(a: &Image, b: &Image) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch {
            expected: vec![a.height, a.width],
            actual: vec![b.height, b.width],
        });
    }
    Ok(())
}

/// Binary raster marking where perturbation is permitted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::ShapeMismatch {
                expected: vec![height, width],
                actual: vec![data.len()],
            });
        }
        Ok(Self { height, width, data })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![true; height * width],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, on: bool) {
        self.data[y * self.width + x] = on;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    /// Errors with [`Error::VacuousMask`] when no pixel is set.
    pub fn require_nonempty(&self) -> Result<&Self> {
        if self.is_empty() {
            Err(Error::VacuousMask)
        } else {
            Ok(self)
        }
    }

    pub fn check_dims(&self, image: &Image) -> Result<()> {
        if self.dims() != image.dims() {
            return Err(Error::ShapeMismatch {
                expected: vec![image.height(), image.width()],
                actual: vec![self.height, self.width],
            });
        }
        Ok(())
    }

    /// Renders the mask as an image (set pixels white).
    pub fn to_image(&self) -> Image {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    /// Pixels brighter than one half are set.
    pub fn from_image(image: &Image) -> Self {
        Self {
            height: image.height(),
            width: image.width(),
            data: image.data().iter().map(|&v| v > 0.5).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_rejects_out_of_range() {
        assert!(Image::new(1, 2, vec![0.0, 1.5]).is_err());
        assert!(Image::new(1, 2, vec![0.0]).is_err());
        let img = Image::from_clamped(1, 2, vec![-0.5, 1.5]).unwrap();
        assert_eq!(img.data(), &[0.0, 1.0]);
        assert!(Image::from_clamped(1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn mask_counts_and_vacuity() {
        let mut m = Mask::empty(2, 3);
        assert!(m.require_nonempty().is_err());
        m.set(1, 2, true);
        assert_eq!(m.count(), 1);
        assert!(m.require_nonempty().is_ok());
        assert_eq!(Mask::from_image(&m.to_image()), m);
    }
}
