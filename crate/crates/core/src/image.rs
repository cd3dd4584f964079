use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Single-channel image stored row-major with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::PixelCount {
                expected: height * width,
                got: pixels.len(),
            });
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            pixels: vec![0.0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    /// Same dimensions, new pixel values.
    pub fn with_pixels(&self, pixels: Vec<f64>) -> Result<Self> {
        Self::new(self.height, self.width, pixels)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::vector(self.pixels.clone())
    }

    pub fn in_unit_box(&self) -> bool {
        self.pixels.iter().all(|v| (0.0..=1.0).contains(v))
    }

    /// Euclidean distance between two images of equal size.
    pub fn l2_distance(&self, other: &Image) -> f64 {
        self.pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}
