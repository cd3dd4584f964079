use serde::{Deserialize, Serialize};

use crate::image::Image;

/// Per-pixel weights confining a perturbation to the object and its
/// surroundings. Each weight is the mean of the pixel and its eight
/// neighbours, with zero padding outside the image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mask {
    weights: Vec<f64>,
}

impl Mask {
    /// All-ones mask, equivalent to no masking.
    pub fn ones(len: usize) -> Self {
        Self {
            weights: vec![1.0; len],
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Elementwise product with `values`.
    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .zip(&self.weights)
            .map(|(v, m)| v * m)
            .collect()
    }
}

pub fn compute_mask(x: &Image) -> Mask {
    let (h, w) = (x.height() as isize, x.width() as isize);
    let mut weights = Vec::with_capacity(x.len());
    for r in 0..h {
        for c in 0..w {
            let mut total = 0.0;
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (rr, cc) = (r + dr, c + dc);
                    if (0..h).contains(&rr) && (0..w).contains(&cc) {
                        total += x.get(rr as usize, cc as usize);
                    }
                }
            }
            weights.push(total / 9.0);
        }
    }
    Mask { weights }
}
