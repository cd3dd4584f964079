//! Synthetic handwritten-style digits for desk-scale experiments.
//!
//! Each class is a fixed set of strokes in the unit square. A sample jitters
//! the control points, applies a random rotation, scale, shear and shift, and
//! renders the strokes anti-aliased into the central 20x20 box of a black
//! 28x28 canvas. Pixels are quantised to multiples of 1/255 so a dataset
//! survives an IDX roundtrip unchanged.

use std::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::image::Image;

pub const TOY_SIDE: usize = 28;
pub const TOY_CLASSES: usize = 10;

type Stroke = Vec<(f64, f64)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub train: usize,
    pub test: usize,
    pub seed: u64,
    /// Maximum rotation in degrees either way.
    pub rotation: f64,
    /// Control-point jitter as a fraction of the glyph box.
    pub jitter: f64,
    pub min_stroke: f64,
    pub max_stroke: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            train: 1000,
            test: 200,
            seed: 42,
            rotation: 12.0,
            jitter: 0.035,
            min_stroke: 0.9,
            max_stroke: 1.6,
        }
    }
}

fn arc(cx: f64, cy: f64, rx: f64, ry: f64, from_deg: f64, to_deg: f64, points: usize) -> Stroke {
    (0..=points)
        .map(|i| {
            let t = (from_deg + (to_deg - from_deg) * i as f64 / points as f64) * PI / 180.0;
            (cx + rx * t.cos(), cy + ry * t.sin())
        })
        .collect()
}

fn chain(parts: &[Stroke]) -> Stroke {
    parts.iter().flatten().copied().collect()
}

/// Strokes for `digit` in unit coordinates, `y` pointing down.
fn glyph(digit: usize) -> Vec<Stroke> {
    match digit {
        0 => vec![arc(0.5, 0.5, 0.3, 0.42, 0.0, 360.0, 20)],
        1 => vec![vec![(0.32, 0.25), (0.55, 0.08), (0.55, 0.92)]],
        2 => vec![chain(&[
            arc(0.5, 0.32, 0.28, 0.24, 200.0, 360.0 + 20.0, 10),
            vec![(0.2, 0.9), (0.82, 0.9)],
        ])],
        3 => vec![
            arc(0.48, 0.3, 0.27, 0.21, 210.0, 450.0, 10),
            arc(0.48, 0.71, 0.3, 0.21, 270.0, 510.0, 10),
        ],
        4 => vec![vec![(0.62, 0.92), (0.62, 0.08), (0.15, 0.65), (0.85, 0.65)]],
        5 => vec![chain(&[
            vec![(0.78, 0.1), (0.3, 0.1), (0.25, 0.46)],
            arc(0.48, 0.66, 0.3, 0.24, 220.0, 500.0, 12),
        ])],
        6 => vec![chain(&[
            vec![(0.7, 0.1), (0.4, 0.35)],
            arc(0.5, 0.68, 0.28, 0.23, 200.0, 560.0, 16),
        ])],
        7 => vec![vec![(0.18, 0.1), (0.82, 0.1), (0.42, 0.92)]],
        8 => vec![
            arc(0.5, 0.29, 0.23, 0.2, 0.0, 360.0, 14),
            arc(0.5, 0.7, 0.29, 0.22, 0.0, 360.0, 14),
        ],
        9 => vec![chain(&[
            arc(0.5, 0.32, 0.26, 0.22, 0.0, 360.0, 16),
            vec![(0.76, 0.32), (0.7, 0.92)],
        ])],
        _ => unreachable!("digit out of range"),
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}

/// Renders one randomly distorted sample of `digit`.
pub fn render_digit(digit: usize, config: &ToyConfig, rng: &mut impl Rng) -> Image {
    assert!(digit < TOY_CLASSES, "digit {digit} out of range");
    let box_side = 20.0;
    let offset = (TOY_SIDE as f64 - box_side) / 2.0;
    let angle = rng.gen_range(-config.rotation..=config.rotation) * PI / 180.0;
    let scale = rng.gen_range(0.85..1.08);
    let aspect = rng.gen_range(0.9..1.1);
    let shear = rng.gen_range(-0.18..0.18);
    let shift = (rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5));
    let radius = rng.gen_range(config.min_stroke..config.max_stroke);
    let (sin, cos) = angle.sin_cos();

    let strokes: Vec<Stroke> = glyph(digit)
        .into_iter()
        .map(|stroke| {
            stroke
                .into_iter()
                .map(|(u, v)| {
                    let u = u + rng.gen_range(-config.jitter..=config.jitter) - 0.5;
                    let v = v + rng.gen_range(-config.jitter..=config.jitter) - 0.5;
                    let u = (u + shear * v) * scale * aspect;
                    let v = v * scale;
                    let (ru, rv) = (cos * u - sin * v, sin * u + cos * v);
                    (
                        offset + (ru + 0.5) * box_side + shift.0,
                        offset + (rv + 0.5) * box_side + shift.1,
                    )
                })
                .collect()
        })
        .collect();

    let mut pixels = Vec::with_capacity(TOY_SIDE * TOY_SIDE);
    for row in 0..TOY_SIDE {
        for col in 0..TOY_SIDE {
            let p = (col as f64 + 0.5, row as f64 + 0.5);
            let d = strokes
                .iter()
                .flat_map(|s| s.windows(2).map(move |w| segment_distance(p, w[0], w[1])))
                .fold(f64::INFINITY, f64::min);
            let v = (radius + 0.5 - d).clamp(0.0, 1.0);
            pixels.push((v * 255.0).round() / 255.0);
        }
    }
    Image::new(TOY_SIDE, TOY_SIDE, pixels).expect("canvas size is fixed")
}

fn sample_split(
    count: usize,
    split: Split,
    config: &ToyConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Dataset> {
    let mut images = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let digit = i % TOY_CLASSES;
        images.push(render_digit(digit, config, rng));
        labels.push(digit);
    }
    Dataset::new(images, labels, split, TOY_CLASSES)
}

/// Balanced train and test splits with labels cycling through the classes.
pub fn toy_digits(config: &ToyConfig) -> Result<(Dataset, Dataset)> {
    if config.train == 0 || config.test == 0 {
        return Err(Error::EmptyDataset);
    }
    if !(0.0 < config.min_stroke && config.min_stroke <= config.max_stroke) {
        return Err(Error::Config(
            "stroke radii must satisfy 0 < min <= max".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let train = sample_split(config.train, Split::Train, config, &mut rng)?;
    let test = sample_split(config.test, Split::Test, config, &mut rng)?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_are_quantised_and_on_black() {
        let config = ToyConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for digit in 0..TOY_CLASSES {
            let img = render_digit(digit, &config, &mut rng);
            assert!(img.in_unit_box());
            for &v in img.pixels() {
                assert_eq!((v * 255.0).round() / 255.0, v);
            }
            let ink: f64 = img.pixels().iter().sum();
            assert!(ink > 20.0, "digit {digit} has ink {ink}");
            for c in 0..TOY_SIDE {
                assert_eq!(img.get(0, c), 0.0);
                assert_eq!(img.get(TOY_SIDE - 1, c), 0.0);
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let config = ToyConfig {
            train: 20,
            test: 10,
            ..ToyConfig::default()
        };
        let (a, _) = toy_digits(&config).unwrap();
        let (b, _) = toy_digits(&config).unwrap();
        assert_eq!(a.images, b.images);
        assert_eq!(a.labels[..10], [0, 1, 2, 3, 4, 5, 6, 7, 8, 9]);
    }
}
