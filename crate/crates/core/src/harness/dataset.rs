use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// File names used by [`Dataset::load_dir`] and [`Dataset::save_dir`],
/// following the MNIST distribution.
pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn file_names(self) -> (&'static str, &'static str) {
        match self {
            Split::Train => (TRAIN_IMAGES, TRAIN_LABELS),
            Split::Test => (TEST_IMAGES, TEST_LABELS),
        }
    }
}

/// Labelled single-channel images with pixels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<Image>,
    pub labels: Vec<usize>,
    pub split: Split,
    pub classes: usize,
}

impl Dataset {
    pub fn new(
        images: Vec<Image>,
        labels: Vec<usize>,
        split: Split,
        classes: usize,
    ) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::IdxCountMismatch {
                images: images.len(),
                labels: labels.len(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        if let Some(first) = images.first() {
            let (h, w) = (first.height(), first.width());
            if let Some(bad) = images.iter().find(|im| im.height() != h || im.width() != w) {
                return Err(Error::PixelCount {
                    expected: h * w,
                    got: bad.len(),
                });
            }
        }
        Ok(Self {
            images,
            labels,
            split,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// `(height, width)` of the images, or `None` for an empty dataset.
    pub fn dims(&self) -> Option<(usize, usize)> {
        self.images.first().map(|im| (im.height(), im.width()))
    }

    /// Min-max normalises every image.
    pub fn normalized(mut self) -> Self {
        for im in &mut self.images {
            *im = minmax_normalize(im);
        }
        self
    }

    /// Loads `split` from a directory holding MNIST-named IDX files. Labels
    /// define the class count as `max + 1`.
    pub fn load_dir(dir: impl AsRef<Path>, split: Split) -> Result<Self> {
        let (images, labels) = split.file_names();
        let dir = dir.as_ref();
        load_idx(dir.join(images), dir.join(labels), split)
    }

    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (images, labels) = self.split.file_names();
        write_idx(self, dir.join(images), dir.join(labels))
    }
}

fn read_u32(data: &[u8], offset: usize) -> Option<u32> {
    data.get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

fn read_header(path: &Path, data: &[u8], magic: u32, dims: usize) -> Result<Vec<usize>> {
    let header = 4 + 4 * dims;
    if data.len() < header {
        return Err(Error::IdxTruncated {
            path: path.to_path_buf(),
            expected: header,
            found: data.len(),
        });
    }
    let found = read_u32(data, 0).expect("length checked");
    if found != magic {
        return Err(Error::IdxMagic {
            path: path.to_path_buf(),
            expected: magic,
            found,
        });
    }
    let dims: Vec<usize> = (0..dims)
        .map(|i| read_u32(data, 4 + 4 * i).expect("length checked") as usize)
        .collect();
    let expected = header + dims.iter().product::<usize>();
    if data.len() < expected {
        return Err(Error::IdxTruncated {
            path: path.to_path_buf(),
            expected,
            found: data.len(),
        });
    }
    Ok(dims)
}

/// Reads an IDX image file (`0x00000803`) and label file (`0x00000801`).
/// Bytes are scaled to `[0, 1]` by dividing by 255.
pub fn load_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    split: Split,
) -> Result<Dataset> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let image_bytes = fs::read(ip).map_err(|e| Error::io(ip, e))?;
    let label_bytes = fs::read(lp).map_err(|e| Error::io(lp, e))?;

    let dims = read_header(ip, &image_bytes, IDX_IMAGES_MAGIC, 3)?;
    let (count, height, width) = (dims[0], dims[1], dims[2]);
    let label_dims = read_header(lp, &label_bytes, IDX_LABELS_MAGIC, 1)?;
    if label_dims[0] != count {
        return Err(Error::IdxCountMismatch {
            images: count,
            labels: label_dims[0],
        });
    }

    let pixels = height * width;
    let payload = &image_bytes[16..16 + count * pixels];
    let images = payload
        .chunks_exact(pixels.max(1))
        .take(count)
        .map(|chunk| {
            Image::new(
                height,
                width,
                chunk.iter().map(|&b| b as f64 / 255.0).collect(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = label_bytes[8..8 + count]
        .iter()
        .map(|&b| b as usize)
        .collect();
    let classes = labels.iter().max().map_or(0, |&m| m + 1);
    Dataset::new(images, labels, split, classes)
}

/// Writes `dataset` as IDX files, quantising pixels to bytes with
/// round-half-up.
pub fn write_idx(
    dataset: &Dataset,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    let (ip, lp) = (images_path.as_ref(), labels_path.as_ref());
    let (height, width) = dataset.dims().unwrap_or((0, 0));
    let count = dataset.len();
    let mut images = Vec::with_capacity(16 + count * height * width);
    for v in [IDX_IMAGES_MAGIC, count as u32, height as u32, width as u32] {
        images.extend_from_slice(&v.to_be_bytes());
    }
    for im in &dataset.images {
        images.extend(im.pixels().iter().map(|&v| quantize(v)));
    }
    let mut labels = Vec::with_capacity(8 + count);
    for v in [IDX_LABELS_MAGIC, count as u32] {
        labels.extend_from_slice(&v.to_be_bytes());
    }
    for &l in &dataset.labels {
        let byte = u8::try_from(l).map_err(|_| Error::LabelOutOfRange {
            label: l,
            classes: 256,
        })?;
        labels.push(byte);
    }
    fs::write(ip, images).map_err(|e| Error::io(ip, e))?;
    fs::write(lp, labels).map_err(|e| Error::io(lp, e))?;
    Ok(())
}

/// `[0, 1]` to a byte, rounding halves up.
pub(crate) fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// `(x - min) / (max - min)`; a constant image maps to all zeros.
pub fn minmax_normalize(x: &Image) -> Image {
    let px = x.pixels();
    let min = px.iter().copied().fold(f64::INFINITY, f64::min);
    let max = px.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    let pixels = if range > 0.0 {
        px.iter().map(|&v| (v - min) / range).collect()
    } else {
        vec![0.0; px.len()]
    };
    x.with_pixels(pixels).expect("same length")
}

#[cfg(test)]
mod tests {
    use tempfile::tempdir;

    use super::*;

    fn idx_images(count: u32, h: u32, w: u32, payload: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        for x in [IDX_IMAGES_MAGIC, count, h, w] {
            v.extend_from_slice(&x.to_be_bytes());
        }
        v.extend_from_slice(payload);
        v
    }

    fn idx_labels(count: u32, payload: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        for x in [IDX_LABELS_MAGIC, count] {
            v.extend_from_slice(&x.to_be_bytes());
        }
        v.extend_from_slice(payload);
        v
    }

    #[test]
    fn reads_header_and_scales_bytes() {
        let dir = tempdir().unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        let mut payload = vec![0u8; 2 * 784];
        payload[0] = 255;
        payload[784] = 51;
        fs::write(&ip, idx_images(2, 28, 28, &payload)).unwrap();
        fs::write(&lp, idx_labels(2, &[3, 7])).unwrap();
        let ds = load_idx(&ip, &lp, Split::Test).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.images[0].len(), 784);
        assert_eq!(ds.images[0].pixels()[0], 1.0);
        assert_eq!(ds.images[0].pixels()[1], 0.0);
        assert_eq!(ds.images[1].pixels()[0], 0.2);
        assert_eq!(ds.labels, vec![3, 7]);
        assert_eq!(ds.classes, 8);
    }

    #[test]
    fn distinct_errors_for_bad_files() {
        let dir = tempdir().unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        fs::write(&lp, idx_labels(1, &[0])).unwrap();

        let mut bad = idx_images(1, 2, 2, &[0; 4]);
        bad[3] = 0x01;
        fs::write(&ip, bad).unwrap();
        assert!(matches!(
            load_idx(&ip, &lp, Split::Train),
            Err(Error::IdxMagic { found: 0x801, .. })
        ));

        fs::write(&ip, idx_images(1, 2, 2, &[0; 3])).unwrap();
        assert!(matches!(
            load_idx(&ip, &lp, Split::Train),
            Err(Error::IdxTruncated {
                expected: 20,
                found: 19,
                ..
            })
        ));

        fs::write(&ip, idx_images(10, 1, 1, &[0; 10])).unwrap();
        fs::write(&lp, idx_labels(9, &[0; 9])).unwrap();
        assert!(matches!(
            load_idx(&ip, &lp, Split::Train),
            Err(Error::IdxCountMismatch {
                images: 10,
                labels: 9
            })
        ));

        let missing = dir.path().join("missing");
        match load_idx(&missing, &lp, Split::Train) {
            Err(Error::Io { path, .. }) => assert_eq!(path, missing),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn idx_roundtrip_within_quantisation() {
        let dir = tempdir().unwrap();
        let images = vec![
            Image::new(2, 2, vec![0.0, 0.5, 0.25, 1.0]).unwrap(),
            Image::new(2, 2, vec![0.1, 0.9, 0.333, 0.0]).unwrap(),
        ];
        let ds = Dataset::new(images, vec![1, 0], Split::Train, 2).unwrap();
        ds.save_dir(dir.path()).unwrap();
        let back = Dataset::load_dir(dir.path(), Split::Train).unwrap();
        assert_eq!(back.labels, ds.labels);
        for (a, b) in back.images.iter().zip(&ds.images) {
            for (x, y) in a.pixels().iter().zip(b.pixels()) {
                assert!((x - y).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
        assert_eq!(quantize(0.5), 128);
    }

    #[test]
    fn minmax_examples() {
        let x = Image::new(1, 3, vec![2.0, 4.0, 6.0]).unwrap();
        assert_eq!(minmax_normalize(&x).pixels(), &[0.0, 0.5, 1.0]);
        let x = Image::new(1, 3, vec![0.0, 0.3, 1.0]).unwrap();
        assert_eq!(minmax_normalize(&x).pixels(), &[0.0, 0.3, 1.0]);
        let x = Image::new(1, 2, vec![0.7, 0.7]).unwrap();
        assert_eq!(minmax_normalize(&x).pixels(), &[0.0, 0.0]);
    }

    #[test]
    fn dataset_checks_consistency() {
        let im = Image::zeros(2, 2);
        assert!(matches!(
            Dataset::new(vec![im.clone()], vec![], Split::Train, 1),
            Err(Error::IdxCountMismatch { .. })
        ));
        assert!(matches!(
            Dataset::new(vec![im], vec![4], Split::Train, 3),
            Err(Error::LabelOutOfRange {
                label: 4,
                classes: 3
            })
        ));
    }
}
