//! MNIST in the IDX format: loading, one-hot targets, seeded subsets.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::learning::Examples;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;
pub const NUM_CLASSES: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum IdxError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { path: PathBuf, found: u32, expected: u32 },
    #[error("{path}: truncated, expected {expected} bytes, found {found}")]
    Truncated { path: PathBuf, expected: usize, found: usize },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("{path}: label {label} at index {index} is not a digit")]
    BadLabel { path: PathBuf, index: usize, label: u8 },
}

/// Images scaled to `[0, 1]`, row-major, `rows * cols` pixels each.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Vec<f32>,
    labels: Vec<u8>,
    pixels: usize,
}

impl Dataset {
    /// Builds a dataset from raw bytes as stored in IDX files.
    pub fn from_raw(pixels: usize, image_bytes: &[u8], labels: Vec<u8>) -> Result<Self> {
        if pixels == 0 || image_bytes.len() != pixels * labels.len() {
            return Err(Error::Dataset(format!(
                "{} image bytes do not hold {} images of {} pixels",
                image_bytes.len(),
                labels.len(),
                pixels
            )));
        }
        if let Some(index) = labels.iter().position(|&l| l as usize >= NUM_CLASSES) {
            return Err(Error::Dataset(format!("label {} at index {index} is not a digit", labels[index])));
        }
        Ok(Dataset { images: image_bytes.iter().map(|&b| b as f32 / 255.0).collect(), labels, pixels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn pixels(&self) -> usize {
        self.pixels
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn image_slice(&self, i: usize) -> &[f32] {
        &self.images[i * self.pixels..(i + 1) * self.pixels]
    }

    pub fn image(&self, i: usize) -> DVector<f64> {
        DVector::from_iterator(self.pixels, self.image_slice(i).iter().map(|&p| p as f64))
    }

    pub fn onehot(&self, i: usize) -> DVector<f64> {
        let mut y = DVector::zeros(NUM_CLASSES);
        y[self.labels[i] as usize] = 1.0;
        y
    }

    fn select(&self, indices: &[usize]) -> Dataset {
        let mut images = Vec::with_capacity(indices.len() * self.pixels);
        for &i in indices {
            images.extend_from_slice(self.image_slice(i));
        }
        Dataset { images, labels: indices.iter().map(|&i| self.labels[i]).collect(), pixels: self.pixels }
    }
}

impl Examples for Dataset {
    fn len(&self) -> usize {
        self.labels.len()
    }
    fn input(&self, i: usize) -> DVector<f64> {
        self.image(i)
    }
    fn target(&self, i: usize) -> DVector<f64> {
        self.onehot(i)
    }
    fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }
}

fn read(path: &Path) -> std::result::Result<Vec<u8>, IdxError> {
    fs::read(path).map_err(|source| IdxError::Io { path: path.to_owned(), source })
}

fn header(path: &Path, bytes: &[u8], magic: u32, words: usize) -> std::result::Result<Vec<u32>, IdxError> {
    let need = 4 * (words + 1);
    if bytes.len() < need {
        return Err(IdxError::Truncated { path: path.to_owned(), expected: need, found: bytes.len() });
    }
    let word = |i: usize| u32::from_be_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes"));
    if word(0) != magic {
        return Err(IdxError::BadMagic { path: path.to_owned(), found: word(0), expected: magic });
    }
    Ok((1..=words).map(word).collect())
}

fn body<'a>(path: &Path, bytes: &'a [u8], offset: usize, len: usize) -> std::result::Result<&'a [u8], IdxError> {
    if bytes.len() != offset + len {
        return Err(IdxError::Truncated { path: path.to_owned(), expected: offset + len, found: bytes.len() });
    }
    Ok(&bytes[offset..])
}

/// Reads an uncompressed IDX image file and its label file.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (images_path, labels_path) = (images_path.as_ref(), labels_path.as_ref());
    let image_bytes = read(images_path)?;
    let dims = header(images_path, &image_bytes, IMAGES_MAGIC, 3)?;
    let (count, pixels) = (dims[0] as usize, dims[1] as usize * dims[2] as usize);
    let pixel_data = body(images_path, &image_bytes, 16, count * pixels)?;

    let label_bytes = read(labels_path)?;
    let label_count = header(labels_path, &label_bytes, LABELS_MAGIC, 1)?[0] as usize;
    if label_count != count {
        return Err(IdxError::CountMismatch { images: count, labels: label_count }.into());
    }
    let labels = body(labels_path, &label_bytes, 8, label_count)?.to_vec();
    if let Some(index) = labels.iter().position(|&l| l as usize >= NUM_CLASSES) {
        return Err(IdxError::BadLabel { path: labels_path.to_owned(), index, label: labels[index] }.into());
    }
    Dataset::from_raw(pixels, pixel_data, labels)
}

/// Writes raw pixel bytes and labels as an IDX pair.
pub fn write_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    rows: u32,
    cols: u32,
    pixel_bytes: &[u8],
    labels: &[u8],
) -> io::Result<()> {
    let mut images = Vec::with_capacity(16 + pixel_bytes.len());
    for word in [IMAGES_MAGIC, labels.len() as u32, rows, cols] {
        images.extend_from_slice(&word.to_be_bytes());
    }
    images.extend_from_slice(pixel_bytes);
    fs::write(images_path, images)?;

    let mut label_file = Vec::with_capacity(8 + labels.len());
    for word in [LABELS_MAGIC, labels.len() as u32] {
        label_file.extend_from_slice(&word.to_be_bytes());
    }
    label_file.extend_from_slice(labels);
    fs::write(labels_path, label_file)
}

/// The first `n` examples of a seeded permutation of `ds`.
pub fn subset_and_shuffle(ds: &Dataset, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 || n > ds.len() {
        return Err(Error::Dataset(format!("subset size {n} outside 1..={}", ds.len())));
    }
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(ds.select(&order[..n]))
}
