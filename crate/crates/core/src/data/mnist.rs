//! MNIST ingestion from the original big-endian IDX containers.
//!
//! Pixels are converted to floats and divided by 255; no binarization, no
//! centering, nothing else.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

/// The full dataset in its original 60000:10000 split, pixels in [0, 1].
#[derive(Debug)]
pub struct Dataset {
    pub train_images: Tensor<f32>,
    pub train_labels: Vec<u8>,
    pub test_images: Tensor<f32>,
    pub test_labels: Vec<u8>,
}

impl Dataset {
    pub fn train_len(&self) -> usize {
        self.train_labels.len()
    }

    pub fn test_len(&self) -> usize {
        self.test_labels.len()
    }
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    let end = offset + 4;
    if end > bytes.len() {
        return Err(Error::Format(format!(
            "{}: truncated header ({} bytes)",
            path.display(),
            bytes.len()
        )));
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// Parses an IDX image file into [n, 784] floats in [0, 1]. Accepts any
/// image count but insists on 28x28 geometry.
pub fn read_idx_images(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::Ingest(format!("{}: {e}", path.display())))?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic {magic:#010x}, expected {IMAGE_MAGIC:#010x} for IDX images",
            path.display()
        )));
    }
    let n = be_u32(&bytes, 4, path)? as usize;
    let rows = be_u32(&bytes, 8, path)? as usize;
    let cols = be_u32(&bytes, 12, path)? as usize;
    if rows != 28 || cols != 28 {
        return Err(Error::Format(format!(
            "{}: expected 28x28 images, header says {rows}x{cols}",
            path.display()
        )));
    }
    let expected = 16 + n * rows * cols;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "{}: truncated image body, expected {expected} bytes, found {}",
            path.display(),
            bytes.len()
        )));
    }
    let data = bytes[16..].iter().map(|&b| b as f32 / 255.0).collect();
    Tensor::new(vec![n, rows * cols], data)
}

/// Parses an IDX label file. Accepts any count; every label must be 0-9.
pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::Ingest(format!("{}: {e}", path.display())))?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != LABEL_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic {magic:#010x}, expected {LABEL_MAGIC:#010x} for IDX labels",
            path.display()
        )));
    }
    let n = be_u32(&bytes, 4, path)? as usize;
    let expected = 8 + n;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "{}: truncated label body, expected {expected} bytes, found {}",
            path.display(),
            bytes.len()
        )));
    }
    let labels = bytes[8..].to_vec();
    if let Some(&bad) = labels.iter().find(|&&l| l > 9) {
        return Err(Error::Ingest(format!(
            "{}: label {bad} out of range 0-9",
            path.display()
        )));
    }
    Ok(labels)
}

/// Loads the canonical four files from `dir` and enforces the original
/// 60000:10000 split.
pub fn load_mnist(dir: &Path) -> Result<Dataset> {
    let train_images = read_idx_images(&dir.join(TRAIN_IMAGES))?;
    let train_labels = read_idx_labels(&dir.join(TRAIN_LABELS))?;
    let test_images = read_idx_images(&dir.join(TEST_IMAGES))?;
    let test_labels = read_idx_labels(&dir.join(TEST_LABELS))?;
    let counts = [
        (train_images.shape()[0], train_labels.len(), "train"),
        (test_images.shape()[0], test_labels.len(), "test"),
    ];
    for (images, labels, split) in counts {
        if images != labels {
            return Err(Error::Ingest(format!(
                "{split} split: {images} images but {labels} labels"
            )));
        }
    }
    if train_images.shape()[0] != 60000 || test_images.shape()[0] != 10000 {
        return Err(Error::Ingest(format!(
            "expected the original 60000:10000 split, found {}:{}",
            train_images.shape()[0],
            test_images.shape()[0]
        )));
    }
    Ok(Dataset {
        train_images,
        train_labels,
        test_images,
        test_labels,
    })
}
