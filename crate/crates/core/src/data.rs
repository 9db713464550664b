//! Datasets: IDX ingestion, seeded synthetic blobs and mini-batching.
//!
//! IDX files are read big-endian (`0x00000803` images, `0x00000801` labels) and may
//! be gzip-compressed; compression is detected from the content, not the name.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, IdxError, Result};
use crate::rng::{self, Purpose};
use crate::tensor::Tensor;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `N × feature dims`.
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if inputs.shape().len() < 2 || inputs.rows() != labels.len() {
            return Err(Error::Dimension(format!(
                "inputs {:?} do not match {} labels",
                inputs.shape(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Input(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            inputs,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Rows `indices` as a batch tensor with their labels.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let x = self.inputs.gather_rows(indices)?;
        let y = indices.iter().map(|&i| self.labels[i]).collect();
        Ok((x, y))
    }

    /// First `n` samples after a seeded shuffle (the whole set if `n >= len`).
    pub fn subset(&self, n: usize, seed: u64) -> Result<Self> {
        let mut rng = rng::stream(seed, Purpose::Subset, 0, 0, 0);
        let mut order = rng::permutation(self.len(), &mut rng);
        order.truncate(n.min(self.len()));
        let (inputs, labels) = self.batch(&order)?;
        Self::new(inputs, labels, self.num_classes)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32, IdxError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(IdxError::Truncated {
            needed: offset + 4,
            available: bytes.len(),
        })
}

/// Parsed IDX image file: `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8]), IdxError> {
    let magic = be_u32(bytes, 0)?;
    if magic != IMAGE_MAGIC {
        return Err(IdxError::BadMagic {
            expected: IMAGE_MAGIC,
            found: magic,
        });
    }
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let needed = 16 + count * rows * cols;
    if bytes.len() < needed {
        return Err(IdxError::Truncated {
            needed,
            available: bytes.len(),
        });
    }
    Ok((count, rows, cols, &bytes[16..needed]))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8], IdxError> {
    let magic = be_u32(bytes, 0)?;
    if magic != LABEL_MAGIC {
        return Err(IdxError::BadMagic {
            expected: LABEL_MAGIC,
            found: magic,
        });
    }
    let count = be_u32(bytes, 4)? as usize;
    let needed = 8 + count;
    if bytes.len() < needed {
        return Err(IdxError::Truncated {
            needed,
            available: bytes.len(),
        });
    }
    Ok(&bytes[8..needed])
}

/// Builds a dataset from in-memory IDX images and labels. Pixels are scaled by 1/255.
pub fn dataset_from_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let (count, rows, cols, pixels) = parse_idx_images(images)?;
    let label_bytes = parse_idx_labels(labels)?;
    if count != label_bytes.len() {
        return Err(IdxError::CountMismatch {
            images: count,
            labels: label_bytes.len(),
        }
        .into());
    }
    if count == 0 {
        return Err(Error::EmptyDataset);
    }
    let data = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let inputs = Tensor::new(vec![count, rows, cols], data)?;
    let labels: Vec<usize> = label_bytes.iter().map(|&b| b as usize).collect();
    let num_classes = labels.iter().max().map_or(0, |&m| m + 1).max(2);
    Dataset::new(inputs, labels, num_classes)
}

pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images = read_maybe_gz(images_path.as_ref())?;
    let labels = read_maybe_gz(labels_path.as_ref())?;
    dataset_from_idx(&images, &labels)
}

fn find_split(dir: &Path, stem: &str) -> Option<std::path::PathBuf> {
    [format!("{stem}.gz"), stem.to_string()]
        .into_iter()
        .map(|name| dir.join(name))
        .find(|p| p.exists())
}

/// Loads the `train` and, when present, `t10k` splits of an MNIST-layout directory.
pub fn load_mnist_dir(dir: impl AsRef<Path>) -> Result<(Dataset, Option<Dataset>)> {
    let dir = dir.as_ref();
    let split = |prefix: &str| -> Option<Result<Dataset>> {
        let images = find_split(dir, &format!("{prefix}-images-idx3-ubyte"))?;
        let labels = find_split(dir, &format!("{prefix}-labels-idx1-ubyte"))?;
        Some(load_idx(images, labels))
    };
    let train = split("train").ok_or_else(|| {
        Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("no train-images-idx3-ubyte[.gz] in {}", dir.display()),
        ))
    })??;
    let test = split("t10k").transpose()?;
    Ok((train, test))
}

/// Serializes images (values in [0, 1], rounded to bytes) and labels as raw IDX.
pub fn to_idx(dataset: &Dataset) -> Result<(Vec<u8>, Vec<u8>)> {
    let shape = dataset.inputs.shape();
    let (rows, cols) = match shape.len() {
        3 => (shape[1], shape[2]),
        2 => (1, shape[1]),
        _ => {
            return Err(Error::Dimension(format!(
                "IDX images need [N, rows, cols], got {shape:?}"
            )))
        }
    };
    let mut images = Vec::with_capacity(16 + dataset.inputs.numel());
    images.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    for d in [dataset.len(), rows, cols] {
        images.extend_from_slice(&(d as u32).to_be_bytes());
    }
    for &v in dataset.inputs.data() {
        images.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    let mut labels = Vec::with_capacity(8 + dataset.len());
    labels.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    labels.extend_from_slice(&(dataset.len() as u32).to_be_bytes());
    for &y in &dataset.labels {
        let byte = u8::try_from(y).map_err(|_| Error::Input(format!("label {y} does not fit a byte")))?;
        labels.push(byte);
    }
    Ok((images, labels))
}

pub fn write_idx(dataset: &Dataset, images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<()> {
    let (images, labels) = to_idx(dataset)?;
    fs::File::create(images_path)?.write_all(&images)?;
    fs::File::create(labels_path)?.write_all(&labels)?;
    Ok(())
}

/// Gaussian blobs around `classes` centers drawn uniformly from the unit sphere
/// in `dim` dimensions. Samples are stored class by class.
pub fn synth_blobs(seed: u64, n_per_class: usize, classes: usize, dim: usize, spread: f64) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::Parameter(format!("need at least 2 classes, got {classes}")));
    }
    if n_per_class == 0 || dim == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut rng = rng::stream(seed, Purpose::Blobs, 0, 0, 0);
    let mut centers = Vec::with_capacity(classes);
    for _ in 0..classes {
        let mut c: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        c.iter_mut().for_each(|v| *v /= norm);
        centers.push(c);
    }
    let mut data = Vec::with_capacity(classes * n_per_class * dim);
    let mut labels = Vec::with_capacity(classes * n_per_class);
    for (label, center) in centers.iter().enumerate() {
        for _ in 0..n_per_class {
            for &c in center {
                let noise: f64 = StandardNormal.sample(&mut rng);
                data.push(c + spread * noise);
            }
            labels.push(label);
        }
    }
    let inputs = Tensor::new(vec![classes * n_per_class, dim], data)?;
    Dataset::new(inputs, labels, classes)
}

/// Seeded permutation of `0..n` cut into contiguous chunks of `batch_size`; the
/// last chunk may be short.
pub fn batches(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    let batch_size = batch_size.max(1);
    let mut rng = rng::stream(seed, Purpose::Shuffle, epoch, 0, 0);
    let order = rng::permutation(n, &mut rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}
