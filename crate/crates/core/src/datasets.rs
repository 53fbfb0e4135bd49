//! MNIST (IDX) and CIFAR-10 (binary version) loaders.
//!
//! Pixels are scaled by 1/255 into `[0, 1]`; images are returned NHWC.

use std::fmt;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use flate2::read::GzDecoder;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_RECORD_BYTES: usize = 1 + 3 * 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    /// `[N, H, W, C]`, values in `[0, 1]`.
    pub images: Tensor,
    pub labels: Vec<u8>,
}

impl DatasetSplit {
    pub fn new(images: Tensor, labels: Vec<u8>) -> Result<Self> {
        if images.shape().len() != 4 || images.shape()[0] != labels.len() {
            return Err(Error::ShapeMismatch {
                layer: 0,
                kind: "dataset",
                expected: format!("[{}, H, W, C]", labels.len()),
                found: format!("{:?}", images.shape()),
            });
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-example shape `[H, W, C]`.
    pub fn example_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            images: self.images.gather_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// The first `n` examples (all of them if `n >= len`).
    pub fn head(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            images: self.images.rows(0, n),
            labels: self.labels[..n].to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Mnist,
    Cifar10,
}

impl DatasetKind {
    pub fn id(self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Cifar10 => "cifar10",
        }
    }

    /// Returns `(train, test)`.
    pub fn load(self, dir: &Path) -> Result<(DatasetSplit, DatasetSplit)> {
        match self {
            DatasetKind::Mnist => load_mnist(dir),
            DatasetKind::Cifar10 => load_cifar10(dir),
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnist" => Ok(DatasetKind::Mnist),
            "cifar10" => Ok(DatasetKind::Cifar10),
            other => Err(Error::InvalidConfig(format!("unknown dataset `{other}`"))),
        }
    }
}

pub fn load_mnist(dir: &Path) -> Result<(DatasetSplit, DatasetSplit)> {
    let train = load_idx_pair(dir, "train")?;
    let test = load_idx_pair(dir, "t10k")?;
    Ok((train, test))
}

fn load_idx_pair(dir: &Path, prefix: &str) -> Result<DatasetSplit> {
    let images_path = find_file(dir, &format!("{prefix}-images-idx3-ubyte"))?;
    let labels_path = find_file(dir, &format!("{prefix}-labels-idx1-ubyte"))?;
    let (n, rows, cols, pixels) = parse_idx_images(&images_path, &read_maybe_gz(&images_path)?)?;
    let labels = parse_idx_labels(&labels_path, &read_maybe_gz(&labels_path)?)?;
    if labels.len() != n {
        return Err(Error::Format {
            file: labels_path,
            offset: 4,
            msg: format!("{} labels but {n} images", labels.len()),
        });
    }
    let images = Tensor::new(vec![n, rows, cols, 1], normalize(&pixels))?;
    DatasetSplit::new(images, labels)
}

/// Accepts either the raw file or its `.gz` sibling.
fn find_file(dir: &Path, name: &str) -> Result<PathBuf> {
    let plain = dir.join(name);
    if plain.is_file() {
        return Ok(plain);
    }
    let gz = dir.join(format!("{name}.gz"));
    if gz.is_file() {
        return Ok(gz);
    }
    Err(Error::io(
        plain,
        std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
    ))
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut raw))
        .map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        return Ok(out);
    }
    Ok(raw)
}

fn be_u32(file: &Path, bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            file: file.to_path_buf(),
            offset: offset as u64,
            msg: "truncated header".into(),
        })
}

/// Returns `(count, rows, cols, pixel bytes)`.
pub fn parse_idx_images(file: &Path, bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    let magic = be_u32(file, bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format {
            file: file.to_path_buf(),
            offset: 0,
            msg: format!("bad magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let n = be_u32(file, bytes, 4)? as usize;
    let rows = be_u32(file, bytes, 8)? as usize;
    let cols = be_u32(file, bytes, 12)? as usize;
    let body = &bytes[16..];
    let want = n * rows * cols;
    if body.len() != want {
        return Err(Error::Format {
            file: file.to_path_buf(),
            offset: 16 + body.len().min(want) as u64,
            msg: format!("expected {want} pixel bytes, found {}", body.len()),
        });
    }
    Ok((n, rows, cols, body.to_vec()))
}

pub fn parse_idx_labels(file: &Path, bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(file, bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format {
            file: file.to_path_buf(),
            offset: 0,
            msg: format!("bad magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let n = be_u32(file, bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(Error::Format {
            file: file.to_path_buf(),
            offset: 8 + body.len().min(n) as u64,
            msg: format!("expected {n} labels, found {}", body.len()),
        });
    }
    if let Some(pos) = body.iter().position(|&l| l > 9) {
        return Err(Error::Format {
            file: file.to_path_buf(),
            offset: 8 + pos as u64,
            msg: format!("label {} out of range", body[pos]),
        });
    }
    Ok(body.to_vec())
}

pub fn load_cifar10(dir: &Path) -> Result<(DatasetSplit, DatasetSplit)> {
    // The official archive unpacks into `cifar-10-batches-bin/`.
    let nested = dir.join("cifar-10-batches-bin");
    let dir = if nested.is_dir() {
        nested.as_path()
    } else {
        dir
    };
    let train_files: Vec<PathBuf> = (1..=5)
        .map(|i| dir.join(format!("data_batch_{i}.bin")))
        .collect();
    let train = load_cifar_files(&train_files)?;
    let test = load_cifar_files(&[dir.join("test_batch.bin")])?;
    Ok((train, test))
}

fn load_cifar_files(files: &[PathBuf]) -> Result<DatasetSplit> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for path in files {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        parse_cifar_records(path, &bytes, &mut pixels, &mut labels)?;
    }
    let images = Tensor::new(vec![labels.len(), 32, 32, 3], pixels)?;
    DatasetSplit::new(images, labels)
}

/// Appends NHWC-ordered normalized pixels and labels from one batch file.
pub fn parse_cifar_records(
    file: &Path,
    bytes: &[u8],
    pixels: &mut Vec<f32>,
    labels: &mut Vec<u8>,
) -> Result<()> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD_BYTES) {
        return Err(Error::Format {
            file: file.to_path_buf(),
            offset: (bytes.len() - bytes.len() % CIFAR_RECORD_BYTES) as u64,
            msg: format!(
                "length {} is not a multiple of {CIFAR_RECORD_BYTES}",
                bytes.len()
            ),
        });
    }
    for (r, record) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
        let label = record[0];
        if label > 9 {
            return Err(Error::Format {
                file: file.to_path_buf(),
                offset: (r * CIFAR_RECORD_BYTES) as u64,
                msg: format!("label {label} out of range"),
            });
        }
        labels.push(label);
        let planes = &record[1..];
        for p in 0..1024 {
            for c in 0..3 {
                pixels.push(planes[c * 1024 + p] as f32 / 255.0);
            }
        }
    }
    Ok(())
}

fn normalize(bytes: &[u8]) -> Vec<f32> {
    bytes.iter().map(|&b| b as f32 / 255.0).collect()
}
