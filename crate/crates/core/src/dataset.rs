//! Image datasets: IDX files (MNIST) and a raw-tensor container.
//!
//! The raw-tensor container is a JSON manifest next to a binary blob:
//!
//! ```json
//! { "shape": [N, C, H, W], "layout": "nchw", "blob": "images.bin",
//!   "labels": "labels.bin" }
//! ```
//!
//! `layout` may also be `"nhwc"`. The blob holds `N*C*H*W` unsigned bytes,
//! the label file `N` bytes.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::model::Geometry;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("bad magic {found:#010x}, expected {expected:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated file: header declares {expected} bytes of payload, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("malformed tensor manifest: {0}")]
    Manifest(String),
    #[error("no dataset found at {0}")]
    NotFound(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxFile {
    pub magic: u32,
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

pub fn parse_idx(bytes: &[u8], expected_magic: u32) -> Result<IdxFile, DatasetError> {
    let header = |n: usize| -> Result<&[u8], DatasetError> {
        bytes.get(..n).ok_or(DatasetError::Truncated {
            expected: n,
            found: bytes.len(),
        })
    };
    let word = |b: &[u8], i: usize| u32::from_be_bytes([b[4 * i], b[4 * i + 1], b[4 * i + 2], b[4 * i + 3]]);
    let magic = word(header(4)?, 0);
    if magic != expected_magic {
        return Err(DatasetError::BadMagic {
            expected: expected_magic,
            found: magic,
        });
    }
    let ndim = (magic & 0xff) as usize;
    let head = header(4 + 4 * ndim)?;
    let dims: Vec<usize> = (1..=ndim).map(|i| word(head, i) as usize).collect();
    let expected: usize = dims.iter().product();
    let payload = &bytes[head.len()..];
    if payload.len() < expected {
        return Err(DatasetError::Truncated {
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(DatasetError::LengthMismatch(format!(
            "header declares {expected} bytes of payload, file holds {}",
            payload.len()
        )));
    }
    Ok(IdxFile {
        magic,
        dims,
        data: payload.to_vec(),
    })
}

fn read_file(path: &Path) -> Result<Vec<u8>, DatasetError> {
    std::fs::read(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads an IDX image file (`0x00000803`).
pub fn read_idx(path: impl AsRef<Path>) -> Result<IdxFile, DatasetError> {
    parse_idx(&read_file(path.as_ref())?, IDX_IMAGES_MAGIC)
}

pub fn read_idx_labels(path: impl AsRef<Path>) -> Result<IdxFile, DatasetError> {
    parse_idx(&read_file(path.as_ref())?, IDX_LABELS_MAGIC)
}

/// Labelled 8-bit images stored channel-major: `pixels[((n * C + c) * H + y) * W + x]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageSet {
    pub geometry: Geometry,
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
}

impl ImageSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.geometry.neurons();
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| m as usize + 1)
    }
}

/// Combines an IDX image file with its label file.
pub fn load_idx_pair(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<ImageSet, DatasetError> {
    let img = read_idx(images)?;
    let lab = read_idx_labels(labels)?;
    if img.dims.len() != 3 {
        return Err(DatasetError::LengthMismatch(format!(
            "expected 3 image dims, got {:?}",
            img.dims
        )));
    }
    if img.dims[0] != lab.dims[0] {
        return Err(DatasetError::LengthMismatch(format!(
            "{} images but {} labels",
            img.dims[0], lab.dims[0]
        )));
    }
    Ok(ImageSet {
        geometry: Geometry::new(img.dims[2], img.dims[1], 1),
        pixels: img.data,
        labels: lab.data,
    })
}

/// Finds `<split>-images-idx3-ubyte` and `<split>-labels-idx1-ubyte` in `dir`
/// (the dotted `<split>-images.idx3-ubyte` spelling is accepted too).
pub fn load_idx_dir(dir: impl AsRef<Path>, split: &str) -> Result<ImageSet, DatasetError> {
    let dir = dir.as_ref();
    let find = |kind: &str, idx: &str| -> Result<PathBuf, DatasetError> {
        [
            format!("{split}-{kind}-{idx}-ubyte"),
            format!("{split}-{kind}.{idx}-ubyte"),
        ]
        .into_iter()
        .map(|n| dir.join(n))
        .find(|p| p.is_file())
        .ok_or_else(|| DatasetError::NotFound(format!("{}/{split}-{kind}-{idx}-ubyte", dir.display())))
    };
    load_idx_pair(find("images", "idx3")?, find("labels", "idx1")?)
}

#[derive(Deserialize)]
struct TensorManifest {
    shape: [usize; 4],
    #[serde(default = "default_layout")]
    layout: String,
    blob: String,
    labels: LabelSource,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum LabelSource {
    File(String),
    Inline(Vec<u8>),
}

fn default_layout() -> String {
    "nchw".into()
}

/// Loads a raw-tensor container from its JSON manifest.
pub fn load_tensor_set(manifest: impl AsRef<Path>) -> Result<ImageSet, DatasetError> {
    let manifest = manifest.as_ref();
    let text = read_file(manifest)?;
    let doc: TensorManifest = serde_json::from_slice(&text).map_err(|e| DatasetError::Manifest(e.to_string()))?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let [n, c, h, w] = doc.shape;
    let blob = read_file(&base.join(&doc.blob))?;
    let expected = n * c * h * w;
    if blob.len() < expected {
        return Err(DatasetError::Truncated {
            expected,
            found: blob.len(),
        });
    }
    if blob.len() > expected {
        return Err(DatasetError::LengthMismatch(format!(
            "shape needs {expected} bytes, blob holds {}",
            blob.len()
        )));
    }
    let pixels = match doc.layout.as_str() {
        "nchw" => blob,
        "nhwc" => {
            let mut out = vec![0u8; expected];
            for i in 0..n {
                for y in 0..h {
                    for x in 0..w {
                        for ch in 0..c {
                            out[((i * c + ch) * h + y) * w + x] = blob[((i * h + y) * w + x) * c + ch];
                        }
                    }
                }
            }
            out
        }
        other => return Err(DatasetError::Manifest(format!("unknown layout `{other}`"))),
    };
    let labels = match doc.labels {
        LabelSource::File(f) => read_file(&base.join(f))?,
        LabelSource::Inline(v) => v,
    };
    if labels.len() != n {
        return Err(DatasetError::LengthMismatch(format!(
            "{n} images but {} labels",
            labels.len()
        )));
    }
    Ok(ImageSet {
        geometry: Geometry::new(w, h, c),
        pixels,
        labels,
    })
}

/// A directory is read as IDX (`t10k` split, falling back to `train`),
/// a `.json` file as a raw-tensor container.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<ImageSet, DatasetError> {
    let path = path.as_ref();
    if path.is_dir() {
        match load_idx_dir(path, "t10k") {
            Err(DatasetError::NotFound(_)) => load_idx_dir(path, "train"),
            other => other,
        }
    } else if path.is_file() {
        load_tensor_set(path)
    } else {
        Err(DatasetError::NotFound(path.display().to_string()))
    }
}

/// Serialises images in IDX format.
pub fn write_idx_images(images: &[u8], count: usize, height: usize, width: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.len());
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for d in [count, height, width] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(images);
    out
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
