//! IDX container parsing and the binarize-and-upscale preprocessing.
//!
//! Files may be raw or gzip compressed; compression is detected from the
//! first two bytes.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use thiserror::Error;

use crate::array::AnalogPlane;
use crate::netplan::Preset;

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;
/// Pixels at or above this intensity become 1.
pub const THRESHOLD: u8 = 128;

#[derive(Debug, Error)]
pub enum IdxError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: magic {got}, expected {want}")]
    Magic { path: PathBuf, got: u32, want: u32 },
    #[error("{path}: header truncated")]
    Header { path: PathBuf },
    #[error("{path}: {got} payload bytes, header promises {want}")]
    Length { path: PathBuf, got: usize, want: usize },
    #[error("{images} images but {labels} labels")]
    Count { images: usize, labels: usize },
    #[error("label {label} at index {index} is not a digit")]
    Label { index: usize, label: u8 },
}

/// Grayscale digits with their labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub rows: usize,
    pub cols: usize,
    pixels: Vec<u8>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn new(rows: usize, cols: usize, pixels: Vec<u8>, labels: Vec<u8>) -> Result<Self, IdxError> {
        let images = pixels.len().checked_div(rows * cols).unwrap_or(0);
        if images * rows * cols != pixels.len() || images != labels.len() {
            return Err(IdxError::Count {
                images,
                labels: labels.len(),
            });
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l > 9) {
            return Err(IdxError::Label { index, label });
        }
        Ok(Self {
            rows,
            cols,
            pixels,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Row-major pixels of image `i`.
    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..(i + 1) * n]
    }

    /// The first `n` items.
    pub fn truncated(mut self, n: usize) -> Self {
        let n = n.min(self.len());
        self.pixels.truncate(n * self.rows * self.cols);
        self.labels.truncate(n);
        self
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>, IdxError> {
    let io = |source| IdxError::Io {
        path: path.to_path_buf(),
        source,
    };
    let raw = fs::read(path).map_err(io)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out).map_err(io)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Parses one IDX file, returning its dimensions and payload.
pub fn parse_idx(path: &Path, bytes: &[u8], magic: u32) -> Result<(Vec<usize>, Vec<u8>), IdxError> {
    let word = |i: usize| -> Option<u32> {
        bytes
            .get(4 * i..4 * i + 4)
            .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    };
    let header = || IdxError::Header {
        path: path.to_path_buf(),
    };
    let got = word(0).ok_or_else(header)?;
    if got != magic {
        return Err(IdxError::Magic {
            path: path.to_path_buf(),
            got,
            want: magic,
        });
    }
    let ndims = (got & 0xff) as usize;
    let dims = (1..=ndims)
        .map(|i| word(i).map(|d| d as usize).ok_or_else(header))
        .collect::<Result<Vec<_>, _>>()?;
    let want: usize = dims.iter().product();
    let payload = &bytes[4 * (ndims + 1)..];
    if payload.len() != want {
        return Err(IdxError::Length {
            path: path.to_path_buf(),
            got: payload.len(),
            want,
        });
    }
    Ok((dims, payload.to_vec()))
}

/// Loads an image file and its label file.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset, IdxError> {
    let (dims, pixels) = parse_idx(images, &read_maybe_gz(images)?, IMAGE_MAGIC)?;
    let (ldims, labels_raw) = parse_idx(labels, &read_maybe_gz(labels)?, LABEL_MAGIC)?;
    if dims[0] != ldims[0] {
        return Err(IdxError::Count {
            images: dims[0],
            labels: ldims[0],
        });
    }
    Dataset::new(dims[1], dims[2], pixels, labels_raw)
}

/// Which half of the standard distribution to load.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Loads `train-*` or `t10k-*` from `dir`, with or without a `.gz` suffix.
pub fn load_split(dir: &Path, split: Split) -> Result<Dataset, IdxError> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    let find = |kind: &str| {
        let base = dir.join(format!("{prefix}-{kind}"));
        let gz = dir.join(format!("{prefix}-{kind}.gz"));
        if base.exists() {
            base
        } else {
            gz
        }
    };
    load_idx(&find("images-idx3-ubyte"), &find("labels-idx1-ubyte"))
}

/// Input side length of a preset.
pub fn input_side(preset: Preset) -> usize {
    match preset {
        Preset::TwoLayer => 32,
        Preset::ThreeLayer => 64,
    }
}

/// Nearest-neighbour upscale of a `rows × cols` image to `side × side`,
/// then threshold at [`THRESHOLD`]. Output is row-major 0/1.
pub fn binarize(pixels: &[u8], rows: usize, cols: usize, side: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(side * side);
    for y in 0..side {
        let sy = y * rows / side;
        for x in 0..side {
            let sx = x * cols / side;
            out.push(u8::from(pixels[sy * cols + sx] >= THRESHOLD));
        }
    }
    out
}

/// [`binarize`] as an analog plane ready for inference.
pub fn preprocess(pixels: &[u8], rows: usize, cols: usize, preset: Preset) -> AnalogPlane {
    let side = input_side(preset);
    let bits = binarize(pixels, rows, cols, side);
    AnalogPlane::from_fn(side, side, |x, y| f64::from(bits[y * side + x]))
}

/// Binarized copies of every image in `data`.
pub fn binarize_all(data: &Dataset, side: usize) -> Vec<Vec<u8>> {
    (0..data.len())
        .map(|i| binarize(data.image(i), data.rows, data.cols, side))
        .collect()
}
