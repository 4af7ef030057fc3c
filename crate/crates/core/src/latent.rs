//! Latent tensors, the LSVD file format and synthetic latent generation.
//!
//! LSVD layout (all integers little-endian `u32`):
//!
//! ```text
//! offset  size  field
//!      0     4  magic "LSVD"
//!      4     4  format version = 1
//!      8     4  C
//!     12     4  H
//!     16     4  W
//!     20     4  dtype code = 1 (float32 LE)
//!     24  4CHW  payload, row-major, channel outermost
//! ```
//!
//! Metadata lives in an optional sidecar next to the data file: `x.lat`
//! pairs with `x.meta.json`, a flat JSON object with the keys `time_step`,
//! `total_steps`, `seed` and `tag`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::Rng;

pub const MAGIC: &[u8; 4] = b"LSVD";
pub const FORMAT_VERSION: u32 = 1;
pub const DTYPE_F32_LE: u32 = 1;
pub const HEADER_LEN: usize = 24;
pub const DEFAULT_TOTAL_STEPS: u32 = 1000;

/// Reference latent shape (C, H, W).
pub const DEFAULT_SHAPE: Shape = Shape { channels: 4, height: 64, width: 64 };

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width }
    }

    pub fn channel_len(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.channels * self.channel_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::InvalidArgument(format!("latent dimensions must be positive, got {self}")));
        }
        Ok(())
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentMeta {
    pub time_step: Option<u32>,
    pub total_steps: u32,
    pub seed: Option<u64>,
    pub tag: Option<String>,
}

impl Default for LatentMeta {
    fn default() -> Self {
        Self { time_step: None, total_steps: DEFAULT_TOTAL_STEPS, seed: None, tag: None }
    }
}

impl LatentMeta {
    fn validate(&self) -> Result<()> {
        if let Some(t) = self.time_step {
            if t > self.total_steps {
                return Err(Error::InvalidArgument(format!("time_step {t} exceeds total_steps {}", self.total_steps)));
            }
        }
        Ok(())
    }
}

/// A `C×H×W` latent code.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTensor {
    shape: Shape,
    data: Vec<f32>,
    pub meta: LatentMeta,
}

impl LatentTensor {
    pub fn new(shape: Shape, data: Vec<f32>, meta: LatentMeta) -> Result<Self> {
        shape.validate()?;
        meta.validate()?;
        if data.len() != shape.len() {
            return Err(Error::ShapeMismatch(format!("{} values for shape {shape}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { shape, data, meta })
    }

    pub fn zeros(shape: Shape) -> Result<Self> {
        Self::new(shape, vec![0.0; shape.len()], LatentMeta::default())
    }

    /// Assembles a tensor from per-channel `H×W` matrices (values rounded
    /// to `f32`).
    pub fn from_channels(channels: &[Matrix], meta: LatentMeta) -> Result<Self> {
        let first = channels.first().ok_or_else(|| Error::InvalidArgument("no channels".into()))?;
        let (h, w) = first.shape();
        let mut data = Vec::with_capacity(channels.len() * h * w);
        for c in channels {
            if c.shape() != (h, w) {
                return Err(Error::ShapeMismatch(format!("channel {}x{} vs {h}x{w}", c.rows(), c.cols())));
            }
            data.extend(c.as_slice().iter().map(|&v| v as f32));
        }
        Self::new(Shape::new(channels.len(), h, w), data, meta)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn channel_slice(&self, c: usize) -> &[f32] {
        let n = self.shape.channel_len();
        &self.data[c * n..(c + 1) * n]
    }

    /// Channel `c` as an `H×W` matrix.
    pub fn channel(&self, c: usize) -> Matrix {
        let s = self.channel_slice(c);
        Matrix::from_fn(self.shape.height, self.shape.width, |i, j| s[i * self.shape.width + j] as f64)
    }

    pub fn channels(&self) -> Vec<Matrix> {
        (0..self.shape.channels).map(|c| self.channel(c)).collect()
    }

    pub fn with_meta(mut self, meta: LatentMeta) -> Self {
        self.meta = meta;
        self
    }
}

/// Sidecar metadata path for a latent file: `dir/x.lat` → `dir/x.meta.json`.
pub fn meta_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.meta.json"))
}

pub fn encode_latent(tensor: &LatentTensor) -> Result<Vec<u8>> {
    if tensor.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let s = tensor.shape;
    let dims = [s.channels, s.height, s.width]
        .map(|d| u32::try_from(d).map_err(|_| Error::DimensionOverflow(format!("dimension {d} exceeds u32"))));
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * s.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for d in dims {
        out.extend_from_slice(&d?.to_le_bytes());
    }
    out.extend_from_slice(&DTYPE_F32_LE.to_le_bytes());
    for v in &tensor.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_latent(bytes: &[u8]) -> Result<LatentTensor> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::TruncatedPayload { expected: HEADER_LEN as u64, found: bytes.len() as u64 });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    let version = word(1);
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch { found: version, expected: FORMAT_VERSION });
    }
    let (c, h, w) = (word(2) as u64, word(3) as u64, word(4) as u64);
    let dtype = word(5);
    if dtype != DTYPE_F32_LE {
        return Err(Error::UnsupportedDtype(dtype));
    }
    let payload = c
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .and_then(|v| v.checked_mul(4))
        .filter(|&v| usize::try_from(v).is_ok())
        .ok_or_else(|| Error::DimensionOverflow(format!("{c}x{h}x{w}")))?;
    let found = (bytes.len() - HEADER_LEN) as u64;
    if found < payload {
        return Err(Error::TruncatedPayload { expected: payload, found });
    }
    if found > payload {
        return Err(Error::TrailingBytes(found - payload));
    }
    let data = bytes[HEADER_LEN..].chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
    LatentTensor::new(Shape::new(c as usize, h as usize, w as usize), data, LatentMeta::default())
}

/// Writes the LSVD file and its metadata sidecar.
pub fn save_latent(tensor: &LatentTensor, path: &Path) -> Result<()> {
    let bytes = encode_latent(tensor)?;
    let mut f = BufWriter::new(fs::File::create(path)?);
    f.write_all(&bytes)?;
    f.flush()?;
    let meta = serde_json::to_vec_pretty(&tensor.meta)?;
    fs::write(meta_path(path), meta)?;
    Ok(())
}

/// Reads an LSVD file; metadata comes from the sidecar when one exists.
pub fn load_latent(path: &Path) -> Result<LatentTensor> {
    let bytes = fs::read(path)?;
    let mut t = decode_latent(&bytes)?;
    let mp = meta_path(path);
    if mp.exists() {
        let meta: LatentMeta = serde_json::from_slice(&fs::read(mp)?)?;
        meta.validate()?;
        t.meta = meta;
    }
    Ok(t)
}

/// Parameters of a synthetic Gaussian latent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub shape: Shape,
    pub seed: u64,
    pub mean: f64,
    pub std: f64,
}

impl GenSpec {
    pub fn new(shape: Shape, seed: u64) -> Self {
        Self { shape, seed, mean: 0.0, std: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        self.shape.validate()?;
        if !(self.std > 0.0 && self.std.is_finite()) {
            return Err(Error::InvalidArgument(format!("std must be > 0, got {}", self.std)));
        }
        if !self.mean.is_finite() {
            return Err(Error::InvalidArgument("mean must be finite".into()));
        }
        Ok(())
    }
}

/// Deterministic Gaussian latent: `mean + std·g` with `g` drawn from the
/// pinned generator seeded with `spec.seed`, filled in storage order.
pub fn synth_latent(spec: &GenSpec) -> Result<LatentTensor> {
    spec.validate()?;
    let mut rng = Rng::new(spec.seed);
    let data = (0..spec.shape.len()).map(|_| (spec.mean + spec.std * rng.normal()) as f32).collect();
    let meta = LatentMeta { seed: Some(spec.seed), ..LatentMeta::default() };
    LatentTensor::new(spec.shape, data, meta)
}

/// `tensor + sigma·g` with unit Gaussian `g` from `seed`. `sigma = 0`
/// returns the input unchanged.
pub fn perturb(tensor: &LatentTensor, sigma: f64, seed: u64) -> Result<LatentTensor> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(tensor.clone());
    }
    let mut rng = Rng::new(seed);
    let data = tensor.data.iter().map(|&v| (v as f64 + sigma * rng.normal()) as f32).collect();
    LatentTensor::new(tensor.shape, data, tensor.meta.clone())
}
