//! Dense optical-flow fields and the Middlebury `.flo` container.
//!
//! A [`FlowField`] holds one per-pixel 2-D displacement grid for a consecutive
//! frame pair, in pixels/frame. Flow is always *forward* flow: the field for
//! frame `i` maps pixels of frame `i` to their positions in frame `i+1`.
//! Coordinates follow row-major `.flo` storage: x rightward, y downward,
//! origin at the top-left pixel center.
//!
//! Directory convention: one file per frame pair, named `frame_%06d.flo`
//! and ordered by index.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

/// `.flo` magic tag (reads as ASCII "PIEH" in little-endian files).
pub const FLO_MAGIC: f32 = 202021.25;

/// Displacements at or above this magnitude are the Middlebury "unknown flow"
/// sentinel and carry no usable motion.
pub const SENTINEL_THRESHOLD: f32 = 1e9;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("bad .flo magic tag: expected {FLO_MAGIC}, got {0}")]
    BadMagic(f32),
    #[error(".flo byte count mismatch: expected {expected}, got {got}")]
    Truncated { expected: usize, got: usize },
    #[error("non-finite or sentinel flow value at pixel index {index}")]
    NonFiniteFlow { index: usize },
    #[error("invalid flow dimensions {width}x{height}")]
    BadDimensions { width: i32, height: i32 },
    #[error("flow component length {got} does not match {width}x{height}")]
    LengthMismatch { width: usize, height: usize, got: usize },
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

/// How to treat non-finite or sentinel displacement values on ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SentinelPolicy {
    /// Replace the offending value with zero and count it.
    #[default]
    Zero,
    /// Reject the file with [`FlowError::NonFiniteFlow`].
    Reject,
}

/// Dense per-pixel displacement grid for one frame pair.
///
/// Immutable after construction; all entries are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    u: Vec<f32>,
    v: Vec<f32>,
}

/// Result of decoding a `.flo` byte stream.
#[derive(Debug, Clone)]
pub struct FloDecoded {
    pub field: FlowField,
    /// Number of sentinel/non-finite values zeroed under [`SentinelPolicy::Zero`].
    pub zeroed: usize,
}

impl FlowField {
    /// Build a field from row-major component planes.
    pub fn new(width: usize, height: usize, u: Vec<f32>, v: Vec<f32>) -> Result<Self, FlowError> {
        if width == 0 || height == 0 {
            return Err(FlowError::BadDimensions {
                width: width as i32,
                height: height as i32,
            });
        }
        let n = width * height;
        if u.len() != n || v.len() != n {
            return Err(FlowError::LengthMismatch {
                width,
                height,
                got: u.len().max(v.len()),
            });
        }
        if let Some(index) = u
            .iter()
            .chain(v.iter())
            .position(|c| !c.is_finite() || c.abs() >= SENTINEL_THRESHOLD)
        {
            return Err(FlowError::NonFiniteFlow { index: index % n });
        }
        Ok(Self { width, height, u, v })
    }

    /// All-zero field, for tests and padding.
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::new(width, height, vec![0.0; width * height], vec![0.0; width * height])
            .expect("zero field dimensions")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Stored displacement at an integer pixel.
    pub fn at(&self, x: usize, y: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    /// Bilinear displacement sample at subpixel coordinates.
    ///
    /// Coordinates outside `[0, w-1] x [0, h-1]` clamp to the border, so
    /// marginally drifted particle positions stay valid.
    pub fn sample(&self, x: f64, y: f64) -> (f64, f64) {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;

        let lerp2 = |plane: &[f32]| -> f64 {
            let p00 = plane[y0 * self.width + x0] as f64;
            let p10 = plane[y0 * self.width + x1] as f64;
            let p01 = plane[y1 * self.width + x0] as f64;
            let p11 = plane[y1 * self.width + x1] as f64;
            let top = p00 + (p10 - p00) * fx;
            let bot = p01 + (p11 - p01) * fx;
            top + (bot - top) * fy
        };
        (lerp2(&self.u), lerp2(&self.v))
    }
}

/// Decode a `.flo` byte stream.
pub fn read_flo(bytes: &[u8], policy: SentinelPolicy) -> Result<FloDecoded, FlowError> {
    if bytes.len() < 12 {
        return Err(FlowError::Truncated { expected: 12, got: bytes.len() });
    }
    let magic = f32::from_le_bytes(bytes[0..4].try_into().unwrap());
    if magic != FLO_MAGIC {
        return Err(FlowError::BadMagic(magic));
    }
    let width = i32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let height = i32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if width <= 0 || height <= 0 {
        return Err(FlowError::BadDimensions { width, height });
    }
    let (w, h) = (width as usize, height as usize);
    let expected = 12 + 8 * w * h;
    if bytes.len() != expected {
        return Err(FlowError::Truncated { expected, got: bytes.len() });
    }

    let n = w * h;
    let mut u = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    let mut zeroed = 0usize;
    for i in 0..n {
        let off = 12 + 8 * i;
        let mut ui = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        let mut vi = f32::from_le_bytes(bytes[off + 4..off + 8].try_into().unwrap());
        for c in [&mut ui, &mut vi] {
            if !c.is_finite() || c.abs() >= SENTINEL_THRESHOLD {
                match policy {
                    SentinelPolicy::Zero => {
                        *c = 0.0;
                        zeroed += 1;
                    }
                    SentinelPolicy::Reject => return Err(FlowError::NonFiniteFlow { index: i }),
                }
            }
        }
        u.push(ui);
        v.push(vi);
    }
    Ok(FloDecoded { field: FlowField::new(w, h, u, v)?, zeroed })
}

/// Encode a field as `.flo` bytes; byte-exact inverse of [`read_flo`].
pub fn write_flo(field: &FlowField) -> Vec<u8> {
    let n = field.width * field.height;
    let mut out = Vec::with_capacity(12 + 8 * n);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(field.width as i32).to_le_bytes());
    out.extend_from_slice(&(field.height as i32).to_le_bytes());
    for i in 0..n {
        out.extend_from_slice(&field.u[i].to_le_bytes());
        out.extend_from_slice(&field.v[i].to_le_bytes());
    }
    out
}

/// Path of the flow file for frame pair `index` in `dir`.
pub fn flo_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("frame_{index:06}.flo"))
}

pub fn read_flo_file(path: &Path, policy: SentinelPolicy) -> Result<FloDecoded, FlowError> {
    let bytes = fs::read(path)?;
    read_flo(&bytes, policy)
}

pub fn write_flo_file(path: &Path, field: &FlowField) -> Result<(), FlowError> {
    fs::write(path, write_flo(field))?;
    Ok(())
}

/// Sequential reader over a `frame_%06d.flo` directory.
pub struct FloDirSource {
    dir: PathBuf,
    policy: SentinelPolicy,
    next: usize,
    end: usize,
    /// Total sentinel values zeroed across files read so far.
    pub zeroed: usize,
}

impl FloDirSource {
    /// Read `count` consecutive fields starting at frame index `start`.
    /// `count = None` reads until the first missing file.
    pub fn new(dir: &Path, start: usize, count: Option<usize>, policy: SentinelPolicy) -> Self {
        let end = count.map(|c| start + c).unwrap_or(usize::MAX);
        Self { dir: dir.to_path_buf(), policy, next: start, end, zeroed: 0 }
    }
}

impl Iterator for FloDirSource {
    type Item = Result<FlowField, FlowError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.end {
            return None;
        }
        let path = flo_path(&self.dir, self.next);
        if self.end == usize::MAX && !path.exists() {
            return None;
        }
        self.next += 1;
        match read_flo_file(&path, self.policy) {
            Ok(dec) => {
                self.zeroed += dec.zeroed;
                Some(Ok(dec.field))
            }
            Err(e) => Some(Err(e)),
        }
    }
}
