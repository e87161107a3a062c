//! Force flow matrices and visual words.
//!
//! Per-frame net-force magnitudes are windowed into clips of `T` frames; one
//! clip yields a `T x n` force flow matrix (row = frame, column = grid cell).
//! A visual word is one column: a single cell's force time series over the
//! clip. Words are the unit of dictionary training, detection and
//! localization. Words are not normalized by default; the force scale itself
//! carries the anomaly signal.

use std::io::{BufRead, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("clip length {0} must be at least 2")]
    ClipTooShort(usize),
    #[error("stride {0} must be positive")]
    BadStride(usize),
    #[error("frame has {got} cells, expected {expected}")]
    CellCountMismatch { expected: usize, got: usize },
    #[error("non-finite or negative force magnitude {value} at cell {cell}")]
    BadMagnitude { cell: usize, value: f64 },
    #[error("word csv parse error at line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// `T x n` matrix of force magnitudes for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct ForceFlowMatrix {
    t: usize,
    n: usize,
    /// Row-major `t * n` values; row = frame within the clip.
    values: Vec<f64>,
    /// Absolute frame index of the clip's first frame.
    pub clip_start: usize,
}

impl ForceFlowMatrix {
    pub fn clip_len(&self) -> usize {
        self.t
    }

    pub fn cell_count(&self) -> usize {
        self.n
    }

    pub fn value(&self, frame_in_clip: usize, cell: usize) -> f64 {
        self.values[frame_in_clip * self.n + cell]
    }

    /// Rebuild a matrix from its words; inverse of [`extract_words`].
    pub fn from_words(words: &[VisualWord], clip_start: usize) -> Self {
        let n = words.len();
        let t = words.first().map(|w| w.values.len()).unwrap_or(0);
        let mut values = vec![0.0; t * n];
        for (j, w) in words.iter().enumerate() {
            for (row, &x) in w.values.iter().enumerate() {
                values[row * n + j] = x;
            }
        }
        Self { t, n, values, clip_start }
    }
}

/// One cell's force time series over a clip.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualWord {
    pub values: Vec<f64>,
    pub cell_index: usize,
    pub clip_start: usize,
}

impl VisualWord {
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// L2-normalized copy; zero words stay zero.
    pub fn l2_normalized(&self) -> Self {
        let n = self.norm();
        if n == 0.0 {
            return self.clone();
        }
        Self {
            values: self.values.iter().map(|x| x / n).collect(),
            ..*self
        }
    }
}

/// Streaming clip windower: push per-frame magnitude lists, collect matrices.
///
/// Consecutive windows of `clip_len` frames advance by `stride`; the default
/// stride equals `clip_len` (non-overlapping clips). A trailing window
/// shorter than `clip_len` is dropped.
pub struct ForceFlowBuilder {
    clip_len: usize,
    stride: usize,
    n: Option<usize>,
    buffer: Vec<Vec<f64>>,
    window_start: usize,
}

impl ForceFlowBuilder {
    pub fn new(clip_len: usize, stride: usize, first_frame: usize) -> Result<Self, FeatureError> {
        if clip_len < 2 {
            return Err(FeatureError::ClipTooShort(clip_len));
        }
        if stride == 0 {
            return Err(FeatureError::BadStride(stride));
        }
        Ok(Self { clip_len, stride, n: None, buffer: Vec::new(), window_start: first_frame })
    }

    /// Push one frame's per-cell magnitudes; returns a matrix when a full
    /// window completes.
    pub fn push(&mut self, forces: Vec<f64>) -> Result<Option<ForceFlowMatrix>, FeatureError> {
        let n = *self.n.get_or_insert(forces.len());
        if forces.len() != n {
            return Err(FeatureError::CellCountMismatch { expected: n, got: forces.len() });
        }
        if let Some((cell, &value)) =
            forces.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(FeatureError::BadMagnitude { cell, value });
        }
        self.buffer.push(forces);
        if self.buffer.len() < self.clip_len {
            return Ok(None);
        }
        let mut values = Vec::with_capacity(self.clip_len * n);
        for row in &self.buffer {
            values.extend_from_slice(row);
        }
        let matrix =
            ForceFlowMatrix { t: self.clip_len, n, values, clip_start: self.window_start };
        self.buffer.drain(..self.stride.min(self.buffer.len()));
        self.window_start += self.stride;
        Ok(Some(matrix))
    }
}

/// Window a finite force stream into clip matrices (stride = clip length).
pub fn build_force_flow(
    per_frame_forces: &[Vec<f64>],
    clip_len: usize,
) -> Result<Vec<ForceFlowMatrix>, FeatureError> {
    let mut builder = ForceFlowBuilder::new(clip_len, clip_len, 0)?;
    let mut out = Vec::new();
    for frame in per_frame_forces {
        if let Some(m) = builder.push(frame.clone())? {
            out.push(m);
        }
    }
    Ok(out)
}

/// Split a matrix into its `n` per-cell words.
pub fn extract_words(matrix: &ForceFlowMatrix) -> Vec<VisualWord> {
    (0..matrix.n)
        .map(|j| VisualWord {
            values: (0..matrix.t).map(|row| matrix.value(row, j)).collect(),
            cell_index: j,
            clip_start: matrix.clip_start,
        })
        .collect()
}

/// Write words as CSV with header `clip_start,cell,v0..v{T-1}`.
pub fn write_words_csv<W: Write>(out: &mut W, words: &[VisualWord]) -> Result<(), FeatureError> {
    let t = words.first().map(|w| w.values.len()).unwrap_or(0);
    let header: Vec<String> = ["clip_start".to_string(), "cell".to_string()]
        .into_iter()
        .chain((0..t).map(|i| format!("v{i}")))
        .collect();
    writeln!(out, "{}", header.join(","))?;
    for w in words {
        write!(out, "{},{}", w.clip_start, w.cell_index)?;
        for v in &w.values {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Read words back from [`write_words_csv`] output.
pub fn read_words_csv<R: BufRead>(input: R) -> Result<Vec<VisualWord>, FeatureError> {
    let mut words = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        if idx == 0 || line.trim().is_empty() {
            continue;
        }
        let err = |m: &str| FeatureError::Csv { line: idx + 1, message: m.to_string() };
        let mut parts = line.split(',');
        let clip_start =
            parts.next().ok_or_else(|| err("missing clip_start"))?.parse().map_err(|_| err("bad clip_start"))?;
        let cell_index =
            parts.next().ok_or_else(|| err("missing cell"))?.parse().map_err(|_| err("bad cell"))?;
        let values: Result<Vec<f64>, _> = parts.map(|p| p.parse::<f64>()).collect();
        let values = values.map_err(|_| err("bad value"))?;
        if values.is_empty() {
            return Err(err("word has no values"));
        }
        words.push(VisualWord { values, cell_index, clip_start });
    }
    Ok(words)
}
