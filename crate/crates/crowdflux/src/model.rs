//! Versioned binary model container.
//!
//! Layout (all integers little-endian, all floats IEEE-754 f64 little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "CFXM"
//! 4       4     u32 version (currently 1)
//! 8       4     u32 clip_len (T)
//! 12      4     u32 grid_b
//! 16      4     u32 atoms_per_dictionary (d)
//! 20      4     u32 max_dictionaries (s_max)
//! 24      4     u32 epochs
//! 28      4     u32 top_s
//! 32      4     u32 n_pool
//! 36      1     u8  normalize_words (0/1)
//! 37      8     f64 k
//! 45      8     f64 tau0 (frames)
//! 53      8     f64 tau_max (frames)
//! 61      8     f64 tau_min (frames)
//! 69      8     f64 radius (pixels)
//! 77      8     f64 spatial_cutoff (0 = disabled)
//! 85      8     f64 force_cap (0 = disabled)
//! 93      8     f64 step (gradient step size)
//! 101     8     f64 lambda
//! 109     8     u64 seed
//! 117     4     u32 s (dictionary count)
//! then per dictionary, in scan order:
//!         4     u32 id
//!         4     u32 atom_count
//!         8*T*atom_count  f64 atoms, row-major (row = time index)
//! ```
//!
//! The layout is stable across releases; readers must reject unknown
//! versions. Identical training inputs produce bit-identical files.

use std::fs;
use std::path::Path;

use nalgebra::DVector;
use thiserror::Error;

use crate::codebook::{CodebookError, Dictionary, GroupDictionary};
use crate::force::InteractionParams;

pub const MODEL_MAGIC: &[u8; 4] = b"CFXM";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("bad model magic")]
    BadMagic,
    #[error("unsupported model version {0}")]
    BadVersion(u32),
    #[error("model file truncated at offset {0}")]
    Truncated(usize),
    #[error("model contains an invalid value: {0}")]
    Invalid(String),
    #[error("codebook error: {0}")]
    Codebook(#[from] CodebookError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Everything needed to reproduce and continue a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelMeta {
    pub clip_len: usize,
    pub grid_b: usize,
    pub atoms_per_dictionary: usize,
    pub max_dictionaries: usize,
    pub epochs: usize,
    pub top_s: usize,
    pub n_pool: usize,
    pub normalize_words: bool,
    pub params: InteractionParams,
    pub step: f64,
    pub seed: u64,
}

/// A trained group plus its configuration echo.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub meta: ModelMeta,
    pub group: GroupDictionary,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8], ModelError> {
        if self.pos + len > self.bytes.len() {
            return Err(ModelError::Truncated(self.pos));
        }
        let s = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, ModelError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8, ModelError> {
        Ok(self.take(1)?[0])
    }
}

pub fn encode_model(model: &Model) -> Vec<u8> {
    let meta = &model.meta;
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    for v in [
        meta.clip_len,
        meta.grid_b,
        meta.atoms_per_dictionary,
        meta.max_dictionaries,
        meta.epochs,
        meta.top_s,
        meta.n_pool,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.push(meta.normalize_words as u8);
    for v in [
        meta.params.k,
        meta.params.tau0,
        meta.params.tau_max,
        meta.params.tau_min,
        meta.params.radius,
        meta.params.spatial_cutoff.unwrap_or(0.0),
        meta.params.force_cap.unwrap_or(0.0),
        meta.step,
        model.group.lambda,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&meta.seed.to_le_bytes());
    out.extend_from_slice(&(model.group.s() as u32).to_le_bytes());
    for dict in model.group.dictionaries() {
        out.extend_from_slice(&dict.id().to_le_bytes());
        out.extend_from_slice(&(dict.atom_count() as u32).to_le_bytes());
        for row in 0..dict.word_len() {
            for col in 0..dict.atom_count() {
                out.extend_from_slice(&dict.atoms()[(row, col)].to_le_bytes());
            }
        }
    }
    out
}

pub fn decode_model(bytes: &[u8]) -> Result<Model, ModelError> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != MODEL_MAGIC {
        return Err(ModelError::BadMagic);
    }
    let version = c.u32()?;
    if version != MODEL_VERSION {
        return Err(ModelError::BadVersion(version));
    }
    let clip_len = c.u32()? as usize;
    let grid_b = c.u32()? as usize;
    let atoms_per_dictionary = c.u32()? as usize;
    let max_dictionaries = c.u32()? as usize;
    let epochs = c.u32()? as usize;
    let top_s = c.u32()? as usize;
    let n_pool = c.u32()? as usize;
    let normalize_words = c.u8()? != 0;
    let k = c.f64()?;
    let tau0 = c.f64()?;
    let tau_max = c.f64()?;
    let tau_min = c.f64()?;
    let radius = c.f64()?;
    let cutoff = c.f64()?;
    let force_cap = c.f64()?;
    let step = c.f64()?;
    let lambda = c.f64()?;
    let seed = c.u64()?;

    let mut params = InteractionParams::new(k, tau0, tau_max, tau_min, radius)
        .map_err(|e| ModelError::Invalid(e.to_string()))?;
    params.spatial_cutoff = if cutoff > 0.0 { Some(cutoff) } else { None };
    params.force_cap = if force_cap > 0.0 { Some(force_cap) } else { None };

    let s = c.u32()? as usize;
    let mut dictionaries = Vec::with_capacity(s);
    for _ in 0..s {
        let id = c.u32()?;
        let atom_count = c.u32()? as usize;
        if atom_count == 0 || atom_count > clip_len {
            return Err(ModelError::Invalid(format!("dictionary {id} has {atom_count} atoms")));
        }
        let mut columns = vec![DVector::zeros(clip_len); atom_count];
        for row in 0..clip_len {
            for column in columns.iter_mut() {
                column[row] = c.f64()?;
            }
        }
        dictionaries.push(Dictionary::from_unit_columns(id, &columns)?);
    }
    if c.pos != bytes.len() {
        return Err(ModelError::Invalid(format!("{} trailing bytes", bytes.len() - c.pos)));
    }

    Ok(Model {
        meta: ModelMeta {
            clip_len,
            grid_b,
            atoms_per_dictionary,
            max_dictionaries,
            epochs,
            top_s,
            n_pool,
            normalize_words,
            params,
            step,
            seed,
        },
        group: GroupDictionary::new(dictionaries, lambda)?,
    })
}

pub fn write_model_file(path: &Path, model: &Model) -> Result<(), ModelError> {
    fs::write(path, encode_model(model))?;
    Ok(())
}

pub fn read_model_file(path: &Path) -> Result<Model, ModelError> {
    decode_model(&fs::read(path)?)
}
