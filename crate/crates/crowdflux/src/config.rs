//! Pipeline configuration: named per-scene profiles, `key=value` config
//! files, and CLI overrides. Every file key has a CLI flag of the same name.

use std::collections::BTreeSet;

use crate::advect::{make_grid, AdvectError, GridSpec};
use crate::flow::SentinelPolicy;
use crate::force::{ForceError, InteractionParams, DEFAULT_TAU_MIN};

/// Worker-parallelism cap; 0 means automatic.
pub const THREADS_ENV: &str = "CROWDFLUX_THREADS";

/// Parse `key = value` lines; `#` lines are comments.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected `key = value`, got `{line}`", i + 1))?;
        out.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(out)
}

/// Named per-scene default sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Profile {
    #[default]
    Umn,
    Ucsd,
    Web,
}

impl std::str::FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "umn" => Ok(Profile::Umn),
            "ucsd" => Ok(Profile::Ucsd),
            "web" => Ok(Profile::Web),
            other => Err(format!("unknown profile `{other}` (expected umn, ucsd or web)")),
        }
    }
}

/// Full pipeline configuration prior to grid resolution.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    /// Cells per side of the square grid.
    pub b: usize,
    /// Alternative grid reading: square cells of roughly this pixel size;
    /// when set, `b = min(width, height) / cell_px`.
    pub cell_px: Option<usize>,
    /// Frames per clip (T).
    pub clip_len: usize,
    /// Clip window stride; defaults to `clip_len` (non-overlapping).
    pub stride: Option<usize>,
    /// Fastest-pixel count averaged into each characteristic particle.
    pub top_s: usize,
    pub k: f64,
    /// Intrinsic interaction range in seconds; converted to frames via fps.
    pub tau0: f64,
    pub fps: f64,
    /// Screening cutoff in frames; defaults to three times tau0 in frames.
    pub tau_max: Option<f64>,
    pub tau_min: f64,
    /// Combined particle disc radius in pixels; defaults to half the smaller
    /// cell dimension.
    pub radius: Option<f64>,
    pub spatial_cutoff: Option<f64>,
    /// Per-pair force magnitude bound at aggregation; unbounded when unset.
    pub force_cap: Option<f64>,
    pub lambda: f64,
    /// Atoms per dictionary.
    pub d: usize,
    pub s_max: usize,
    pub epochs: usize,
    /// Gradient step size for dictionary updates.
    pub delta: f64,
    pub n_pool: usize,
    pub normalize_words: bool,
    pub seed: u64,
    pub sentinel: SentinelPolicy,
    /// Worker parallelism cap; 0 = automatic.
    pub threads: usize,
    /// Keys explicitly set by a config file or CLI flag.
    pub explicit: BTreeSet<String>,
}

impl PipelineConfig {
    pub fn profile(profile: Profile) -> Self {
        let base = Self {
            b: 20,
            cell_px: None,
            clip_len: 30,
            stride: None,
            top_s: 5,
            k: 1.5,
            tau0: 3.0,
            fps: 30.0,
            tau_max: None,
            tau_min: DEFAULT_TAU_MIN,
            radius: None,
            spatial_cutoff: None,
            force_cap: None,
            lambda: 0.08,
            d: 10,
            s_max: 256,
            epochs: 5,
            delta: 1e-4,
            n_pool: 4000,
            normalize_words: false,
            seed: 0,
            sentinel: SentinelPolicy::Zero,
            threads: 0,
            explicit: BTreeSet::new(),
        };
        match profile {
            Profile::Umn => base,
            Profile::Ucsd => Self {
                b: 10,
                lambda: 0.06,
                tau0: 2.0,
                clip_len: 20,
                n_pool: 2000,
                ..base
            },
            Profile::Web => Self {
                b: 20,
                lambda: 0.04,
                tau0: 2.0,
                clip_len: 20,
                n_pool: 2000,
                ..base
            },
        }
    }

    /// Apply one `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
            value.parse().map_err(|_| format!("bad value `{value}` for `{key}`"))
        }
        match key {
            "b" => self.b = num(key, value)?,
            "cell_px" => self.cell_px = Some(num(key, value)?),
            "clip_len" => self.clip_len = num(key, value)?,
            "stride" => self.stride = Some(num(key, value)?),
            "top_s" => self.top_s = num(key, value)?,
            "k" => self.k = num(key, value)?,
            "tau0" => self.tau0 = num(key, value)?,
            "fps" => self.fps = num(key, value)?,
            "tau_max" => self.tau_max = Some(num(key, value)?),
            "tau_min" => self.tau_min = num(key, value)?,
            "radius" => self.radius = Some(num(key, value)?),
            "spatial_cutoff" => self.spatial_cutoff = Some(num(key, value)?),
            "force_cap" => self.force_cap = Some(num(key, value)?),
            "lambda" => self.lambda = num(key, value)?,
            "d" => self.d = num(key, value)?,
            "s_max" => self.s_max = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "delta" => self.delta = num(key, value)?,
            "n_pool" => self.n_pool = num(key, value)?,
            "normalize_words" => self.normalize_words = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "sentinel" => {
                self.sentinel = match value {
                    "zero" => SentinelPolicy::Zero,
                    "reject" => SentinelPolicy::Reject,
                    other => return Err(format!("bad sentinel policy `{other}`")),
                }
            }
            "threads" => self.threads = num(key, value)?,
            other => return Err(format!("unknown config key `{other}`")),
        }
        self.explicit.insert(key.to_string());
        Ok(())
    }

    /// Apply a whole config file body.
    pub fn apply_file(&mut self, text: &str) -> Result<(), String> {
        for (key, value) in parse_kv(text)? {
            self.set(&key, &value)?;
        }
        Ok(())
    }

    /// Resolve the grid for a frame size, honoring the `cell_px` reading.
    pub fn resolve_grid(&self, width: usize, height: usize) -> Result<GridSpec, AdvectError> {
        let b = match self.cell_px {
            Some(px) if px > 0 => (width.min(height) / px).max(1),
            _ => self.b,
        };
        make_grid(width, height, b)
    }

    /// Resolve interaction parameters against a grid.
    pub fn resolve_params(&self, grid: &GridSpec) -> Result<InteractionParams, ForceError> {
        let radius = self
            .radius
            .unwrap_or_else(|| (grid.cell_width.min(grid.cell_height) as f64) / 2.0);
        let mut params =
            InteractionParams::from_seconds(self.k, self.tau0, self.fps, self.tau_max, self.tau_min, radius)?;
        params.spatial_cutoff = self.spatial_cutoff;
        params.force_cap = self.force_cap;
        Ok(params)
    }

    pub fn effective_stride(&self) -> usize {
        self.stride.unwrap_or(self.clip_len)
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::profile(Profile::Umn)
    }
}

/// Read the worker cap from `CROWDFLUX_THREADS`; unset or invalid means none.
pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV).ok().and_then(|v| v.parse().ok())
}
