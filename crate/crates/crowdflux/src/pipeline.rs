//! End-to-end orchestration: train a group dictionary from a flow stream,
//! detect and localize anomalies clip by clip, and assemble evaluation
//! inputs from detection records and ground-truth masks.
//!
//! Detection is clip-pipelined: the words of a clip are classified
//! concurrently against one immutable group snapshot, records and verdicts
//! are emitted, and pool deposits plus any pending dictionary updates run at
//! the clip boundary, installing replacements by snapshot swap. A frame in an
//! abnormal clip inherits the clip's abnormal cells, which broadcast to a
//! pixel mask over the affected grid rectangles.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::advect::{advect_frame, AdvectError, GridSpec};
use crate::codebook::{
    Classification, CodebookError, GroupDictionary, Label, MaintenanceEvents, OnlineCodebook,
    TrainParams,
};
use crate::config::PipelineConfig;
use crate::eval::{EvalError, PixelFrame};
use crate::features::{extract_words, FeatureError, ForceFlowBuilder, VisualWord};
use crate::flow::{FlowError, FlowField};
use crate::force::{frame_forces, write_forces_csv, ForceError};
use crate::model::{Model, ModelError, ModelMeta};
use crate::pgm;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Advect(#[from] AdvectError),
    #[error(transparent)]
    Force(#[from] ForceError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Codebook(#[from] CodebookError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("model mismatch: {0}")]
    ModelMismatch(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("records csv parse error at line {line}: {message}")]
    RecordsCsv { line: usize, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Per-(clip, cell) detection outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRecord {
    pub clip_start: usize,
    pub cell_index: usize,
    /// Best reconstruction error across the scanned dictionaries.
    pub error: f64,
    pub abnormal: bool,
    pub dictionary_id: Option<u32>,
}

/// Per-frame decision with the cells driving it.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameVerdict {
    pub frame: usize,
    pub abnormal: bool,
    pub abnormal_cells: Vec<usize>,
}

/// Run one closure inside a worker pool of the requested size (0 = auto).
pub fn with_thread_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool construction")
        .install(f)
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub model: Model,
    pub clips: usize,
    /// The extracted training words, available for CSV dump and inspection.
    pub training_words: Vec<VisualWord>,
    /// Training words left uncovered (coverage warning when nonzero).
    pub uncovered: usize,
}

/// Train a group dictionary from a frame-ordered flow stream.
pub fn run_train<I>(flows: I, config: &PipelineConfig) -> Result<TrainRun, PipelineError>
where
    I: IntoIterator<Item = Result<FlowField, FlowError>>,
{
    let mut grid: Option<GridSpec> = None;
    let mut builder = ForceFlowBuilder::new(config.clip_len, config.effective_stride(), 0)?;
    let mut words: Vec<VisualWord> = Vec::new();
    let mut clips = 0usize;

    for (i, flow) in flows.into_iter().enumerate() {
        let flow = flow?;
        if grid.is_none() {
            grid = Some(config.resolve_grid(flow.width(), flow.height())?);
        }
        let grid = grid.as_ref().unwrap();
        let params = config.resolve_params(grid)?;
        let particles = advect_frame(&flow, grid, config.top_s, i)?;
        if let Some(matrix) = builder.push(frame_forces(&particles, &params))? {
            clips += 1;
            let mut clip_words = extract_words(&matrix);
            if config.normalize_words {
                clip_words = clip_words.iter().map(|w| w.l2_normalized()).collect();
            }
            words.extend(clip_words);
        }
    }

    let grid = grid.ok_or_else(|| PipelineError::Config("flow stream is empty".into()))?;
    let params = config.resolve_params(&grid)?;
    let train_params = TrainParams {
        lambda: config.lambda,
        atoms_per_dictionary: config.d,
        max_dictionaries: config.s_max,
        epochs: config.epochs,
        step: config.delta,
        seed: config.seed,
        coverage_target: 0.99,
    };
    let outcome = crate::codebook::train_group(&words, &train_params)?;
    Ok(TrainRun {
        model: Model {
            meta: ModelMeta {
                clip_len: config.clip_len,
                grid_b: grid.b,
                atoms_per_dictionary: config.d,
                max_dictionaries: config.s_max,
                epochs: config.epochs,
                top_s: config.top_s,
                n_pool: config.n_pool,
                normalize_words: config.normalize_words,
                params,
                step: config.delta,
                seed: config.seed,
            },
            group: outcome.group,
        },
        clips,
        training_words: words,
        uncovered: outcome.uncovered,
    })
}

/// Detection options independent of the trained model.
#[derive(Debug, Clone)]
pub struct DetectOptions {
    pub updates_enabled: bool,
    /// Absolute frame index of the first flow field in the stream.
    pub start_frame: usize,
    /// Clip stride override; defaults to the model's clip length.
    pub stride: Option<usize>,
    /// Pool capacity override; defaults to the model's `n_pool`.
    pub n_pool: Option<usize>,
    /// Local-update gradient passes.
    pub passes: usize,
    /// Optional CSV dump of per-frame particles (`frame,cell,px,py,vx,vy`).
    pub dump_particles: Option<PathBuf>,
    /// Optional CSV dump of per-frame forces (`frame,cell,fx,fy,fmag`).
    pub dump_forces: Option<PathBuf>,
}

impl Default for DetectOptions {
    fn default() -> Self {
        Self {
            updates_enabled: true,
            start_frame: 0,
            stride: None,
            n_pool: None,
            passes: 1,
            dump_particles: None,
            dump_forces: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DetectRun {
    pub records: Vec<DetectionRecord>,
    pub verdicts: Vec<FrameVerdict>,
    /// Per-frame anomaly score: max reconstruction error over covering clips.
    pub frame_scores: Vec<(usize, f64)>,
    pub grid: GridSpec,
    /// Group state after the run (equals the input group when updates are off).
    pub final_group: GroupDictionary,
    pub events: Vec<MaintenanceEvents>,
}

/// Detect anomalies over a flow stream with a trained model.
pub fn run_detect<I>(flows: I, model: &Model, opts: &DetectOptions) -> Result<DetectRun, PipelineError>
where
    I: IntoIterator<Item = Result<FlowField, FlowError>>,
{
    let meta = &model.meta;
    let stride = opts.stride.unwrap_or(meta.clip_len);
    let mut builder = ForceFlowBuilder::new(meta.clip_len, stride, opts.start_frame)?;
    let train_params = TrainParams {
        lambda: model.group.lambda,
        atoms_per_dictionary: meta.atoms_per_dictionary,
        max_dictionaries: meta.max_dictionaries,
        epochs: meta.epochs,
        step: meta.step,
        seed: meta.seed,
        coverage_target: 0.99,
    };
    let mut online = OnlineCodebook::new(
        model.group.clone(),
        opts.n_pool.unwrap_or(meta.n_pool),
        meta.step,
        opts.passes,
        train_params,
    );

    let mut particles_dump = match &opts.dump_particles {
        Some(path) => {
            let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
            writeln!(f, "{}", crate::advect::particles_csv_header())?;
            Some(f)
        }
        None => None,
    };
    let mut forces_dump = match &opts.dump_forces {
        Some(path) => {
            let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
            writeln!(f, "{}", crate::force::forces_csv_header())?;
            Some(f)
        }
        None => None,
    };

    let mut grid: Option<GridSpec> = None;
    let mut records: Vec<DetectionRecord> = Vec::new();
    let mut events: Vec<MaintenanceEvents> = Vec::new();
    let mut frame_cells: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    let mut frame_scores: BTreeMap<usize, f64> = BTreeMap::new();

    for (i, flow) in flows.into_iter().enumerate() {
        let flow = flow?;
        if grid.is_none() {
            grid = Some(crate::advect::make_grid(flow.width(), flow.height(), meta.grid_b)?);
        }
        let grid = grid.as_ref().unwrap();
        let frame_index = opts.start_frame + i;
        let particles = advect_frame(&flow, grid, meta.top_s, frame_index)?;
        if let Some(out) = particles_dump.as_mut() {
            crate::advect::write_particles_csv(out, &particles)?;
        }
        if let Some(out) = forces_dump.as_mut() {
            write_forces_csv(out, frame_index, &particles, &meta.params)?;
        }
        let forces = frame_forces(&particles, &meta.params);
        let matrix = match builder.push(forces)? {
            Some(m) => m,
            None => continue,
        };

        let mut words = extract_words(&matrix);
        if meta.normalize_words {
            words = words.iter().map(|w| w.l2_normalized()).collect();
        }
        let snapshot = online.snapshot();
        let classifications: Vec<Classification> =
            words.par_iter().map(|w| snapshot.classify(w)).collect();

        let mut abnormal_cells: BTreeSet<usize> = BTreeSet::new();
        let mut clip_score = 0.0f64;
        for (cell, cls) in classifications.iter().enumerate() {
            let (abnormal, dictionary_id) = match cls.label {
                Label::Normal { dictionary_id } => (false, Some(dictionary_id)),
                Label::Abnormal => (true, None),
            };
            if abnormal {
                abnormal_cells.insert(cell);
            }
            clip_score = clip_score.max(cls.error);
            records.push(DetectionRecord {
                clip_start: matrix.clip_start,
                cell_index: cell,
                error: cls.error,
                abnormal,
                dictionary_id,
            });
        }

        for frame in matrix.clip_start..matrix.clip_start + meta.clip_len {
            frame_cells.entry(frame).or_default().extend(abnormal_cells.iter().copied());
            let slot = frame_scores.entry(frame).or_insert(0.0);
            *slot = slot.max(clip_score);
        }

        if opts.updates_enabled {
            for (word, cls) in words.iter().zip(&classifications) {
                online.observe(word, cls);
            }
            events.push(online.maintain());
        }
    }

    let grid = grid.ok_or_else(|| PipelineError::Config("flow stream is empty".into()))?;
    let verdicts: Vec<FrameVerdict> = frame_cells
        .iter()
        .map(|(&frame, cells)| FrameVerdict {
            frame,
            abnormal: !cells.is_empty(),
            abnormal_cells: cells.iter().copied().collect(),
        })
        .collect();
    Ok(DetectRun {
        records,
        verdicts,
        frame_scores: frame_scores.into_iter().collect(),
        grid,
        final_group: (*online.snapshot()).clone(),
        events,
    })
}

/// Reject a model whose clip length or grid contradicts explicit config keys.
pub fn check_model_compat(model: &Model, config: &PipelineConfig) -> Result<(), PipelineError> {
    if config.explicit.contains("clip_len") && config.clip_len != model.meta.clip_len {
        return Err(PipelineError::ModelMismatch(format!(
            "model clip_len {} but config requests {}",
            model.meta.clip_len, config.clip_len
        )));
    }
    if config.explicit.contains("b") && config.b != model.meta.grid_b {
        return Err(PipelineError::ModelMismatch(format!(
            "model grid b {} but config requests {}",
            model.meta.grid_b, config.b
        )));
    }
    Ok(())
}

/// Rasterize abnormal cells into a full-frame binary mask.
pub fn render_mask(grid: &GridSpec, cells: &[usize]) -> Vec<u8> {
    let mut mask = vec![0u8; grid.frame_width * grid.frame_height];
    for &cell in cells {
        let r = grid.cell_rect(cell);
        for y in r.y0..r.y0 + r.h {
            let row = y * grid.frame_width;
            mask[row + r.x0..row + r.x0 + r.w].fill(255);
        }
    }
    mask
}

/// Write one `det_%06d.pgm` mask per verdict.
pub fn write_masks(dir: &Path, grid: &GridSpec, verdicts: &[FrameVerdict]) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir)?;
    for v in verdicts {
        let mask = render_mask(grid, &v.abnormal_cells);
        pgm::write_pgm(&pgm::det_path(dir, v.frame), grid.frame_width, grid.frame_height, &mask)?;
    }
    Ok(())
}

/// Records CSV header: the interchange format between detect and eval.
pub const RECORDS_HEADER: &str = "clip_start,cell,error,label,dict_id";

pub fn write_records_csv<W: Write>(out: &mut W, records: &[DetectionRecord]) -> std::io::Result<()> {
    writeln!(out, "{RECORDS_HEADER}")?;
    for r in records {
        let label = if r.abnormal { "abnormal" } else { "normal" };
        let dict = r.dictionary_id.map(|d| d.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{},{}", r.clip_start, r.cell_index, r.error, label, dict)?;
    }
    Ok(())
}

pub fn read_records_csv<R: BufRead>(input: R) -> Result<Vec<DetectionRecord>, PipelineError> {
    let mut records = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        if idx == 0 || line.trim().is_empty() {
            continue;
        }
        let err = |m: String| PipelineError::RecordsCsv { line: idx + 1, message: m };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(err(format!("expected 5 fields, got {}", fields.len())));
        }
        let clip_start = fields[0].parse().map_err(|_| err("bad clip_start".into()))?;
        let cell_index = fields[1].parse().map_err(|_| err("bad cell".into()))?;
        let error = fields[2].parse().map_err(|_| err("bad error".into()))?;
        let abnormal = match fields[3] {
            "abnormal" => true,
            "normal" => false,
            other => return Err(err(format!("bad label `{other}`"))),
        };
        let dictionary_id = if fields[4].is_empty() {
            None
        } else {
            Some(fields[4].parse().map_err(|_| err("bad dict_id".into()))?)
        };
        records.push(DetectionRecord { clip_start, cell_index, error, abnormal, dictionary_id });
    }
    Ok(records)
}

/// Infer the clip stride from record clip starts; `None` with fewer than two
/// distinct clips.
pub fn infer_clip_stride(records: &[DetectionRecord]) -> Option<usize> {
    let starts: BTreeSet<usize> = records.iter().map(|r| r.clip_start).collect();
    starts
        .iter()
        .zip(starts.iter().skip(1))
        .map(|(a, b)| b - a)
        .min()
}

/// Per-frame per-cell errors from records, broadcast over each clip's frames
/// and max-merged where clips overlap. Keys are absolute frame indices.
pub fn frame_cell_errors(
    records: &[DetectionRecord],
    clip_len: usize,
) -> BTreeMap<usize, Vec<(usize, f64)>> {
    let mut clips: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
    for r in records {
        clips.entry(r.clip_start).or_default().push((r.cell_index, r.error));
    }
    let mut frames: BTreeMap<usize, BTreeMap<usize, f64>> = BTreeMap::new();
    for (start, cells) in &clips {
        for frame in *start..*start + clip_len {
            let slot = frames.entry(frame).or_default();
            for &(cell, error) in cells {
                let e = slot.entry(cell).or_insert(0.0);
                *e = e.max(error);
            }
        }
    }
    frames
        .into_iter()
        .map(|(frame, cells)| (frame, cells.into_iter().collect()))
        .collect()
}

/// Assemble pixel-level evaluation inputs from records and truth masks.
///
/// `truth` maps an absolute frame index to its ground-truth mask; frames
/// without a mask are skipped.
pub fn assemble_pixel_frames(
    records: &[DetectionRecord],
    clip_len: usize,
    grid: &GridSpec,
    truth: &BTreeMap<usize, Vec<u8>>,
) -> Vec<PixelFrame> {
    let per_frame = frame_cell_errors(records, clip_len);
    let mut out = Vec::new();
    for (frame, cells) in per_frame {
        let Some(mask) = truth.get(&frame) else { continue };
        let mut cell_truth = vec![0usize; grid.cell_count()];
        let mut truth_pixels = 0usize;
        for y in 0..grid.frame_height {
            for x in 0..grid.frame_width {
                if mask[y * grid.frame_width + x] > 0 {
                    truth_pixels += 1;
                    cell_truth[grid.cell_of_pixel(x, y)] += 1;
                }
            }
        }
        out.push(PixelFrame {
            truth_pixels,
            cells: cells.into_iter().map(|(cell, e)| (e, cell_truth[cell])).collect(),
        });
    }
    out
}

/// Frame-level scores and truth labels for frames present in both inputs.
pub fn assemble_frame_scores(
    records: &[DetectionRecord],
    clip_len: usize,
    truth: &BTreeMap<usize, Vec<u8>>,
) -> (Vec<f64>, Vec<bool>) {
    let per_frame = frame_cell_errors(records, clip_len);
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (frame, cells) in per_frame {
        let Some(mask) = truth.get(&frame) else { continue };
        scores.push(cells.iter().map(|&(_, e)| e).fold(0.0f64, f64::max));
        labels.push(mask.iter().any(|&p| p > 0));
    }
    (scores, labels)
}

/// Load `gt_%06d.pgm` masks for the given frames; missing files are skipped.
pub fn load_truth_masks(
    dir: &Path,
    frames: impl Iterator<Item = usize>,
) -> Result<BTreeMap<usize, Vec<u8>>, PipelineError> {
    let mut out = BTreeMap::new();
    for frame in frames {
        let path = pgm::gt_path(dir, frame);
        if !path.exists() {
            continue;
        }
        let (_, _, mask) = pgm::read_pgm(&path)?;
        out.insert(frame, mask);
    }
    Ok(out)
}

/// Frame range covered by the records (end exclusive).
pub fn covered_frames(records: &[DetectionRecord], clip_len: usize) -> Option<(usize, usize)> {
    let min = records.iter().map(|r| r.clip_start).min()?;
    let max = records.iter().map(|r| r.clip_start).max()?;
    Some((min, max + clip_len))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{PipelineConfig, Profile};
    use crate::synth::{simulate_scenario, Preset, ScenarioConfig};

    fn small_config() -> PipelineConfig {
        let mut cfg = PipelineConfig::profile(Profile::Umn);
        for (k, v) in [
            ("b", "6"),
            ("clip_len", "10"),
            ("d", "4"),
            ("lambda", "0.05"),
            ("fps", "10"),
            ("seed", "5"),
        ] {
            cfg.set(k, v).unwrap();
        }
        cfg
    }

    fn scenario(preset: Preset, frames: usize, t_anomaly: usize, seed: u64) -> crate::synth::Scenario {
        simulate_scenario(
            &ScenarioConfig {
                preset,
                frames,
                agents: 12,
                width: 96,
                height: 96,
                t_anomaly,
                ..Default::default()
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn train_word_arithmetic() {
        let cfg = small_config();
        let sc = scenario(Preset::Normal, 61, usize::MAX, 3);
        let run = run_train(sc.flow_fields().map(Ok), &cfg).unwrap();
        // 60 flow frames, clip_len 10 -> 6 clips -> 6 * 36 words
        assert_eq!(run.clips, 6);
        assert_eq!(run.training_words.len(), 6 * 36);
        assert_eq!(run.model.meta.grid_b, 6);
        assert!(run.model.group.s() >= 1);
    }

    #[test]
    fn train_insufficient_frames() {
        let cfg = small_config();
        let sc = scenario(Preset::Normal, 9, usize::MAX, 3);
        // 8 flow frames < clip_len 10 -> no clips -> no words
        let err = run_train(sc.flow_fields().map(Ok), &cfg).unwrap_err();
        assert!(matches!(
            err,
            PipelineError::Codebook(CodebookError::InsufficientWords { .. })
        ));
    }

    #[test]
    fn train_deterministic_model_bytes() {
        let cfg = small_config();
        let sc = scenario(Preset::Normal, 41, usize::MAX, 8);
        let a = run_train(sc.flow_fields().map(Ok), &cfg).unwrap();
        let b = run_train(sc.flow_fields().map(Ok), &cfg).unwrap();
        assert_eq!(
            crate::model::encode_model(&a.model),
            crate::model::encode_model(&b.model)
        );
    }

    #[test]
    fn detect_emits_full_record_and_verdict_sets() {
        let cfg = small_config();
        let sc = scenario(Preset::Normal, 41, usize::MAX, 8);
        let model = run_train(sc.flow_fields().map(Ok), &cfg).unwrap().model;
        let run = run_detect(sc.flow_fields().map(Ok), &model, &DetectOptions::default()).unwrap();
        // 40 flow frames -> 4 clips of 10; 36 cells each
        assert_eq!(run.records.len(), 4 * 36);
        assert_eq!(run.verdicts.len(), 40);
        assert_eq!(run.frame_scores.len(), 40);
        for v in &run.verdicts {
            assert_eq!(v.abnormal, !v.abnormal_cells.is_empty());
        }
        // one record per (clip, cell)
        let keys: BTreeSet<(usize, usize)> =
            run.records.iter().map(|r| (r.clip_start, r.cell_index)).collect();
        assert_eq!(keys.len(), run.records.len());
    }

    #[test]
    fn frozen_model_without_updates() {
        let cfg = small_config();
        let sc = scenario(Preset::Panic, 81, 40, 13);
        let model = run_train(sc.flow_fields().take(30).map(Ok), &cfg).unwrap().model;
        let opts = DetectOptions { updates_enabled: false, ..Default::default() };
        let run = run_detect(sc.flow_fields().map(Ok), &model, &opts).unwrap();
        assert_eq!(run.final_group, model.group, "group must not change with updates off");
        assert!(run.events.is_empty());
    }

    #[test]
    fn panic_scenario_flags_panic_frames() {
        let mut cfg = small_config();
        cfg.set("lambda", "0.1").unwrap();
        let sc = scenario(Preset::Panic, 81, 40, 21);
        let model = run_train(sc.flow_fields().take(40).map(Ok), &cfg).unwrap().model;
        let run = run_detect(
            sc.flow_fields().skip(40).map(Ok),
            &model,
            &DetectOptions { start_frame: 40, updates_enabled: false, ..Default::default() },
        )
        .unwrap();
        // all detect frames are post-anomaly; the panic signal must dominate
        let abnormal_frames = run.verdicts.iter().filter(|v| v.abnormal).count();
        assert!(abnormal_frames > 0, "panic frames should be flagged");
    }

    #[test]
    fn start_frame_offsets_clip_starts() {
        let cfg = small_config();
        let sc = scenario(Preset::Normal, 41, usize::MAX, 8);
        let model = run_train(sc.flow_fields().map(Ok), &cfg).unwrap().model;
        let run = run_detect(
            sc.flow_fields().take(20).map(Ok),
            &model,
            &DetectOptions { start_frame: 100, updates_enabled: false, ..Default::default() },
        )
        .unwrap();
        let starts: BTreeSet<usize> = run.records.iter().map(|r| r.clip_start).collect();
        assert_eq!(starts, BTreeSet::from([100, 110]));
        assert_eq!(run.verdicts.first().unwrap().frame, 100);
        assert_eq!(run.verdicts.last().unwrap().frame, 119);
    }

    #[test]
    fn model_compat_checks_explicit_keys_only() {
        let cfg = small_config();
        let sc = scenario(Preset::Normal, 41, usize::MAX, 8);
        let model = run_train(sc.flow_fields().map(Ok), &cfg).unwrap().model;
        // profile defaults that disagree are fine when not explicit
        let fresh = PipelineConfig::profile(Profile::Ucsd);
        check_model_compat(&model, &fresh).unwrap();
        let mut wrong = PipelineConfig::profile(Profile::Umn);
        wrong.set("clip_len", "25").unwrap();
        assert!(matches!(
            check_model_compat(&model, &wrong),
            Err(PipelineError::ModelMismatch(_))
        ));
        let mut right = PipelineConfig::profile(Profile::Umn);
        right.set("clip_len", "10").unwrap();
        right.set("b", "6").unwrap();
        check_model_compat(&model, &right).unwrap();
    }

    #[test]
    fn records_csv_roundtrip() {
        let records = vec![
            DetectionRecord {
                clip_start: 0,
                cell_index: 3,
                error: 0.015625,
                abnormal: false,
                dictionary_id: Some(2),
            },
            DetectionRecord {
                clip_start: 30,
                cell_index: 7,
                error: 1.5,
                abnormal: true,
                dictionary_id: None,
            },
        ];
        let mut buf = Vec::new();
        write_records_csv(&mut buf, &records).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("clip_start,cell,error,label,dict_id\n"));
        let back = read_records_csv(std::io::BufReader::new(&buf[..])).unwrap();
        assert_eq!(back, records);
    }

    #[test]
    fn mask_rendering_covers_cell_rects() {
        let grid = crate::advect::make_grid(12, 12, 3).unwrap();
        let mask = render_mask(&grid, &[0, 8]);
        for y in 0..12 {
            for x in 0..12 {
                let expected = (x < 4 && y < 4) || (x >= 8 && y >= 8);
                assert_eq!(mask[y * 12 + x] == 255, expected, "pixel ({x},{y})");
            }
        }
    }

    #[test]
    fn frame_cell_errors_broadcast_and_merge() {
        let records = vec![
            DetectionRecord { clip_start: 0, cell_index: 0, error: 1.0, abnormal: true, dictionary_id: None },
            DetectionRecord { clip_start: 5, cell_index: 0, error: 2.0, abnormal: true, dictionary_id: None },
        ];
        let frames = frame_cell_errors(&records, 10);
        assert_eq!(frames.len(), 15);
        assert_eq!(frames[&3], vec![(0, 1.0)]);
        // overlap region takes the max
        assert_eq!(frames[&7], vec![(0, 2.0)]);
        assert_eq!(frames[&12], vec![(0, 2.0)]);
        assert_eq!(infer_clip_stride(&records), Some(5));
    }
}
