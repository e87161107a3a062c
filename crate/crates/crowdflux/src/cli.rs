//! Command-line interface.
//!
//! Subcommands: `synth` writes flow and ground-truth directories from a
//! scenario config, `train` fits and persists a model, `detect` writes a
//! records CSV plus per-frame masks, `eval` scores records against truth
//! masks, and `report` merges eval CSVs into one table.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::config::{threads_from_env, PipelineConfig, Profile};
use crate::eval::{frame_level_eval, pixel_level_eval, read_eval_csv, write_eval_csv, EvalReport};
use crate::features::write_words_csv;
use crate::flow::FloDirSource;
use crate::model::{read_model_file, write_model_file};
use crate::pgm;
use crate::pipeline::{
    assemble_frame_scores, assemble_pixel_frames, check_model_compat, covered_frames,
    infer_clip_stride, load_truth_masks, read_records_csv, run_detect, run_train,
    with_thread_pool, write_masks, write_records_csv, DetectOptions,
};
use crate::synth::{simulate_scenario, ScenarioConfig};

#[derive(Parser)]
#[command(name = "crowdflux", version, about = "Crowd anomaly detection from optical flow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scenario: flow fields plus ground-truth masks.
    Synth(SynthArgs),
    /// Train a group dictionary from normal footage.
    Train(TrainArgs),
    /// Detect anomalies with a trained model.
    Detect(DetectArgs),
    /// Score detection records against ground truth.
    Eval(EvalArgs),
    /// Merge eval CSVs into one summary table.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Scenario config file (key=value).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for frame_%06d.flo and gt_%06d.pgm files.
    #[arg(long)]
    out: PathBuf,
    /// Override the config file's seed.
    #[arg(long)]
    seed: Option<u64>,
}

/// Pipeline parameters; every flag mirrors a config-file key.
#[derive(Args)]
struct ConfigArgs {
    /// Parameter profile: umn, ucsd or web.
    #[arg(long, default_value = "umn")]
    profile: String,
    /// key=value config file applied over the profile.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    b: Option<usize>,
    #[arg(long)]
    cell_px: Option<usize>,
    #[arg(long)]
    clip_len: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    top_s: Option<usize>,
    #[arg(long)]
    k: Option<f64>,
    #[arg(long)]
    tau0: Option<f64>,
    #[arg(long)]
    fps: Option<f64>,
    #[arg(long)]
    tau_max: Option<f64>,
    #[arg(long)]
    tau_min: Option<f64>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    spatial_cutoff: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    s_max: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    n_pool: Option<usize>,
    #[arg(long)]
    normalize_words: Option<bool>,
    #[arg(long)]
    seed: Option<u64>,
    /// Sentinel flow policy: zero or reject.
    #[arg(long)]
    sentinel: Option<String>,
    /// Worker parallelism cap (0 = auto); CROWDFLUX_THREADS supplies a default.
    #[arg(long)]
    threads: Option<usize>,
}

impl ConfigArgs {
    fn build(&self) -> Result<PipelineConfig, CliError> {
        let profile: Profile = self.profile.parse().map_err(CliError::Usage)?;
        let mut cfg = PipelineConfig::profile(profile);
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Data(format!("reading {}: {e}", path.display())))?;
            cfg.apply_file(&text).map_err(CliError::Usage)?;
        }
        let mut set = |key: &str, value: Option<String>| -> Result<(), CliError> {
            if let Some(v) = value {
                cfg.set(key, &v).map_err(CliError::Usage)?;
            }
            Ok(())
        };
        set("b", self.b.map(|v| v.to_string()))?;
        set("cell_px", self.cell_px.map(|v| v.to_string()))?;
        set("clip_len", self.clip_len.map(|v| v.to_string()))?;
        set("stride", self.stride.map(|v| v.to_string()))?;
        set("top_s", self.top_s.map(|v| v.to_string()))?;
        set("k", self.k.map(|v| v.to_string()))?;
        set("tau0", self.tau0.map(|v| v.to_string()))?;
        set("fps", self.fps.map(|v| v.to_string()))?;
        set("tau_max", self.tau_max.map(|v| v.to_string()))?;
        set("tau_min", self.tau_min.map(|v| v.to_string()))?;
        set("radius", self.radius.map(|v| v.to_string()))?;
        set("spatial_cutoff", self.spatial_cutoff.map(|v| v.to_string()))?;
        set("lambda", self.lambda.map(|v| v.to_string()))?;
        set("d", self.d.map(|v| v.to_string()))?;
        set("s_max", self.s_max.map(|v| v.to_string()))?;
        set("epochs", self.epochs.map(|v| v.to_string()))?;
        set("delta", self.delta.map(|v| v.to_string()))?;
        set("n_pool", self.n_pool.map(|v| v.to_string()))?;
        set("normalize_words", self.normalize_words.map(|v| v.to_string()))?;
        set("seed", self.seed.map(|v| v.to_string()))?;
        set("sentinel", self.sentinel.clone())?;
        set("threads", self.threads.map(|v| v.to_string()))?;
        if !cfg.explicit.contains("threads") {
            if let Some(t) = threads_from_env() {
                cfg.threads = t;
            }
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Directory of frame_%06d.flo files.
    #[arg(long)]
    flows: PathBuf,
    /// First flow frame to read.
    #[arg(long, default_value_t = 0)]
    start: usize,
    /// Number of flow frames to read (default: until the first missing file).
    #[arg(long)]
    frames: Option<usize>,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
    /// Optional CSV dump of the training words.
    #[arg(long)]
    dump_words: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct DetectArgs {
    /// Directory of frame_%06d.flo files.
    #[arg(long)]
    flows: PathBuf,
    /// Trained model file.
    #[arg(long)]
    model: PathBuf,
    /// Output directory (records.csv plus masks/det_%06d.pgm).
    #[arg(long)]
    out: PathBuf,
    /// First flow frame to read; also offsets clip starts.
    #[arg(long, default_value_t = 0)]
    start: usize,
    /// Number of flow frames to read (default: until the first missing file).
    #[arg(long)]
    frames: Option<usize>,
    /// Freeze the model: no pool deposits, no dictionary updates.
    #[arg(long)]
    no_update: bool,
    /// Optional CSV dump of per-frame particles.
    #[arg(long)]
    dump_particles: Option<PathBuf>,
    /// Optional CSV dump of per-frame forces.
    #[arg(long)]
    dump_forces: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// Records CSV produced by detect.
    #[arg(long)]
    records: PathBuf,
    /// Directory of gt_%06d.pgm truth masks.
    #[arg(long)]
    truth: PathBuf,
    /// Evaluation mode: frame or pixel.
    #[arg(long, default_value = "frame")]
    mode: String,
    /// Output eval CSV.
    #[arg(long)]
    out: PathBuf,
    /// Pixel-level coverage fraction (strictly-more-than rule).
    #[arg(long, default_value_t = 0.40)]
    coverage: f64,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct ReportArgs {
    /// Eval CSVs to merge.
    #[arg(required = true)]
    evals: Vec<PathBuf>,
    /// Output file (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) => m,
        }
    }
}

impl<E: std::error::Error> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Data(e.to_string())
    }
}

/// Parse argv and run; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Detect(args) => cmd_detect(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.code()
        }
    }
}

fn cmd_synth(args: SynthArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| CliError::Data(format!("reading {}: {e}", args.config.display())))?;
    let config = ScenarioConfig::parse(&text).map_err(|e| CliError::Usage(e.to_string()))?;
    let seed = args.seed.unwrap_or(config.seed);
    let scenario = simulate_scenario(&config, seed)?;
    scenario.write_to_dir(&args.out)?;
    println!(
        "wrote {} flow fields and {} masks to {}",
        scenario.flow_frames(),
        scenario.frames,
        args.out.display()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let cfg = args.config.build()?;
    let source = FloDirSource::new(&args.flows, args.start, args.frames, cfg.sentinel);
    let run = with_thread_pool(cfg.threads, || run_train(source, &cfg))?;
    write_model_file(&args.out, &run.model)?;
    if let Some(path) = &args.dump_words {
        let mut out = BufWriter::new(fs::File::create(path)?);
        write_words_csv(&mut out, &run.training_words)?;
    }
    println!(
        "trained {} dictionaries from {} words ({} clips); model: {}",
        run.model.group.s(),
        run.training_words.len(),
        run.clips,
        args.out.display()
    );
    if run.uncovered > 0 {
        eprintln!("warning: {} training words left uncovered at the dictionary cap", run.uncovered);
    }
    Ok(())
}

fn cmd_detect(args: DetectArgs) -> Result<(), CliError> {
    let cfg = args.config.build()?;
    let model = read_model_file(&args.model)?;
    check_model_compat(&model, &cfg)?;
    let opts = DetectOptions {
        updates_enabled: !args.no_update,
        start_frame: args.start,
        stride: cfg.stride,
        n_pool: cfg.explicit.contains("n_pool").then_some(cfg.n_pool),
        passes: 1,
        dump_particles: args.dump_particles.clone(),
        dump_forces: args.dump_forces.clone(),
    };
    let source = FloDirSource::new(&args.flows, args.start, args.frames, cfg.sentinel);
    let run = with_thread_pool(cfg.threads, || run_detect(source, &model, &opts))?;

    fs::create_dir_all(&args.out)?;
    let mut records_out = BufWriter::new(fs::File::create(args.out.join("records.csv"))?);
    write_records_csv(&mut records_out, &run.records)?;
    records_out.flush().map_err(|e| CliError::Data(e.to_string()))?;
    write_masks(&args.out.join("masks"), &run.grid, &run.verdicts)?;

    let abnormal_frames = run.verdicts.iter().filter(|v| v.abnormal).count();
    let globals = run.events.iter().filter(|e| e.global).count();
    let locals: usize = run.events.iter().map(|e| e.local.len()).sum();
    println!(
        "detected {} abnormal of {} frames; {} records; updates: {} local, {} global",
        abnormal_frames,
        run.verdicts.len(),
        run.records.len(),
        locals,
        globals
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let cfg = args.config.build()?;
    let records = read_records_csv(BufReader::new(fs::File::open(&args.records)?))?;
    if records.is_empty() {
        return Err(CliError::Data("records file contains no records".into()));
    }
    let clip_len = if cfg.explicit.contains("clip_len") {
        cfg.clip_len
    } else {
        infer_clip_stride(&records).unwrap_or(cfg.clip_len)
    };
    let (first, end) = covered_frames(&records, clip_len).expect("records are nonempty");
    let truth = load_truth_masks(&args.truth, first..end)?;
    if truth.is_empty() {
        return Err(CliError::Data(format!(
            "no gt_%06d.pgm masks for frames {first}..{end} in {}",
            args.truth.display()
        )));
    }

    let report = match args.mode.as_str() {
        "frame" => {
            let (scores, labels) = assemble_frame_scores(&records, clip_len, &truth);
            frame_level_eval(&scores, &labels)?
        }
        "pixel" => {
            let (w, h, _) = pgm::read_pgm(&pgm::gt_path(&args.truth, *truth.keys().next().unwrap()))?;
            let grid = cfg.resolve_grid(w, h)?;
            let frames = assemble_pixel_frames(&records, clip_len, &grid, &truth);
            pixel_level_eval(&frames, args.coverage)?
        }
        other => return Err(CliError::Usage(format!("unknown eval mode `{other}`"))),
    };

    let mut out = BufWriter::new(fs::File::create(&args.out)?);
    write_eval_csv(&mut out, &report)?;
    println!("{}", summary_line(&args.out, &report));
    Ok(())
}

fn summary_line(name: &Path, report: &EvalReport) -> String {
    format!(
        "{}: auc={:.4} eer={:.4} rd={}",
        name.display(),
        report.auc,
        report.eer,
        report.rd.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())
    )
}

fn cmd_report(args: ReportArgs) -> Result<(), CliError> {
    let mut lines = vec![format!("{:<40} {:>8} {:>8} {:>8}", "eval", "auc", "eer", "rd")];
    for path in &args.evals {
        let report = read_eval_csv(BufReader::new(fs::File::open(path)?))?;
        lines.push(format!(
            "{:<40} {:>8.4} {:>8.4} {:>8}",
            path.display(),
            report.auc,
            report.eer,
            report.rd.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())
        ));
    }
    let table = lines.join("\n");
    match &args.out {
        Some(path) => fs::write(path, format!("{table}\n"))?,
        None => println!("{table}"),
    }
    Ok(())
}
