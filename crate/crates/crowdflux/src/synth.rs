//! Synthetic crowd scenarios: seeded agent trajectories, rasterized flow
//! fields, and ground-truth anomaly masks.
//!
//! Scenarios stand in for surveillance footage so training, detection and
//! evaluation run at desk scale. There is no collision-avoidance simulation;
//! walkers move on straight lines with small heading jitter, which gives
//! normal words realistic variance without modelling crowd dynamics.
//!
//! Walkers are organized like real sidewalk traffic: evenly spaced vertical
//! lanes, several same-speed agents per lane, each steering gently back to
//! its lane line (waypoint following) with a small mean-reverting heading
//! wobble. The geometry keeps normal pairs off collision courses entirely —
//! same-lane pairs hold constant gaps at zero relative velocity, and
//! adjacent lanes never close within the interaction radius — because the
//! time-to-collision force grows with the *inverse* of the closing speed,
//! so slow accidental encounters would otherwise be the loudest events in
//! the scene. Lane wobble still produces faint far-field interaction
//! flutter, which gives training words realistic variance.
//!
//! Presets:
//! - `normal`: waypoint walkers only, no anomaly.
//! - `panic`: at `t_anomaly` every agent scatters on a fresh random heading
//!   at 2-3x walking speed. Ground truth marks those frames frame-wide.
//! - `intruder`: at `t_anomaly` one fast agent crosses the scene left to
//!   right, perpendicular to the walking lane. Ground truth marks the disc
//!   of pixels it occupies while present.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use nalgebra::Vector2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::flow::{self, FlowField};
use crate::pgm;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scenario config: {0}")]
    InvalidConfig(String),
    #[error("frame index {index} out of range (flow frames: {max})")]
    IndexOutOfRange { index: usize, max: usize },
    #[error("flow error: {0}")]
    Flow(#[from] crate::flow::FlowError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Preset {
    #[default]
    Normal,
    Panic,
    Intruder,
}

impl std::str::FromStr for Preset {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "normal" => Ok(Preset::Normal),
            "panic" => Ok(Preset::Panic),
            "intruder" => Ok(Preset::Intruder),
            other => Err(SynthError::InvalidConfig(format!("unknown preset `{other}`"))),
        }
    }
}

/// Scenario parameters; see the module docs for the preset semantics.
#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub preset: Preset,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub agents: usize,
    /// Walking speed bound in pixels/frame.
    pub v_walk: f64,
    pub agent_radius: f64,
    /// First anomalous frame (panic onset or intruder entry).
    pub t_anomaly: usize,
    /// Intruder speed in pixels/frame; defaults to `2.5 * v_walk`.
    pub intruder_speed: Option<f64>,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            preset: Preset::Normal,
            width: 320,
            height: 240,
            frames: 200,
            agents: 30,
            v_walk: 1.2,
            agent_radius: 4.0,
            t_anomaly: 100,
            intruder_speed: None,
            seed: 7,
        }
    }
}

impl ScenarioConfig {
    /// Parse a `key=value` scenario config file body.
    pub fn parse(text: &str) -> Result<Self, SynthError> {
        let mut cfg = Self::default();
        for (key, value) in crate::config::parse_kv(text).map_err(SynthError::InvalidConfig)? {
            cfg.set(&key, &value)?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), SynthError> {
        let bad = |k: &str, v: &str| SynthError::InvalidConfig(format!("bad value `{v}` for `{k}`"));
        match key {
            "preset" => self.preset = value.parse()?,
            "width" => self.width = value.parse().map_err(|_| bad(key, value))?,
            "height" => self.height = value.parse().map_err(|_| bad(key, value))?,
            "frames" => self.frames = value.parse().map_err(|_| bad(key, value))?,
            "agents" => self.agents = value.parse().map_err(|_| bad(key, value))?,
            "v_walk" => self.v_walk = value.parse().map_err(|_| bad(key, value))?,
            "agent_radius" => self.agent_radius = value.parse().map_err(|_| bad(key, value))?,
            "t_anomaly" => self.t_anomaly = value.parse().map_err(|_| bad(key, value))?,
            "intruder_speed" => self.intruder_speed = Some(value.parse().map_err(|_| bad(key, value))?),
            "seed" => self.seed = value.parse().map_err(|_| bad(key, value))?,
            other => return Err(SynthError::InvalidConfig(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), SynthError> {
        if self.agents == 0 {
            return Err(SynthError::InvalidConfig("at least one agent required".into()));
        }
        if self.frames < 2 {
            return Err(SynthError::InvalidConfig("at least two frames required".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(SynthError::InvalidConfig("frame dimensions must be positive".into()));
        }
        if self.agent_radius <= 0.0 {
            return Err(SynthError::InvalidConfig("agent radius must be positive".into()));
        }
        if self.v_walk < 0.0 {
            return Err(SynthError::InvalidConfig("v_walk must be non-negative".into()));
        }
        if self.preset == Preset::Intruder {
            let s = self.effective_intruder_speed();
            if s <= 0.0 || s < 2.0 * self.v_walk {
                return Err(SynthError::InvalidConfig(format!(
                    "intruder speed {s} must be positive and at least 2*v_walk = {}",
                    2.0 * self.v_walk
                )));
            }
        }
        Ok(())
    }

    pub fn effective_intruder_speed(&self) -> f64 {
        self.intruder_speed.unwrap_or(2.5 * self.v_walk)
    }
}

/// One agent's state at one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub pos: Vector2<f64>,
    pub vel: Vector2<f64>,
    pub radius: f64,
    /// Inactive agents (a not-yet-entered or departed intruder) do not splat.
    pub active: bool,
}

/// Ground-truth anomaly region for one frame.
#[derive(Debug, Clone, PartialEq)]
pub enum GtRegion {
    Empty,
    FullFrame,
    Discs(Vec<(Vector2<f64>, f64)>),
}

/// A fully simulated scenario: per-frame agent states plus the anomaly schedule.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    /// `states[frame][agent]`.
    pub states: Vec<Vec<AgentState>>,
    pub gt: Vec<GtRegion>,
    pub seed: u64,
}

/// Common walking-lane direction: straight down the frame.
const LANE_HEADING: f64 = PI / 2.0;

/// Lane pitch as a multiple of the agent radius.
const LANE_SPACING_RADII: f64 = 4.0;

/// Lane-restoring steer, radians of heading per pixel of lateral offset.
const LANE_RESTORE: f64 = 0.05;

struct Walker {
    pos: Vector2<f64>,
    /// Lane line this walker steers back to.
    base_x: f64,
    wobble: f64,
    speed: f64,
    panic_heading: f64,
    panic_speed: f64,
}

impl Walker {
    fn heading(&self, panicking: bool) -> f64 {
        if panicking {
            self.panic_heading
        } else {
            let restore = ((self.base_x - self.pos.x) * LANE_RESTORE).clamp(-0.1, 0.1);
            LANE_HEADING + self.wobble + restore
        }
    }

    fn speed(&self, panicking: bool) -> f64 {
        if panicking {
            self.panic_speed
        } else {
            self.speed
        }
    }
}

/// Simulate deterministic trajectories for `(config, seed)`.
pub fn simulate_scenario(config: &ScenarioConfig, seed: u64) -> Result<Scenario, SynthError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (config.width as f64, config.height as f64);

    let lanes = ((w / (LANE_SPACING_RADII * config.agent_radius)).floor() as usize).max(1);
    let per_lane = config.agents.div_ceil(lanes);
    // evenly spaced within a lane: same speed keeps in-lane gaps constant, so
    // no pair ever hovers near the interaction radius
    let lane_phase: Vec<f64> = (0..lanes).map(|_| rng.random_range(0.0..1.0)).collect();
    let mut walkers: Vec<Walker> = (0..config.agents)
        .map(|i| {
            let lane = i % lanes;
            let slot = i / lanes;
            let base_x = (lane as f64 + 0.5) * w / lanes as f64;
            let y = ((slot as f64 + lane_phase[lane]) * h / per_lane as f64).rem_euclid(h);
            Walker {
                pos: Vector2::new(base_x, y),
                base_x,
                wobble: 0.0,
                speed: 0.85 * config.v_walk,
                panic_heading: rng.random_range(0.0..2.0 * PI),
                panic_speed: rng.random_range(2.0..=3.0) * config.v_walk,
            }
        })
        .collect();

    let intruder_y = rng.random_range(0.25..0.75) * h;
    let intruder_speed = config.effective_intruder_speed();
    let mut intruder_x = 0.0f64;

    let jitter = 1.0f64.to_radians();
    let mut states = Vec::with_capacity(config.frames);
    let mut gt = Vec::with_capacity(config.frames);

    for frame in 0..config.frames {
        let panicking = config.preset == Preset::Panic && frame >= config.t_anomaly;
        let mut frame_states: Vec<AgentState> = walkers
            .iter()
            .map(|a| {
                let (heading, speed) = (a.heading(panicking), a.speed(panicking));
                AgentState {
                    pos: a.pos,
                    vel: Vector2::new(heading.cos(), heading.sin()) * speed,
                    radius: config.agent_radius,
                    active: true,
                }
            })
            .collect();

        let mut intruder_here = None;
        if config.preset == Preset::Intruder {
            let active = frame >= config.t_anomaly && intruder_x <= w - 1.0;
            let state = AgentState {
                pos: Vector2::new(intruder_x, intruder_y),
                vel: Vector2::new(intruder_speed, 0.0),
                radius: config.agent_radius,
                active,
            };
            if active {
                intruder_here = Some((state.pos, state.radius));
            }
            frame_states.push(state);
            if frame >= config.t_anomaly {
                intruder_x += intruder_speed;
            }
        }

        gt.push(match (config.preset, intruder_here) {
            (Preset::Panic, _) if panicking => GtRegion::FullFrame,
            (Preset::Intruder, Some(disc)) => GtRegion::Discs(vec![disc]),
            _ => GtRegion::Empty,
        });
        states.push(frame_states);

        // advance walkers to the next frame; the wobble decays toward the
        // base heading so lanes stay coherent over long scenarios, while the
        // per-frame heading change stays within the jitter bound
        for a in walkers.iter_mut() {
            let j = rng.random_range(-jitter..=jitter);
            if panicking {
                a.panic_heading += j;
            } else {
                a.wobble = 0.9 * a.wobble + j;
            }
            let (heading, speed) = (a.heading(panicking), a.speed(panicking));
            let step = Vector2::new(heading.cos(), heading.sin()) * speed;
            a.pos.x = (a.pos.x + step.x).rem_euclid(w);
            a.pos.y = (a.pos.y + step.y).rem_euclid(h);
        }
    }

    Ok(Scenario {
        width: config.width,
        height: config.height,
        frames: config.frames,
        states,
        gt,
        seed,
    })
}

impl Scenario {
    /// Number of flow fields the scenario yields (one per frame pair).
    pub fn flow_frames(&self) -> usize {
        self.frames - 1
    }

    /// Rasterize the flow field for frame pair `(frame_index, frame_index + 1)`.
    ///
    /// Each active agent splats its velocity on the hard disc of pixels within
    /// its radius; contested pixels go to the nearest agent center (ties to
    /// the lower agent index). Background is zero.
    pub fn rasterize_flow(&self, frame_index: usize) -> Result<FlowField, SynthError> {
        if frame_index + 1 >= self.frames {
            return Err(SynthError::IndexOutOfRange { index: frame_index, max: self.flow_frames() });
        }
        let n = self.width * self.height;
        let mut u = vec![0.0f32; n];
        let mut v = vec![0.0f32; n];
        let mut best = vec![f64::INFINITY; n];

        for agent in &self.states[frame_index] {
            if !agent.active {
                continue;
            }
            let r = agent.radius;
            let x_lo = ((agent.pos.x - r).floor().max(0.0)) as usize;
            let x_hi = ((agent.pos.x + r).ceil().min((self.width - 1) as f64)) as usize;
            let y_lo = ((agent.pos.y - r).floor().max(0.0)) as usize;
            let y_hi = ((agent.pos.y + r).ceil().min((self.height - 1) as f64)) as usize;
            for y in y_lo..=y_hi {
                for x in x_lo..=x_hi {
                    let d = (Vector2::new(x as f64, y as f64) - agent.pos).norm();
                    let i = y * self.width + x;
                    if d <= r && d < best[i] {
                        best[i] = d;
                        u[i] = agent.vel.x as f32;
                        v[i] = agent.vel.y as f32;
                    }
                }
            }
        }
        Ok(FlowField::new(self.width, self.height, u, v).expect("rasterized flow is finite"))
    }

    /// Ground-truth mask for a frame: 0 = normal, 255 = abnormal.
    pub fn gt_mask(&self, frame: usize) -> Vec<u8> {
        let n = self.width * self.height;
        match &self.gt[frame] {
            GtRegion::Empty => vec![0u8; n],
            GtRegion::FullFrame => vec![255u8; n],
            GtRegion::Discs(discs) => {
                let mut mask = vec![0u8; n];
                for (center, r) in discs {
                    let x_lo = ((center.x - r).floor().max(0.0)) as usize;
                    let x_hi = ((center.x + r).ceil().min((self.width - 1) as f64)) as usize;
                    let y_lo = ((center.y - r).floor().max(0.0)) as usize;
                    let y_hi = ((center.y + r).ceil().min((self.height - 1) as f64)) as usize;
                    for y in y_lo..=y_hi {
                        for x in x_lo..=x_hi {
                            if (Vector2::new(x as f64, y as f64) - center).norm() <= *r {
                                mask[y * self.width + x] = 255;
                            }
                        }
                    }
                }
                mask
            }
        }
    }

    /// Iterator over all rasterized flow fields, in frame order.
    pub fn flow_fields(&self) -> impl Iterator<Item = FlowField> + '_ {
        (0..self.flow_frames()).map(move |i| self.rasterize_flow(i).expect("index in range"))
    }

    /// Write `frame_%06d.flo` flow files and `gt_%06d.pgm` masks into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<(), SynthError> {
        fs::create_dir_all(dir)?;
        for i in 0..self.flow_frames() {
            flow::write_flo_file(&flow::flo_path(dir, i), &self.rasterize_flow(i)?)?;
        }
        for f in 0..self.frames {
            pgm::write_pgm(&pgm::gt_path(dir, f), self.width, self.height, &self.gt_mask(f))?;
        }
        Ok(())
    }

    /// Mean pairwise closing speed over active agents at one frame.
    ///
    /// Closing speed of a pair is `max(0, -(dv . w)/|w|)`; the panic presets
    /// must raise this strictly after `t_anomaly`.
    pub fn mean_closing_speed(&self, frame: usize) -> f64 {
        let agents: Vec<&AgentState> =
            self.states[frame].iter().filter(|a| a.active).collect();
        let mut total = 0.0;
        let mut pairs = 0usize;
        for i in 0..agents.len() {
            for j in (i + 1)..agents.len() {
                let w = agents[j].pos - agents[i].pos;
                let dv = agents[j].vel - agents[i].vel;
                let dist = w.norm();
                if dist > 1e-9 {
                    total += (-(dv.dot(&w)) / dist).max(0.0);
                    pairs += 1;
                }
            }
        }
        if pairs == 0 {
            0.0
        } else {
            total / pairs as f64
        }
    }
}
