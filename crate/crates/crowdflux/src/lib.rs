//! Crowd anomaly detection from dense optical flow.
//!
//! The pipeline turns per-frame flow fields into time-to-collision repulsive
//! force features over a fixed grid, learns a group of small visual
//! dictionaries on normal footage, and detects and localizes abnormal events
//! by sparse reconstruction error, with fully online dictionary maintenance.
//!
//! Stage by stage:
//!
//! 1. [`flow`] ingests `.flo` fields (or [`synth`] generates them).
//! 2. [`advect`] selects one characteristic particle per grid cell per frame.
//! 3. [`force`] turns particle pairs into anticipatory repulsive forces.
//! 4. [`features`] windows per-cell force magnitudes into visual words.
//! 5. [`codebook`] trains, queries and maintains the group dictionary.
//! 6. [`pipeline`] orchestrates train/detect end to end; [`eval`] scores
//!    detections against ground truth (ROC, AUC, EER, RD).

pub mod advect;
pub mod cli;
pub mod codebook;
pub mod config;
pub mod eval;
pub mod features;
pub mod flow;
pub mod force;
pub mod model;
pub mod pgm;
pub mod pipeline;
pub mod synth;

pub use advect::{advect_frame, make_grid, CharacteristicParticle, GridSpec};
pub use codebook::{
    least_squares_code, train_group, Classification, Dictionary, GroupDictionary, Label,
    OnlineCodebook, TrainParams, WordPool,
};
pub use config::{PipelineConfig, Profile};
pub use eval::{frame_level_eval, pixel_level_eval, EvalReport};
pub use features::{build_force_flow, extract_words, ForceFlowMatrix, VisualWord};
pub use flow::{read_flo, write_flo, FlowField, SentinelPolicy};
pub use force::{
    frame_forces, interaction_energy, net_force, repulsive_force, time_to_collision,
    InteractionParams,
};
pub use model::{read_model_file, write_model_file, Model, ModelMeta};
pub use pipeline::{
    run_detect, run_train, DetectOptions, DetectRun, DetectionRecord, FrameVerdict, TrainRun,
};
pub use synth::{simulate_scenario, Scenario, ScenarioConfig};
