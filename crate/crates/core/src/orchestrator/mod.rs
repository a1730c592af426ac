//! Scheduling, rollouts, evaluation, experiments and reporting.

pub mod checkpoint;
pub mod config;
pub mod episode;
pub mod experiment;
pub mod schedule;

pub use checkpoint::{build_model, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{
    parse_config, parse_config_str, Arm, ExecutionMode, ExperimentConfig, TaskEntry, TaskLabel,
};
pub use episode::{evaluate, evaluate_from, run_episode, EpisodeShape, EvalEpisode};
pub use experiment::{run_experiment, run_seed, CurvePoint, RunPaths, SeedRun, CURVE_HEADER};
pub use schedule::{schedule_intention, segment_starts};
