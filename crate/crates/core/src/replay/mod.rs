//! Trajectory replay with snippet sampling and use-count retirement.

pub mod buffer;
pub mod log;

pub use buffer::{ReplayBuffer, ReplayConfig, SharedReplay, Snippet, Trajectory, Transition};
pub use log::{EpisodeLogReader, EpisodeLogWriter, EpisodeRecord, EPISODE_LOG_VERSION};
