//! Gated multi-task actor and critic.
//!
//! Each state group has its own encoder; a task's filter vector selects which
//! embeddings are summed into the merged representation seen by the shared
//! trunk and the task's own output head.

pub mod filter;
pub mod model;
pub mod network;
pub mod policy;

pub use filter::{FilterVector, StateGroup, TaskSpec};
pub use model::{check_tasks, Actor, Critic, GaussianBatch, Model, ParamStore, TaskTape};
pub use network::{
    gate_and_merge, EmbeddingGrads, Encoded, GatedNet, GatedParams, InputShapes, NetworkConfig,
    ObsBatch, Role,
};
pub use policy::{log_prob, sample_action, GaussianPolicyParams, VarianceBounds};

/// Default number of optimiser steps between target-network syncs.
pub const TARGET_SYNC_PERIOD: u64 = 1000;
