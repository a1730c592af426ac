//! Multi-task off-policy actor-critic learning where each task can observe a
//! different subset of the state (proprioception, object features, pixels),
//! together with a planar ball-in-cup environment to train it on.
//!
//! The crate is organised bottom-up:
//!
//! - [`nn`]: a small reverse-mode numeric core (dense, conv2d, layer norm,
//!   activations, Adam, finite-difference checking, checkpoints).
//! - [`gated`]: per-state-group encoders, binary gating, summed merge and
//!   per-task heads for actor and critic; the diagonal Gaussian policy head.
//! - [`replay`]: trajectory storage with snippet sampling and max-use eviction.
//! - [`learner`]: retrace targets, the summed multi-task critic loss and the
//!   entropy-regularised reparameterised policy objective.
//! - [`env`]: the tethered ball, the cup, the reward family, observations and
//!   a tiny rasteriser.
//! - [`orchestrator`]: uniform intention scheduling, the actor loop,
//!   evaluation, experiment configs and CSV reporting.
//! - [`oracle`]: independent reference checks of gradients, retrace, gating,
//!   rewards, the action filter and the physics.

pub mod env;
pub mod error;
pub mod gated;
pub mod learner;
pub mod nn;
pub mod oracle;
pub mod orchestrator;
pub mod replay;

pub use error::{Error, Result};
