//! Minimal differentiable numeric core.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod layer;
pub mod network;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{finite_diff_check, finite_diff_check_input, finite_diff_tree, relative_error};
pub use layer::{Activation, LayerSpec};
pub use network::{Gradients, NetParams, Network, ParamTree, Tape};
pub use tensor::Tensor;
