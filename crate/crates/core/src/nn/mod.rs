//! Minimal differentiable-network core.
//!
//! A [`Tape`] records a batched forward pass over 2-D tensors; parameters
//! live in a [`ParamStore`] and receive gradients from [`Tape::backward`].
//! [`Adam`] and [`clip_gradients`] implement the update step, and
//! [`check_gradients`] compares tape gradients to central differences.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tape;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointManifest};
pub use gradcheck::{check_gradients, finite_difference, GradCheck};
pub use layers::{glorot, GaussianHead, Linear, Mlp};
pub use optim::{clip_gradients, global_grad_norm, Adam, DEFAULT_CLIP_NORM};
pub use params::{Param, ParamId, ParamStore};
pub use tape::{elu_plus_one, Activation, Gradients, Tape, Tensor, Var};
