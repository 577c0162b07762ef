//! Hidden-parameter recurrent state space models.
//!
//! A HiP-RSSM couples a recurrent Gaussian state space model with a latent
//! task variable inferred from a set of recent transitions. All three belief
//! updates (task posterior, time update, observation update) are closed-form
//! Gaussian operations, so the whole filter is differentiable and trained by
//! backpropagation through time.
//!
//! Module map:
//!
//! - [`gaussian`]: diagonal and factorized Gaussian beliefs plus dense oracles.
//! - [`nn`]: tape-based reverse-mode differentiation, layers, Adam, clipping,
//!   finite-difference checks and checkpoints.
//! - [`context`]: context-set encoder and Bayesian aggregation into the task posterior.
//! - [`cell`]: task-conditioned time update and factorized Kalman observation update.
//! - [`model`]: encoder / cell / decoder wiring, losses, baselines.
//! - [`data`]: changing-dynamics simulators, normalization, windowing, dataset files.
//! - [`train`]: training loop, evaluation protocols, sliding inference, embedding export.
//! - [`config`] and [`cli`]: run configuration and the command-line front end.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod binio;
pub mod cell;
pub mod cli;
pub mod config;
pub mod context;
pub mod data;
pub mod error;
pub mod gaussian;
pub mod model;
pub mod nn;
pub mod train;

pub use error::{Error, Result};
