//! Tabular Bayesian reinforcement learning with lossy model compression.
//!
//! Two agents are provided. [`agents::psrl_episode`] draws one model from the
//! Dirichlet posterior and plans in it. [`agents::vsrl_episode`] draws a small
//! codebook of posterior models, measures how far apart they are in terms of
//! Bellman updates, and passes the sampled model through the rate-distortion
//! optimal channel (computed with Blahut-Arimoto) before planning.
//!
//! Module map:
//!
//! * [`mdp`]: finite-horizon tabular MDPs, Bellman operator, exact planning.
//! * [`belief`]: conjugate posterior over transitions and rewards.
//! * [`distortion`]: squared sup-norm Bellman error between two models.
//! * [`rate_distortion`]: Blahut-Arimoto and information measures.
//! * [`agents`]: per-episode decisions and the agent loop.
//! * [`environments`]: chain and multi-resolution product environments.
//! * [`harness`]: experiment configs, CSV logs and summaries.

// `!(x > 0.0)` style checks are there to reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agents;
pub mod belief;
pub mod distortion;
pub mod environments;
mod error;
pub mod harness;
pub mod io;
pub mod mdp;
pub mod rate_distortion;
pub mod seed;

pub use error::{Error, Result};
