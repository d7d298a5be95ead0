//! Desk-scale laboratory for group-relative policy optimization over
//! decomposed state-action samples.
//!
//! The pipeline: seeded sparse-reward environments ([`env`]) produce rollout
//! groups ([`rollout`]) under a frozen policy snapshot ([`policy`]); the
//! [`grow`] module decomposes trajectories into discounted state-action
//! samples, normalizes group-relative advantages, and evaluates the clipped
//! surrogate objective and its analytic gradient; [`baselines`] provides
//! trajectory-level group-relative advantages and a PPO critic with
//! generalized advantage estimation over the same machinery; [`trainer`]
//! runs the update loop and evaluation; [`verify`] runs the numerical
//! invariant suite.

pub mod baselines;
pub mod checkpoint;
pub mod env;
pub mod error;
pub mod grow;
pub mod mlp;
pub mod policy;
pub mod rng;
pub mod rollout;
pub mod trainer;
pub mod verify;

pub use error::{GrowError, Result};
