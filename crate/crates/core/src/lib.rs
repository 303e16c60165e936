//! Force-constrained action selection for simulated robot-assisted dressing.
//!
//! The crate is organized bottom-up:
//!
//! * [`geometry`]: capsule arm model, signed distances and dressed distance.
//! * [`clothsim`]: mass-spring sleeve with penalty contact against the arm.
//! * [`env`]: dressing episodes, observations, reward and evaluation metrics.
//! * [`neural`]: dense layers, a max-pooled point-set encoder, backprop and Adam.
//! * [`policy`]: Gaussian vision policy and the cross-entropy-method trainer.
//! * [`force`]: force history, force dynamics model, data collection.
//! * [`controllers`]: the constrained random-shooting controller, baselines, rollouts.
//! * [`training`]: CEM policy training and force-aware fine-tuning.

pub mod clothsim;
pub mod controllers;
pub mod env;
pub mod error;
pub mod force;
pub mod geometry;
pub mod neural;
pub mod policy;
pub mod rng;
pub mod training;

pub use error::{Error, Result};

/// 3D vector in meters (positions) or sim units (forces).
pub type Vec3 = nalgebra::Vector3<f64>;
