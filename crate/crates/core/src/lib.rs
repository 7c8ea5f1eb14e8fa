//! Predictive motion tracking for slice-sampled 3D anatomy.
//!
//! The pipeline: synthesize smooth rigid-motion trajectories
//! ([`trajectory`]), simulate interleaved slice acquisition of a moving
//! volume ([`phantom`], [`sampler`]), train a CNN-LSTM encoder/decoder that
//! estimates poses for the observed window and predicts poses for future
//! timesteps ([`network`], [`training`]), and compare against zero-velocity,
//! auto-regressive, and direct-LSTM baselines ([`baselines`],
//! [`evaluation`]).
//!
//! Batch work (sequence generation, gradient accumulation, evaluation) is
//! data-parallel over sequences via rayon when the default `parallel`
//! feature is on; results are reduced in input order, so parallel and
//! sequential runs are bit-identical.

pub mod baselines;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod network;
pub mod parallel;
pub mod training;
pub mod rigid3d;
pub mod rng;

pub mod phantom;
pub mod sampler;
pub mod trajectory;

pub use error::{Error, Result};
