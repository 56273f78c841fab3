//! Few-step sampling schedules for diffusion/flow ODEs, distilled from a
//! dense teacher trajectory by dynamic programming.
//!
//! A teacher runs the probability-flow ODE on a dense N-step grid; the
//! search picks the M-step subset of that grid whose student run lands
//! closest to the teacher, per sample or averaged across samples. Velocity
//! fields come from an analytic Gaussian-mixture oracle or from any external
//! process speaking the newline-delimited JSON protocol in
//! [`field::protocol`].

// Guards written as !(x > 0.0) reject NaN; the non-negated forms would let
// NaN through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calib;
pub mod config;
pub mod error;
pub mod field;
pub mod metrics;
pub mod oracle;
pub mod rng;
pub mod runner;
pub mod schedule;
pub mod search;
pub mod solver;

pub use config::RunConfig;
pub use error::{OssError, Result};
pub use field::{GaussianMixture, ProviderSpec, VelocityProvider};
pub use schedule::{teacher_grid, NoiseSchedule, TimeGrid};
pub use search::{dp_search, CostMetric, DpTable, StudentSchedule};
pub use solver::{rollout, Trajectory};
