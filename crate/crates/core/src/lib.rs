//! Beam-oriented digital predistortion for subarrays of nonlinear power
//! amplifiers under crosstalk, with post-weighting of the predistorter's
//! nonlinear outputs optimized in closed form.
//!
//! The crate is organised bottom-up:
//!
//! - [`signal`]: multicarrier test signals, NMSE, block text I/O
//! - [`poly`]: dual-input memoryless polynomial bases and LS identification
//! - [`array`]: steering, crosstalk network and ground-truth simulation
//! - [`train`]: crosstalk coefficient estimation and BO-DPD training
//! - [`postweight`]: FF/LC post-weighting layouts and radiation operators
//! - [`pwopt`]: quadratic problem assembly and the KKT solve
//! - [`metrics`]: radiation sweeps, ACPR, average improvement
//! - [`scenario`] and [`pipeline`]: scenario files and end-to-end orchestration

pub mod array;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod pipeline;
pub mod poly;
pub mod postweight;
pub mod pwopt;
pub mod scenario;
pub mod signal;
pub mod train;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;

/// Power floor reported for bands or residuals with no measurable energy.
pub const FLOOR_DB: f64 = -300.0;

/// Identifier of the pseudo-random generator used for every seeded draw.
pub const RNG_ALGORITHM: &str = "ChaCha8Rng::seed_from_u64 (rand_chacha 0.9)";
