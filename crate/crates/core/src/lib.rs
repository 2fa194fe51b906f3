//! Surprise-guided sequential experiment design.
//!
//! A Gaussian-process surrogate drives candidate selection from a finite
//! pool. Observations the surrogate finds surprising trigger a local
//! confirmation step and, if confirmed, local exploitation; everything else
//! falls back to space-filling exploration.

pub mod acquisition;
pub mod augmentation;
pub mod dataset;
pub mod gp;
pub mod rng;
pub mod surprise;
pub mod engine;
pub mod metrics;
pub mod baselines;
pub mod bench;
