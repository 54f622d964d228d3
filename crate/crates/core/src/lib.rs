//! Co-label learning: a data classifier and a label aggregator refine shared
//! soft labels for instances carrying sparse, noisy annotations, using a
//! small trusted set for calibration.

pub mod aggregator;
pub mod calibration;
pub mod classifier;
pub mod cli;
pub mod combiner;
pub mod config;
pub mod data;
pub mod error;
pub mod io;
pub mod matrix;
pub mod nn;
pub mod noise;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use rng::Seed;
