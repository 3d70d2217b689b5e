//! Simulated tactile force-estimation pipeline.

pub mod calibration;
pub mod dataset;
pub mod error;
pub mod model;
pub mod parallel;
pub mod report;
pub mod sensor;
pub mod tasks;
pub mod training;

pub use error::{FafError, Result};
