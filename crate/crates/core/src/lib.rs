//! Simulation of bandlimited intensity-modulation / direct-detection fiber
//! links with bipolar ASK, neural successive-interference-cancellation
//! equalization and achievable-rate estimation.

pub mod air;
pub mod channel;
pub mod config;
pub mod dataset;
pub mod equalizer;
pub mod error;
pub mod repro;
pub mod signal;
pub mod sweep;
pub mod transmitter;

pub use error::{Error, Result};
