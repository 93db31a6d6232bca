//! Local SGD simulation for decentralized federated learning, with Gaussian
//! approximation, distributional diagnostics, multiplier bootstrap and
//! CUSUM-based attack detection.

pub mod cli;
pub mod detect;
pub mod engine;
pub mod error;
pub mod gauss;
pub mod graph;
pub mod linalg;
pub mod models;
pub mod output;
pub mod rng;
pub mod stats;
pub mod trajectory;

pub use error::{Error, Result};
pub use trajectory::Trajectory;
