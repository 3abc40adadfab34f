//! ECG heartbeat anomaly detection with an adversarially trained masked
//! autoencoder.
//!
//! The pipeline: MIT-BIH records (or a synthetic corpus) are segmented into
//! R-peak-anchored beats, rasterized to 128x128 grayscale images, and used to
//! train a transformer masked autoencoder whose column-wise wave masking
//! removes vertical strips of the beat. A patch-level discriminator provides
//! an adversarial signal during training. At test time, reconstruction error
//! over repeated mask draws is the anomaly score.

pub mod beats;
pub mod cli;
pub mod error;
pub mod evaluate;
pub mod model;
pub mod numerics;
pub mod training;
pub mod wfdb;

pub use error::{Error, Result};
