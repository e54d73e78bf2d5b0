//! File formats, synthetic data, configuration, training and inference.

pub mod checkpoint;
pub mod config;
pub mod gradcheck;
pub mod infer;
pub mod predictions;
pub mod scene;
pub mod synth;
pub mod train;
