//! Video classification from the sizes of compressed frames.
//!
//! The pipeline reads per-frame sizes straight out of an H.264/H.265
//! bitstream or MP4 container ([`bitstream`]), windows and normalizes them
//! ([`series`]), and classifies the result with a 1-D residual network
//! ([`nn`]). A DTW nearest-neighbour baseline ([`dtw`]), histogram KL
//! divergence analysis ([`stats`]), evaluation metrics ([`eval`]) and a
//! synthetic clip generator ([`datagen`]) complete the toolkit.

pub mod bitstream;
pub mod datagen;
pub mod dtw;
pub mod eval;
pub mod fsts;
pub mod manifest;
pub mod nn;
pub mod series;
pub mod stats;

pub use bitstream::Codec;
pub use series::{FrameSizeSeries, LabeledDataset};
