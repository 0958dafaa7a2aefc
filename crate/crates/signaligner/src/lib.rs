//! Text-to-sign-pose generation in three stages: a gloss-text encoder feeds
//! three autoregressive decoders that co-generate skeleton keypoints, hand
//! parameters, and whole-body parameters; a collaborative correction stage
//! cross-attends the three streams and re-weights their losses; a deterministic
//! rasterizer turns corrected streams into frames.  Evaluation closes the loop
//! with a back-translation recognizer plus text and image metrics.
//!
//! The numeric core is generic over the scalar type (f32 for the on-disk
//! pipeline, f64 where tests need tight tolerances); see [`scalar::Scalar`].

pub mod backtrans;
pub mod checkpoint;
pub mod cli;
pub mod cogen;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod occ;
pub mod params;
pub mod render;
pub mod rng;
pub mod scalar;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Default scalar for the end-to-end pipeline (tensor files are f32 on disk).
pub type Real = f32;

/// Wide scalar used where tests and oracles need extra headroom.
pub type Wide = f64;

/// Dense matrix alias used throughout the numeric core.
pub type Mat<T = Real> = ndarray::Array2<T>;
