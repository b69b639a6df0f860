//! Illumination-routed person re-identification over feature vectors.
//!
//! The crate is organised around the Synthesis Model Bank: an illumination
//! switch routes every sample to one of `N` condition encoders, and a bank of
//! KISSME Mahalanobis matrices indexed by unordered condition pairs compares
//! the encoded vectors. Around it sit a synthetic data generator with
//! controlled illumination, the benchmark split protocols with CMC scoring,
//! and a CycleDiffusion implementation over a pluggable mean predictor.

// `!(x > 0.0)` is used on purpose so NaN fails the check too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cyclediff;
pub mod encoders;
pub mod error;
pub mod evalproto;
pub mod illum;
pub mod io;
pub mod linalg;
pub mod metric;
pub mod pipeline;
pub mod rng;
pub mod smb;
pub mod types;
pub mod ulisynth;

pub use error::{Error, Result};
pub use types::{DistanceMatrix, FeatureVector, Sample, SampleSet, Violation};
