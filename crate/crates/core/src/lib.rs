//! Analysis core for conversational-fluidity experiments: turn-taking event
//! detection, motion coupling, multimodal feature fusion, survey labelling and
//! cross-validated classifiers.
//!
//! Numerical types are generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root fix the precision for callers that do not care.

pub mod error;
pub mod events;
pub mod formats;
pub mod fuse;
pub mod gc;
pub mod linalg;
pub mod ml;
pub mod scalar;
pub mod session;
pub mod special;
pub mod survey;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Session64 = session::Session<f64>;
pub type Session32 = session::Session<f32>;
pub type FeatureFrames64 = session::FeatureFrameMatrix<f64>;
pub type FeatureFrames32 = session::FeatureFrameMatrix<f32>;
pub type LabeledClip64 = session::LabeledClip<f64>;
pub type LabeledClip32 = session::LabeledClip<f32>;
pub type FusedDataset64 = fuse::FusedDataset<f64>;
pub type FusedDataset32 = fuse::FusedDataset<f32>;
pub type GcResult64 = gc::GcResult<f64>;
pub type GcResult32 = gc::GcResult<f32>;
pub type ClipLabels64 = survey::ClipLabels<f64>;
pub type ClipLabels32 = survey::ClipLabels<f32>;
pub type TrainedModel64 = ml::experiment::TrainedModel<f64>;
pub type TrainedModel32 = ml::experiment::TrainedModel<f32>;
pub type CvOutcome64 = ml::experiment::CvOutcome<f64>;
pub type CvOutcome32 = ml::experiment::CvOutcome<f32>;
