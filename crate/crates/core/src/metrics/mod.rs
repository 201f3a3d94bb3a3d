//! Image-set similarity (FID over pluggable features), plate-text
//! distribution analytics and success/failure classification of generated
//! plates.

mod classify;
mod distribution;
mod fid;

pub use classify::{classify_generated, Category, Classification, FailureReason};
pub use distribution::*;
pub use fid::{feature_extract, fid, FeatureExtractor, FidStats, PixelFeatures};
