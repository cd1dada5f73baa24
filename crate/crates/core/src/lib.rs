//! Visual localization by direct 2D-3D descriptor matching, with local and
//! global descriptors fused into a single matching space.
//!
//! Repeated structures make local descriptors ambiguous: the same corner of
//! the same window design exists in many places, so a nearest-neighbor
//! lookup happily matches a query keypoint into the wrong part of the map.
//! This crate disambiguates those lookups by mixing every local descriptor
//! with a dimension-reduced global (whole-image) descriptor before any
//! matching happens. Map points store the mean of their fused appearances
//! (the codebook); query descriptors are fused with the query image's own
//! global descriptor — or, in the heavy variant, the most similar database
//! image's — and matched against the codebook by plain nearest neighbor.
//! Poses then come from a P3P-RANSAC loop with Gauss-Newton refinement.
//!
//! Module map:
//! - [`types`]: descriptor banks (f32/f16), points, observations, poses.
//! - [`reduce`]: global-descriptor dimension reduction (five methods).
//! - [`fuse`]: the weighted local/global mix and the heavy-variant lookup.
//! - [`codebook`]: per-point fused mean descriptors and memory accounting.
//! - [`search`]: exact and inverted-file nearest-neighbor matching.
//! - [`pose`]: P3P, RANSAC-PnP, Gauss-Newton refinement.
//! - [`metrics`]: pose errors, medians, threshold percentages.
//! - [`synth`]: aliased synthetic scenes with full ground truth.
//! - [`analyze`]: K-means ambiguity analysis and frustum classification.
//! - [`io`]: binary descriptor/codebook formats and text pose files.
//! - [`pipeline`]: scene-directory plumbing shared by the CLI and tests.

pub mod analyze;
pub mod codebook;
pub mod error;
pub mod fuse;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod pose;
pub mod reduce;
pub mod search;
pub mod synth;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    CameraIntrinsics, DescriptorBank, DescriptorKind, Dtype, Match, MatchSet, Observation,
    Point3D, Pose,
};
