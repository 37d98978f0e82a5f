//! Core algorithms for the nursery-rhyme imitation game.
//!
//! This crate is `no_std` (with `alloc`) and holds everything that is pure
//! computation:
//!
//! - [`skeleton`]: skeleton layouts, confidence gating and upper-body joint
//!   extraction from pose-estimator output.
//! - [`features`]: the translation/scale normalized 16-dimensional pose
//!   feature vector.
//! - [`gmm`]: per-class Gaussian mixtures fitted by EM, classification,
//!   evaluation and stratified splitting.
//! - [`game`]: the rhyme game state machine, its session log and summaries.
//!
//! IO, file formats, the message bus and the CLI live in the `rhyme-mimic`
//! crate.
#![cfg_attr(not(test), no_std)]
// negated comparisons double as NaN rejection
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod features;
pub mod game;
pub mod gmm;
mod linalg;
pub mod rng;
pub mod skeleton;

pub use features::{intersect_lines, normalize, NormalizedPose, Point, ReferenceIndices, ReferencePoint, FEATURE_DIM};
pub use skeleton::{
    select_person, select_upper_body, ConfidenceThreshold, Keypoint, Rejection, SkeletonFrame, SkeletonModel,
    UpperBodyJoints,
};
