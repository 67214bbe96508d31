//! Alignment stage for fingerprint pairs: a rotation search driven by dense
//! cell matches, robust homography estimation, ridge enhancement, and
//! overlap/ROI extraction for the downstream representation matcher.
//!
//! The crate is pure computation: every function is deterministic given its
//! inputs and the RANSAC seed, and pairs can be processed in parallel.

use thiserror::Error;

mod alignment;
mod enhance;
mod homography;
mod overlap;

pub use alignment::{align, AlignmentResult, DenseMatcher, PRE_ROTATIONS};
pub use enhance::{Enhancer, GaborEnhancer};
pub use homography::{dlt_homography, ransac_homography, PointPair, RansacConfig};
pub use overlap::{effective_mask, overlap_extract, OverlapPair, ROI_SIZE};

/// Why an alignment attempt produced no result. Callers score such pairs as
/// non-matches instead of aborting a batch.
#[derive(Debug, Error)]
pub enum AlignError {
    #[error("not enough matches to fit a homography (got {count}, need 4)")]
    TooFewMatches { count: usize },
    #[error("no non-degenerate consensus model found")]
    Degenerate,
    #[error("effective fingerprint areas do not intersect")]
    EmptyOverlap,
    #[error("images are {side} pixels on the short side, the overlap window needs {need}")]
    TooSmall { side: usize, need: usize },
}
