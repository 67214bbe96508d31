//! Rotation search and homography alignment driven by dense matches.

use whorl_image::{warp, GrayImage, Homography};
use whorl_matcher::{MatchSet, MatcherNet};

use crate::homography::{ransac_homography, RansacConfig};
use crate::AlignError;

/// Candidate pre-rotations for the search, in degrees. Covers the full range
/// a finger plausibly rotates on a sensor while keeping the residual the
/// matcher has to absorb at 15 degrees or less.
pub const PRE_ROTATIONS: [f64; 5] = [-60.0, -30.0, 0.0, 30.0, 60.0];

/// Anything that proposes cell correspondences between two images. The
/// production implementation is [`MatcherNet`]; tests substitute oracles.
pub trait DenseMatcher {
    fn match_pair(&self, a: &GrayImage, b: &GrayImage) -> MatchSet;
}

impl DenseMatcher for MatcherNet {
    fn match_pair(&self, a: &GrayImage, b: &GrayImage) -> MatchSet {
        self.match_images(a, b).matches
    }
}

/// Outcome of [`align`]: the winning pre-rotation, the full source-to-target
/// transform, and the source image resampled into the target frame.
#[derive(Clone, Debug)]
pub struct AlignmentResult {
    /// Winning entry of [`PRE_ROTATIONS`].
    pub best_angle: f64,
    /// Maps original source-image pixels into the target frame (pre-rotation
    /// composed with the estimated homography). Always invertible.
    pub h: Homography,
    /// Inliers backing `h`; never exceeds `matches.len()`.
    pub inlier_count: usize,
    /// The winning match set. Source coordinates live in the pre-rotated
    /// frame, i.e. `h` includes the rotation these were found under.
    pub matches: MatchSet,
    /// Source image warped into the target frame, target extents.
    pub aligned: GrayImage,
}

/// Aligns `a` to `b`: runs the matcher against every pre-rotation of `a`,
/// keeps the rotation with the most matches (first wins on ties), estimates
/// a homography from those matches with RANSAC, and warps the original `a`
/// through the composed transform.
///
/// Fails with [`AlignError::TooFewMatches`] when even the best rotation
/// yields fewer than four matches, and with [`AlignError::Degenerate`] when
/// RANSAC cannot produce a valid model from them.
pub fn align(
    a: &GrayImage,
    b: &GrayImage,
    matcher: &dyn DenseMatcher,
    cfg: &RansacConfig,
) -> Result<AlignmentResult, AlignError> {
    let mut best: Option<(f64, MatchSet)> = None;
    for &angle in &PRE_ROTATIONS {
        let rotated = a.rotate(angle);
        let found = matcher.match_pair(&rotated, b);
        if best.as_ref().is_none_or(|(_, m)| found.len() > m.len()) {
            best = Some((angle, found));
        }
    }
    let (best_angle, matches) = best.expect("PRE_ROTATIONS is non-empty");
    if matches.len() < 4 {
        return Err(AlignError::TooFewMatches {
            count: matches.len(),
        });
    }

    let (h_fit, inlier_count) = ransac_homography(&matches.pixel_pairs(), cfg)?;
    let h = h_fit.compose(&a.rotation_homography(best_angle));
    let aligned = warp(a, &h, b.width(), b.height());
    Ok(AlignmentResult {
        best_angle,
        h,
        inlier_count,
        matches,
        aligned,
    })
}
