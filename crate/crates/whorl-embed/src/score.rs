use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use whorl_align::{align, overlap_extract, AlignError, Enhancer, GaborEnhancer, RansacConfig};
use whorl_image::GrayImage;
use whorl_matcher::{MatchSet, MatcherNet};

use crate::net::EmbedNet;
use crate::EmbedError;

/// Score assigned to pairs the pipeline cannot align. Cosine fusion lives
/// in [-1, 1] for unit weights, so the floor ranks a failed pair below any
/// scored one without leaving the scale.
pub const FAILURE_SCORE: f64 = -1.0;

/// Fewest calibration pairs [`fit_fusion`] accepts; a 2x2 least-squares
/// fit on less data is dominated by noise.
pub const MIN_FIT_PAIRS: usize = 20;

pub const REGISTRATION_DIR: &str = "registration";
pub const GLOBAL_DIR: &str = "global";
pub const LOCAL_DIR: &str = "local";
pub const FUSION_FILE: &str = "fusion.json";

/// Linear fusion of the two branch similarities: `s = alpha1*t1 + alpha2*t2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionWeights {
    pub alpha1: f64,
    pub alpha2: f64,
}

impl Default for FusionWeights {
    fn default() -> FusionWeights {
        FusionWeights { alpha1: 0.5, alpha2: 0.5 }
    }
}

impl FusionWeights {
    pub fn fuse(&self, t1: f64, t2: f64) -> f64 {
        self.alpha1 * t1 + self.alpha2 * t2
    }
}

/// A fitted fusion plus honesty flags about the calibration data.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FusionFit {
    pub weights: FusionWeights,
    /// The two branch scores were (numerically) collinear, so the
    /// least-squares system had no unique answer; equal weights were used.
    pub rank_deficient: bool,
    /// Every calibration label was the same class, which fits weights that
    /// merely scale rather than separate.
    pub single_class: bool,
}

/// Least-squares fusion weights from calibration pairs.
///
/// Solves `min sum((alpha1*t1 + alpha2*t2 - y)^2)` with `y` the +1/-1
/// label, via the 2x2 normal equations. A Gram determinant at numerical
/// zero (relative to the diagonal) falls back to equal weights and sets
/// `rank_deficient` instead of dividing by noise.
pub fn fit_fusion(scores: &[(f64, f64)], labels: &[i8]) -> Result<FusionFit, EmbedError> {
    assert_eq!(scores.len(), labels.len(), "one label per score pair required");
    assert!(labels.iter().all(|&l| l == 1 || l == -1), "labels must be +1 or -1");
    if scores.len() < MIN_FIT_PAIRS {
        return Err(EmbedError::TooFewPairs { found: scores.len(), need: MIN_FIT_PAIRS });
    }
    let single_class = labels.windows(2).all(|w| w[0] == w[1]);

    let (mut a11, mut a12, mut a22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&(t1, t2), &l) in scores.iter().zip(labels) {
        let y = l as f64;
        a11 += t1 * t1;
        a12 += t1 * t2;
        a22 += t2 * t2;
        b1 += t1 * y;
        b2 += t2 * y;
    }
    let det = a11 * a22 - a12 * a12;
    let floor = 1e-12 * a11.max(a22).powi(2);
    if det <= floor {
        return Ok(FusionFit {
            weights: FusionWeights::default(),
            rank_deficient: true,
            single_class,
        });
    }
    let weights = FusionWeights {
        alpha1: (a22 * b1 - a12 * b2) / det,
        alpha2: (a11 * b2 - a12 * b1) / det,
    };
    Ok(FusionFit { weights, rank_deficient: false, single_class })
}

/// Branch inputs produced by registration: overlap images resized for the
/// global branch, original-image ROIs resized for the local branch.
#[derive(Clone, Debug)]
pub struct PreparedPair {
    pub global_a: GrayImage,
    pub global_b: GrayImage,
    pub local_a: GrayImage,
    pub local_b: GrayImage,
    pub best_angle: f64,
    pub inliers: usize,
}

/// Runs the registration stage on a raw pair and cuts out what the two
/// embedding branches consume.
///
/// `a` is aligned onto `b`, both are ridge-enhanced, their shared
/// fingerprint area is masked out of the enhanced images (global inputs)
/// and a fixed window around its centroid is cut from the unenhanced
/// images (local inputs). Each branch then gets its configured input size.
pub fn prepare_inputs(
    registration: &MatcherNet,
    a: &GrayImage,
    b: &GrayImage,
    global_size: usize,
    local_size: usize,
) -> Result<PreparedPair, AlignError> {
    let res = align(a, b, registration, &RansacConfig::default())?;
    let enhancer = GaborEnhancer::default();
    let ea = enhancer.enhance(&res.aligned);
    let eb = enhancer.enhance(b);
    let overlap = overlap_extract(&ea, &eb, &res.aligned, b)?;
    Ok(PreparedPair {
        global_a: overlap.overlap_a.resize(global_size, global_size),
        global_b: overlap.overlap_b.resize(global_size, global_size),
        local_a: overlap.roi_a.resize(local_size, local_size),
        local_b: overlap.roi_b.resize(local_size, local_size),
        best_angle: res.best_angle,
        inliers: res.inlier_count,
    })
}

/// Everything produced for one scored pair. Alignment failures yield the
/// flat [`FAILURE_SCORE`] with `failure` explaining why and every
/// diagnostic field empty.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MatchScore {
    pub s: f64,
    pub t1: Option<f64>,
    pub t2: Option<f64>,
    pub matches_global: Option<MatchSet>,
    pub matches_local: Option<MatchSet>,
    pub best_angle: Option<f64>,
    pub inliers: Option<usize>,
    pub failure: Option<String>,
}

impl MatchScore {
    fn failed(err: &AlignError) -> MatchScore {
        MatchScore {
            s: FAILURE_SCORE,
            t1: None,
            t2: None,
            matches_global: None,
            matches_local: None,
            best_angle: None,
            inliers: None,
            failure: Some(err.to_string()),
        }
    }
}

/// The full two-stage pipeline as one scoring unit: a registration matcher
/// for alignment, global and local embedding branches, and fitted fusion
/// weights.
pub struct MatchModel {
    pub registration: MatcherNet,
    pub global: EmbedNet,
    pub local: EmbedNet,
    pub fusion: FusionWeights,
}

impl MatchModel {
    /// Scores a raw pair end to end. Input extents must match the
    /// registration matcher; alignment failures come back as successful
    /// calls carrying [`FAILURE_SCORE`], since a pair that cannot be
    /// aligned is a legitimate non-match verdict, not a caller error.
    pub fn score(&self, a: &GrayImage, b: &GrayImage) -> Result<MatchScore, EmbedError> {
        let size = self.registration.config().image_size;
        for img in [a, b] {
            for (what, found) in [("input width", img.width()), ("input height", img.height())] {
                if found != size {
                    return Err(EmbedError::Dimension { what, expected: size, found });
                }
            }
        }
        let prepared = match prepare_inputs(
            &self.registration,
            a,
            b,
            self.global.config().image_size,
            self.local.config().image_size,
        ) {
            Ok(p) => p,
            Err(e) => return Ok(MatchScore::failed(&e)),
        };
        let g = self.global.embed(&prepared.global_a, &prepared.global_b)?;
        let l = self.local.embed(&prepared.local_a, &prepared.local_b)?;
        let t1 = g.r1.cosine(&g.r2);
        let t2 = l.r1.cosine(&l.r2);
        Ok(MatchScore {
            s: self.fusion.fuse(t1, t2),
            t1: Some(t1),
            t2: Some(t2),
            matches_global: Some(g.matches),
            matches_local: Some(l.matches),
            best_angle: Some(prepared.best_angle),
            inliers: Some(prepared.inliers),
            failure: None,
        })
    }

    /// Lays out the three networks in subdirectories plus the fusion
    /// weights as JSON.
    pub fn save(&self, dir: &Path) -> Result<(), EmbedError> {
        self.registration.save(&dir.join(REGISTRATION_DIR))?;
        self.global.save(&dir.join(GLOBAL_DIR))?;
        self.local.save(&dir.join(LOCAL_DIR))?;
        let path = dir.join(FUSION_FILE);
        let body = serde_json::to_vec_pretty(&self.fusion)
            .map_err(|source| EmbedError::Json { path: path.clone(), source })?;
        fs::write(&path, body).map_err(|source| EmbedError::Io { path, source })?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<MatchModel, EmbedError> {
        let path = dir.join(FUSION_FILE);
        let body = fs::read(&path).map_err(|source| EmbedError::Io { path: path.clone(), source })?;
        let fusion: FusionWeights =
            serde_json::from_slice(&body).map_err(|source| EmbedError::Json { path, source })?;
        Ok(MatchModel {
            registration: MatcherNet::load(&dir.join(REGISTRATION_DIR))?,
            global: EmbedNet::load(&dir.join(GLOBAL_DIR))?,
            local: EmbedNet::load(&dir.join(LOCAL_DIR))?,
            fusion,
        })
    }
}
