//! Homography estimation from point correspondences.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use whorl_image::Homography;

use crate::AlignError;

/// RANSAC parameters. The defaults are what the pipeline uses everywhere;
/// tests shrink `iterations` when they want speed over robustness.
#[derive(Clone, Copy, Debug)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Reprojection error below this many pixels counts as an inlier.
    pub inlier_px: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> RansacConfig {
        RansacConfig {
            iterations: 2000,
            inlier_px: 3.0,
            seed: 0,
        }
    }
}

/// A correspondence: `(x, y)` in the source image, `(x, y)` in the target.
pub type PointPair = ((f64, f64), (f64, f64));

/// Direct linear transform over all given correspondences (least squares for
/// more than four). Point sets are centered and scaled before building the
/// design matrix, which keeps the solution stable for pixel-scale inputs.
///
/// Fails when the system is degenerate (e.g. collinear points), surfacing as
/// a singular matrix rejected by [`Homography::new`].
pub fn dlt_homography(pairs: &[PointPair]) -> Result<Homography, AlignError> {
    assert!(pairs.len() >= 4, "DLT needs at least four correspondences");
    let (src_norm, t_src) = normalize_points(pairs.iter().map(|p| p.0));
    let (dst_norm, t_dst) = normalize_points(pairs.iter().map(|p| p.1));

    let mut rows = Vec::with_capacity(18 * pairs.len());
    for ((x, y), (u, v)) in src_norm.iter().zip(&dst_norm) {
        rows.extend_from_slice(&[-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, *u]);
        rows.extend_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, *v]);
    }
    // Four points give an 8x9 system whose thin SVD carries only eight right
    // singular vectors, losing exactly the null vector we are after. Padding
    // with zero rows (which change nothing else) makes the basis complete.
    while rows.len() < 81 {
        rows.push(0.0);
    }
    let a = DMatrix::<f64>::from_row_slice(rows.len() / 9, 9, &rows);

    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("SVD was requested with right vectors");
    let smallest = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("singular values are never empty");
    let h = v_t.row(smallest);

    let raw = [
        [h[0], h[1], h[2]],
        [h[3], h[4], h[5]],
        [h[6], h[7], h[8]],
    ];
    // Undo the conditioning: H = T_dst^-1 * H_norm * T_src.
    let unnorm = t_dst.invert().compose(&hom(raw)?).compose(&t_src);
    Homography::new(*unnorm.normalized().matrix()).map_err(|_| AlignError::Degenerate)
}

fn hom(m: [[f64; 3]; 3]) -> Result<Homography, AlignError> {
    Homography::new(m).map_err(|_| AlignError::Degenerate)
}

/// Similarity transform taking the point cloud to zero centroid and mean
/// distance sqrt(2) (the standard DLT conditioning).
fn normalize_points(points: impl Iterator<Item = (f64, f64)>) -> (Vec<(f64, f64)>, Homography) {
    let pts: Vec<(f64, f64)> = points.collect();
    let n = pts.len() as f64;
    let (cx, cy) = pts
        .iter()
        .fold((0.0, 0.0), |(sx, sy), (x, y)| (sx + x, sy + y));
    let (cx, cy) = (cx / n, cy / n);
    let mean_dist = pts
        .iter()
        .map(|(x, y)| ((x - cx).powi(2) + (y - cy).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    let scale = if mean_dist > 1e-12 {
        std::f64::consts::SQRT_2 / mean_dist
    } else {
        1.0
    };
    let normed = pts
        .iter()
        .map(|(x, y)| ((x - cx) * scale, (y - cy) * scale))
        .collect();
    let t = Homography::new([
        [scale, 0.0, -cx * scale],
        [0.0, scale, -cy * scale],
        [0.0, 0.0, 1.0],
    ])
    .expect("conditioning transform has positive determinant");
    (normed, t)
}

/// Squared reprojection error of one correspondence under `h`.
fn sq_error(h: &Homography, pair: &PointPair) -> f64 {
    let ((x, y), (u, v)) = pair;
    let (px, py) = h.apply(*x, *y);
    (px - u).powi(2) + (py - v).powi(2)
}

fn count_inliers(h: &Homography, pairs: &[PointPair], inlier_px: f64) -> usize {
    let limit = inlier_px * inlier_px;
    pairs.iter().filter(|p| sq_error(h, p) < limit).count()
}

/// True when any three of the four points are (nearly) collinear, which makes
/// the four-point DLT ill-posed.
fn has_collinear_triple(points: &[(f64, f64)]) -> bool {
    debug_assert_eq!(points.len(), 4);
    for i in 0..2 {
        for j in (i + 1)..3 {
            for k in (j + 1)..4 {
                let (ax, ay) = points[i];
                let (bx, by) = points[j];
                let (cx, cy) = points[k];
                let area2 = ((bx - ax) * (cy - ay) - (by - ay) * (cx - ax)).abs();
                if area2 < 1e-6 {
                    return true;
                }
            }
        }
    }
    false
}

/// Robust homography fit: repeated four-point DLT on random samples, keeping
/// the model with the largest inlier consensus, then a least-squares refit on
/// that consensus set. Returns the model and its final inlier count.
///
/// Deterministic for a fixed `cfg.seed`. Errors with [`AlignError::TooFewMatches`]
/// below four correspondences and [`AlignError::Degenerate`] when no sample
/// ever produces a valid model (e.g. all points collinear).
pub fn ransac_homography(
    pairs: &[PointPair],
    cfg: &RansacConfig,
) -> Result<(Homography, usize), AlignError> {
    if pairs.len() < 4 {
        return Err(AlignError::TooFewMatches { count: pairs.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(usize, Homography)> = None;

    for _ in 0..cfg.iterations {
        let idx = rand::seq::index::sample(&mut rng, pairs.len(), 4);
        let sample: Vec<PointPair> = idx.iter().map(|i| pairs[i]).collect();
        let src: Vec<(f64, f64)> = sample.iter().map(|p| p.0).collect();
        let dst: Vec<(f64, f64)> = sample.iter().map(|p| p.1).collect();
        if has_collinear_triple(&src) || has_collinear_triple(&dst) {
            continue;
        }
        let Ok(h) = dlt_homography(&sample) else {
            continue;
        };
        let inliers = count_inliers(&h, pairs, cfg.inlier_px);
        if best.as_ref().is_none_or(|(n, _)| inliers > *n) {
            best = Some((inliers, h));
        }
    }

    let (sample_count, sample_h) = best.ok_or(AlignError::Degenerate)?;
    if sample_count < 4 {
        return Err(AlignError::Degenerate);
    }

    // Polish on the consensus set; keep the sample model if the refit does
    // not hold at least as many inliers (rare, but least squares can trade
    // exact fits for spread-out error).
    let limit = cfg.inlier_px * cfg.inlier_px;
    let consensus: Vec<PointPair> = pairs
        .iter()
        .filter(|p| sq_error(&sample_h, p) < limit)
        .copied()
        .collect();
    if let Ok(refit) = dlt_homography(&consensus) {
        let refit_count = count_inliers(&refit, pairs, cfg.inlier_px);
        if refit_count >= sample_count {
            return Ok((refit, refit_count));
        }
    }
    Ok((sample_h, sample_count))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn known_h() -> Homography {
        // Mild perspective on top of rotation and shift, normalized so the
        // bottom-right entry is 1.
        Homography::new([
            [0.95, -0.18, 12.0],
            [0.2, 1.02, -6.0],
            [1.5e-4, -8e-5, 1.0],
        ])
        .unwrap()
    }

    fn map_through(h: &Homography, pts: &[(f64, f64)]) -> Vec<PointPair> {
        pts.iter().map(|&(x, y)| ((x, y), h.apply(x, y))).collect()
    }

    #[test]
    fn four_exact_points_recover_the_transform() {
        let h = known_h();
        let pairs = map_through(&h, &[(10.0, 10.0), (100.0, 20.0), (90.0, 110.0), (15.0, 95.0)]);
        let est = dlt_homography(&pairs).unwrap();
        for (src, dst) in &pairs {
            let (x, y) = est.apply(src.0, src.1);
            let err = ((x - dst.0).powi(2) + (y - dst.1).powi(2)).sqrt();
            assert!(err < 1e-6, "reprojection error {err}");
        }
    }

    #[test]
    fn least_squares_refit_handles_many_points() {
        let h = known_h();
        let pts: Vec<(f64, f64)> = (0..30)
            .map(|i| (10.0 + 4.0 * (i % 6) as f64, 8.0 + 17.0 * (i / 6) as f64))
            .collect();
        let pairs = map_through(&h, &pts);
        let est = dlt_homography(&pairs).unwrap();
        for (src, dst) in &pairs {
            let (x, y) = est.apply(src.0, src.1);
            assert!(((x - dst.0).powi(2) + (y - dst.1).powi(2)).sqrt() < 1e-6);
        }
    }

    #[test]
    fn outlier_contaminated_set_recovers_inlier_geometry() {
        let h = known_h();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut pairs = Vec::new();
        // 35 exact inliers on a loose lattice.
        for i in 0..35 {
            let x = 8.0 + 16.0 * (i % 7) as f64 + rng.gen_range(-2.0..2.0);
            let y = 6.0 + 18.0 * (i / 7) as f64 + rng.gen_range(-2.0..2.0);
            pairs.push(((x, y), h.apply(x, y)));
        }
        // 15 uniform outliers.
        for _ in 0..15 {
            pairs.push((
                (rng.gen_range(0.0..128.0), rng.gen_range(0.0..128.0)),
                (rng.gen_range(0.0..128.0), rng.gen_range(0.0..128.0)),
            ));
        }
        let (est, inliers) = ransac_homography(&pairs, &RansacConfig::default()).unwrap();
        assert!(inliers >= 35, "found only {inliers} inliers");
        for (src, dst) in &pairs[..35] {
            let (x, y) = est.apply(src.0, src.1);
            let err = ((x - dst.0).powi(2) + (y - dst.1).powi(2)).sqrt();
            assert!(err < 1.0, "inlier reprojection error {err}");
        }
    }

    #[test]
    fn collinear_points_fail_without_panicking() {
        let pairs: Vec<PointPair> = (0..12)
            .map(|i| {
                let t = i as f64 * 5.0;
                ((t, 2.0 * t), (t + 3.0, 2.0 * t - 1.0))
            })
            .collect();
        match ransac_homography(&pairs, &RansacConfig::default()) {
            Err(AlignError::Degenerate) => {}
            other => panic!("expected degenerate failure, got {other:?}"),
        }
    }

    #[test]
    fn fewer_than_four_matches_is_an_error() {
        let pairs = vec![((0.0, 0.0), (1.0, 1.0)); 3];
        match ransac_homography(&pairs, &RansacConfig::default()) {
            Err(AlignError::TooFewMatches { count: 3 }) => {}
            other => panic!("expected TooFewMatches, got {other:?}"),
        }
    }

    #[test]
    fn same_seed_gives_identical_models() {
        let h = known_h();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pairs = Vec::new();
        for _ in 0..40 {
            let x = rng.gen_range(5.0..120.0);
            let y = rng.gen_range(5.0..120.0);
            pairs.push(((x, y), h.apply(x, y)));
        }
        for _ in 0..10 {
            pairs.push((
                (rng.gen_range(0.0..128.0), rng.gen_range(0.0..128.0)),
                (rng.gen_range(0.0..128.0), rng.gen_range(0.0..128.0)),
            ));
        }
        let cfg = RansacConfig {
            seed: 42,
            ..RansacConfig::default()
        };
        let (a, na) = ransac_homography(&pairs, &cfg).unwrap();
        let (b, nb) = ransac_homography(&pairs, &cfg).unwrap();
        assert_eq!(na, nb);
        assert_eq!(a.matrix(), b.matrix());
    }
}
