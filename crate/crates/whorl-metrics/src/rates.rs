use crate::MetricsError;

/// Where the false-accept and false-reject curves cross.
///
/// `inverted` flags score polarities where genuine sits below imposter
/// (crossing above 0.5); the rate is still reported as measured.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EerReport {
    pub eer: f64,
    pub threshold: f64,
    pub inverted: bool,
}

/// Equal error rate of a verification score under the accept-if
/// `score >= threshold` rule.
///
/// Thresholds sweep the observed scores. FAR (imposters accepted) falls
/// and FRR (genuine rejected) rises monotonically with the threshold, so
/// their difference crosses zero once; the crossing is located exactly
/// when some observed threshold hits it (lowest such threshold on ties)
/// and by linear interpolation between the two bracketing thresholds
/// otherwise.
pub fn eer(genuine: &[f64], imposter: &[f64]) -> Result<EerReport, MetricsError> {
    if genuine.is_empty() {
        return Err(MetricsError::NoSamples { what: "genuine scores" });
    }
    if imposter.is_empty() {
        return Err(MetricsError::NoSamples { what: "imposter scores" });
    }
    let mut gen_sorted = genuine.to_vec();
    let mut imp_sorted = imposter.to_vec();
    gen_sorted.sort_unstable_by(f64::total_cmp);
    imp_sorted.sort_unstable_by(f64::total_cmp);

    let mut thresholds: Vec<f64> = gen_sorted.iter().chain(&imp_sorted).copied().collect();
    thresholds.sort_unstable_by(f64::total_cmp);
    thresholds.dedup();

    // below(v, t) counts entries strictly under t, so FRR = below(gen)/n
    // and FAR = 1 - below(imp)/n under the >= acceptance rule.
    let below = |sorted: &[f64], t: f64| sorted.partition_point(|&s| s < t);
    let far_at = |t: f64| 1.0 - below(&imp_sorted, t) as f64 / imp_sorted.len() as f64;
    let frr_at = |t: f64| below(&gen_sorted, t) as f64 / gen_sorted.len() as f64;

    let mut best: Option<(f64, f64, f64)> = None; // (|diff|, threshold, eer)
    let mut crossing: Option<(f64, f64)> = None; // interpolated (threshold, eer)
    let mut prev: Option<(f64, f64)> = None; // (threshold, diff)
    for &t in &thresholds {
        let (far, frr) = (far_at(t), frr_at(t));
        let diff = far - frr;
        if best.as_ref().is_none_or(|(d, _, _)| diff.abs() < *d) {
            best = Some((diff.abs(), t, (far + frr) / 2.0));
        }
        if let Some((t0, d0)) = prev {
            if d0 > 0.0 && diff < 0.0 {
                // Sign change without touching zero: the linear model of
                // both rates between t0 and t crosses at fraction f.
                let f = d0 / (d0 - diff);
                let far0 = far_at(t0);
                let frr0 = frr_at(t0);
                let far_x = far0 + f * (far - far0);
                let frr_x = frr0 + f * (frr - frr0);
                crossing = Some((t0 + f * (t - t0), (far_x + frr_x) / 2.0));
            }
        }
        prev = Some((t, diff));
    }

    let (_, threshold, eer) = best.unwrap();
    let (threshold, eer) = match crossing {
        // An exact zero at an observed threshold wins; otherwise the
        // interpolated crossing is the better estimate.
        _ if best.unwrap().0 == 0.0 => (threshold, eer),
        Some(x) => x,
        None => (threshold, eer),
    };
    Ok(EerReport { eer, threshold, inverted: eer > 0.5 })
}

/// ROC staircase as (FAR, TAR) points, thresholds descending.
///
/// Starts at (0, 0) (threshold above every score) and ends at (1, 1)
/// (threshold at the minimum, everything accepted); both coordinates are
/// non-decreasing along the way. `points` caps the vertex count by even
/// index subsampling that always keeps both corners; 0 means no cap.
pub fn roc_curve(
    genuine: &[f64],
    imposter: &[f64],
    points: usize,
) -> Result<Vec<(f64, f64)>, MetricsError> {
    if genuine.is_empty() {
        return Err(MetricsError::NoSamples { what: "genuine scores" });
    }
    if imposter.is_empty() {
        return Err(MetricsError::NoSamples { what: "imposter scores" });
    }
    assert!(points != 1, "a one-point curve cannot hold both corners");

    let mut gen_sorted = genuine.to_vec();
    let mut imp_sorted = imposter.to_vec();
    gen_sorted.sort_unstable_by(f64::total_cmp);
    imp_sorted.sort_unstable_by(f64::total_cmp);
    let mut thresholds: Vec<f64> = gen_sorted.iter().chain(&imp_sorted).copied().collect();
    thresholds.sort_unstable_by(f64::total_cmp);
    thresholds.dedup();

    let below = |sorted: &[f64], t: f64| sorted.partition_point(|&s| s < t);
    let mut curve = Vec::with_capacity(thresholds.len() + 1);
    curve.push((0.0, 0.0));
    for &t in thresholds.iter().rev() {
        let far = 1.0 - below(&imp_sorted, t) as f64 / imp_sorted.len() as f64;
        let tar = 1.0 - below(&gen_sorted, t) as f64 / gen_sorted.len() as f64;
        curve.push((far, tar));
    }

    if points >= 2 && points < curve.len() {
        let last = curve.len() - 1;
        let picked: Vec<(f64, f64)> = (0..points)
            .map(|k| curve[(k * last + (points - 1) / 2) / (points - 1)])
            .collect();
        return Ok(picked);
    }
    Ok(curve)
}

/// Area under a curve of (x, y) vertices by the trapezoid rule.
///
/// On the full ROC staircase this equals the probability that a random
/// genuine score beats a random imposter score (ties counting half).
pub fn trapezoid_auc(curve: &[(f64, f64)]) -> f64 {
    curve
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}
