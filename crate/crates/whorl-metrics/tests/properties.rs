//! Randomized invariants for the measurement primitives.

use proptest::prelude::*;
use whorl_image::GrayImage;
use whorl_matcher::{MatchSet, MatchedCell};
use whorl_metrics::{eer, mutual_information, render_overlay, roc_curve, trapezoid_auc, MI_BINS};

fn scores() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, 1..40)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn eer_is_a_rate(genuine in scores(), imposter in scores()) {
        let rep = eer(&genuine, &imposter).unwrap();
        prop_assert!((0.0..=1.0).contains(&rep.eer), "eer {} out of range", rep.eer);
        prop_assert!(rep.threshold.is_finite());
        prop_assert_eq!(rep.inverted, rep.eer > 0.5);
    }

    #[test]
    fn roc_runs_monotonically_corner_to_corner(genuine in scores(), imposter in scores()) {
        let curve = roc_curve(&genuine, &imposter, 0).unwrap();
        prop_assert_eq!(curve[0], (0.0, 0.0));
        prop_assert_eq!(*curve.last().unwrap(), (1.0, 1.0));
        for w in curve.windows(2) {
            prop_assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1, "{:?} then {:?}", w[0], w[1]);
        }
        let auc = trapezoid_auc(&curve);
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&auc), "auc {}", auc);
    }

    #[test]
    fn mi_is_nonnegative_and_symmetric(
        a in prop::collection::vec(any::<u8>(), 256),
        b in prop::collection::vec(any::<u8>(), 256),
    ) {
        let ia = GrayImage::from_pixels(16, 16, a);
        let ib = GrayImage::from_pixels(16, 16, b);
        let ab = mutual_information(&ia, &ib, MI_BINS).unwrap();
        let ba = mutual_information(&ib, &ia, MI_BINS).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() < 1e-12, "{} vs {}", ab, ba);
    }

    #[test]
    fn overlay_audit_counts_exactly_the_retained_matches(
        cells in prop::collection::vec((0usize..16, 0usize..16, 0.0..1.0f64), 0..12),
        threshold in 0.0..1.0f64,
    ) {
        let cells: Vec<MatchedCell> = cells
            .into_iter()
            .map(|(i, j, confidence)| MatchedCell { i, j, confidence })
            .collect();
        let want = cells.iter().filter(|m| m.confidence >= threshold).count();
        let ms = MatchSet { cells, grid_n: 4, cell_size: 8 };
        let canvas = GrayImage::new(32, 32);
        let out = render_overlay(&canvas, &canvas, &ms, threshold);
        prop_assert_eq!(out.lines_drawn, want);
    }
}
