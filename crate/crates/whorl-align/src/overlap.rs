//! Effective-area segmentation, overlap masking, and ROI extraction.

use whorl_image::{
    box_filter, largest_component, sobel_magnitude, threshold_mask, BinaryMask, GrayImage,
};

use crate::AlignError;

/// Side length of the square ROI cut from the original images.
pub const ROI_SIZE: usize = 90;
/// Box-integration window for the gradient magnitude.
const SEGMENT_WINDOW: usize = 25;
/// Fraction of the maximum integrated gradient that counts as fingerprint.
const SEGMENT_FRACTION: f64 = 0.15;

/// The two masked enhanced images restricted to their shared area, plus
/// fixed-size ROIs cut from the original images around that area's centroid.
#[derive(Clone, Debug)]
pub struct OverlapPair {
    /// Enhanced source image, zero outside `shared`.
    pub overlap_a: GrayImage,
    /// Enhanced target image, zero outside `shared`.
    pub overlap_b: GrayImage,
    /// Intersection of the two effective-area masks.
    pub shared: BinaryMask,
    /// `ROI_SIZE` square from the original source image.
    pub roi_a: GrayImage,
    /// `ROI_SIZE` square from the original target image.
    pub roi_b: GrayImage,
}

/// Fingerprint-bearing area of an image: gradient magnitude, box-integrated,
/// thresholded at a fraction of its maximum, reduced to the largest connected
/// component. Deterministic; an empty result means "no print found".
pub fn effective_mask(img: &GrayImage) -> BinaryMask {
    let grad = sobel_magnitude(img);
    let integrated = box_filter(&grad, SEGMENT_WINDOW);
    largest_component(&threshold_mask(&integrated, SEGMENT_FRACTION))
}

/// Computes the shared effective area of an aligned, enhanced pair and cuts
/// matching ROIs out of the original images.
///
/// `enhanced_a` must already live in `b`'s frame (i.e. run [`crate::align`]
/// first and enhance the aligned image); all four images share extents. The
/// masks come from the enhanced pair, the ROIs from the originals, both
/// centered on the shared-mask centroid and clamped to stay in bounds.
///
/// Fails with [`AlignError::EmptyOverlap`] when the masks do not intersect
/// and [`AlignError::TooSmall`] when the images cannot hold the fixed
/// `ROI_SIZE` window.
pub fn overlap_extract(
    enhanced_a: &GrayImage,
    enhanced_b: &GrayImage,
    original_a: &GrayImage,
    original_b: &GrayImage,
) -> Result<OverlapPair, AlignError> {
    let (w, h) = (enhanced_a.width(), enhanced_a.height());
    for img in [enhanced_b, original_a, original_b] {
        assert!(
            img.width() == w && img.height() == h,
            "overlap inputs must share extents"
        );
    }
    if w < ROI_SIZE || h < ROI_SIZE {
        return Err(AlignError::TooSmall { side: w.min(h), need: ROI_SIZE });
    }

    let mask_a = effective_mask(enhanced_a);
    let mask_b = effective_mask(enhanced_b);
    let shared = mask_a.intersect(&mask_b);
    let Some((cx, cy)) = shared.centroid() else {
        return Err(AlignError::EmptyOverlap);
    };

    let (left, top) = roi_corner(cx, cy, w, h);
    Ok(OverlapPair {
        overlap_a: enhanced_a.masked(&shared),
        overlap_b: enhanced_b.masked(&shared),
        shared,
        roi_a: crop(original_a, left, top),
        roi_b: crop(original_b, left, top),
    })
}

/// Top-left corner of the ROI window: the centroid rounded to the nearest
/// pixel, shifted half a window, then clamped so the window stays inside the
/// image.
fn roi_corner(cx: f64, cy: f64, w: usize, h: usize) -> (usize, usize) {
    let clamp = |c: f64, extent: usize| -> usize {
        let ideal = c.round() as isize - (ROI_SIZE / 2) as isize;
        ideal.clamp(0, (extent - ROI_SIZE) as isize) as usize
    };
    (clamp(cx, w), clamp(cy, h))
}

fn crop(img: &GrayImage, left: usize, top: usize) -> GrayImage {
    GrayImage::from_fn(ROI_SIZE, ROI_SIZE, |x, y| img.get(left + x, top + y))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Stripes restricted to a rectangle, black elsewhere; strong gradients
    /// make segmentation trivial to reason about.
    fn patch(x0: usize, y0: usize, x1: usize, y1: usize) -> GrayImage {
        GrayImage::from_fn(128, 128, |x, y| {
            if x >= x0 && x < x1 && y >= y0 && y < y1 {
                if (x / 4) % 2 == 0 {
                    230
                } else {
                    25
                }
            } else {
                0
            }
        })
    }

    #[test]
    fn undersized_images_are_rejected_not_cropped() {
        let img = GrayImage::from_fn(64, 64, |x, _| if (x / 4) % 2 == 0 { 220 } else { 30 });
        match overlap_extract(&img, &img, &img, &img) {
            Err(AlignError::TooSmall { side: 64, need }) => assert_eq!(need, ROI_SIZE),
            other => panic!("expected TooSmall, got {other:?}"),
        }
    }

    #[test]
    fn identical_images_share_their_whole_mask() {
        let img = patch(20, 20, 100, 100);
        let solo = effective_mask(&img);
        let pair = overlap_extract(&img, &img, &img, &img).unwrap();
        assert_eq!(pair.shared.bits(), solo.bits());
    }

    #[test]
    fn overlap_images_are_zero_outside_the_shared_mask() {
        let a = patch(10, 10, 80, 90);
        let b = patch(40, 30, 120, 110);
        let pair = overlap_extract(&a, &b, &a, &b).unwrap();
        for y in 0..128 {
            for x in 0..128 {
                if !pair.shared.get(x, y) {
                    assert_eq!(pair.overlap_a.get(x, y), 0);
                    assert_eq!(pair.overlap_b.get(x, y), 0);
                }
            }
        }
    }

    #[test]
    fn disjoint_prints_fail_with_empty_overlap() {
        let a = patch(4, 4, 44, 44);
        let b = patch(84, 84, 124, 124);
        match overlap_extract(&a, &b, &a, &b) {
            Err(AlignError::EmptyOverlap) => {}
            other => panic!("expected EmptyOverlap, got {other:?}"),
        }
    }

    #[test]
    fn rois_are_exact_crops_at_the_clamped_centroid() {
        // Print hugging the left edge forces the clamp on x.
        let a = patch(0, 30, 60, 110);
        let pair = overlap_extract(&a, &a, &a, &a).unwrap();
        assert_eq!(pair.roi_a.width(), ROI_SIZE);
        assert_eq!(pair.roi_a.height(), ROI_SIZE);
        let (cx, cy) = pair.shared.centroid().unwrap();
        let (left, top) = roi_corner(cx, cy, 128, 128);
        assert!(left + ROI_SIZE <= 128 && top + ROI_SIZE <= 128);
        for y in 0..ROI_SIZE {
            for x in 0..ROI_SIZE {
                assert_eq!(pair.roi_a.get(x, y), a.get(left + x, top + y));
            }
        }
    }

    #[test]
    fn roi_corner_centers_when_there_is_room() {
        let (left, top) = roi_corner(64.0, 64.0, 128, 128);
        assert_eq!((left, top), (19, 19));
        // Near the corner the window pins to the image edge.
        assert_eq!(roi_corner(3.0, 126.0, 128, 128), (0, 38));
    }
}
