use whorl_image::{BinaryMask, GrayImage};

use crate::MetricsError;

/// Default histogram resolution: intensities quantize into 32 levels per
/// axis, so the joint distribution is a 32x32 table.
pub const MI_BINS: usize = 32;

/// Mutual information in nats between the intensity distributions of two
/// same-sized images.
///
/// Both marginals and the joint come from one pass over aligned pixel
/// pairs, binned uniformly over 0..=255. Cells with zero counts contribute
/// nothing. The result is clamped at zero: MI is non-negative in exact
/// arithmetic and only round-off can dip below.
pub fn mutual_information(a: &GrayImage, b: &GrayImage, bins: usize) -> Result<f64, MetricsError> {
    same_extents("mutual information", a, b)?;
    if a.pixels().is_empty() {
        return Err(MetricsError::NoSamples { what: "mutual information" });
    }
    let samples = a.pixels().iter().zip(b.pixels()).map(|(&x, &y)| (x, y));
    Ok(histogram_mi(samples, bins))
}

/// [`mutual_information`] restricted to pixels where `mask` is set.
///
/// Reports over the print region only, so background-on-background
/// agreement cannot inflate the score.
pub fn masked_mutual_information(
    a: &GrayImage,
    b: &GrayImage,
    mask: &BinaryMask,
    bins: usize,
) -> Result<f64, MetricsError> {
    same_extents("masked mutual information", a, b)?;
    if mask.width() != a.width() || mask.height() != a.height() {
        return Err(MetricsError::Dimension {
            what: "mask for mutual information",
            want_w: a.width(),
            want_h: a.height(),
            found_w: mask.width(),
            found_h: mask.height(),
        });
    }
    if mask.is_empty() {
        return Err(MetricsError::NoSamples { what: "masked mutual information" });
    }
    let samples = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .zip(mask.bits())
        .filter(|(_, &keep)| keep)
        .map(|((&x, &y), _)| (x, y));
    Ok(histogram_mi(samples, bins))
}

fn same_extents(what: &'static str, a: &GrayImage, b: &GrayImage) -> Result<(), MetricsError> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(MetricsError::Dimension {
            what,
            want_w: a.width(),
            want_h: a.height(),
            found_w: b.width(),
            found_h: b.height(),
        });
    }
    Ok(())
}

fn bin_of(p: u8, bins: usize) -> usize {
    p as usize * bins / 256
}

fn histogram_mi(samples: impl Iterator<Item = (u8, u8)>, bins: usize) -> f64 {
    assert!(bins >= 2, "mutual information needs at least two bins");
    let mut joint = vec![0u64; bins * bins];
    let mut row = vec![0u64; bins];
    let mut col = vec![0u64; bins];
    let mut n = 0u64;
    for (x, y) in samples {
        let (bx, by) = (bin_of(x, bins), bin_of(y, bins));
        joint[bx * bins + by] += 1;
        row[bx] += 1;
        col[by] += 1;
        n += 1;
    }
    let n = n as f64;
    let mut mi = 0.0;
    for bx in 0..bins {
        for by in 0..bins {
            let c = joint[bx * bins + by];
            if c == 0 {
                continue;
            }
            let c = c as f64;
            mi += c / n * (c * n / (row[bx] as f64 * col[by] as f64)).ln();
        }
    }
    mi.max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(seed: u64, w: usize, h: usize) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayImage::from_pixels(w, h, (0..w * h).map(|_| rng.gen()).collect())
    }

    #[test]
    fn self_information_is_the_marginal_entropy() {
        let img = noise(1, 24, 24);
        // Entropy of the binned marginal, computed from scratch.
        let mut counts = [0u64; MI_BINS];
        for &p in img.pixels() {
            counts[bin_of(p, MI_BINS)] += 1;
        }
        let n = img.pixels().len() as f64;
        let entropy: f64 = counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .sum();
        let mi = mutual_information(&img, &img, MI_BINS).unwrap();
        assert!((mi - entropy).abs() < 1e-9, "MI {mi} vs entropy {entropy}");
    }

    #[test]
    fn constant_partner_carries_no_information() {
        let img = noise(2, 16, 16);
        let flat = GrayImage::from_pixels(16, 16, vec![137; 256]);
        assert_eq!(mutual_information(&img, &flat, MI_BINS).unwrap(), 0.0);
        assert_eq!(mutual_information(&flat, &img, MI_BINS).unwrap(), 0.0);
    }

    #[test]
    fn mi_is_symmetric() {
        for seed in 0..8 {
            let a = noise(seed, 16, 16);
            let b = noise(seed + 100, 16, 16);
            let ab = mutual_information(&a, &b, MI_BINS).unwrap();
            let ba = mutual_information(&b, &a, MI_BINS).unwrap();
            assert!((ab - ba).abs() < 1e-12, "MI({seed}) asymmetric: {ab} vs {ba}");
        }
    }

    #[test]
    fn matches_a_naive_histogram_oracle() {
        let a = noise(3, 16, 16);
        let b = noise(4, 16, 16);
        let bins = MI_BINS;

        // Oracle: build the joint table pixel by pixel, then derive the
        // marginals from the table instead of accumulating them on the fly.
        let mut joint = vec![vec![0u64; bins]; bins];
        for y in 0..16 {
            for x in 0..16 {
                joint[bin_of(a.get(x, y), bins)][bin_of(b.get(x, y), bins)] += 1;
            }
        }
        let n = 256.0;
        let mut expect = 0.0;
        for bx in 0..bins {
            for by in 0..bins {
                if joint[bx][by] == 0 {
                    continue;
                }
                let px: u64 = joint[bx].iter().sum();
                let py: u64 = joint.iter().map(|r| r[by]).sum();
                let pxy = joint[bx][by] as f64 / n;
                expect += pxy * (pxy / (px as f64 / n * (py as f64 / n))).ln();
            }
        }
        let got = mutual_information(&a, &b, bins).unwrap();
        assert!((got - expect).abs() < 1e-12, "{got} vs oracle {expect}");
    }

    #[test]
    fn masked_mi_ignores_everything_outside_the_mask() {
        let a = noise(5, 16, 16);
        let b = noise(6, 16, 16);
        let mut mask = BinaryMask::new(16, 16);
        for y in 4..12 {
            for x in 4..12 {
                mask.set(x, y, true);
            }
        }
        let inside = masked_mutual_information(&a, &b, &mask, MI_BINS).unwrap();

        // Scribble over the excluded region; the measurement must not move.
        let mut a2 = a.clone();
        let mut b2 = b.clone();
        for y in 0..16 {
            for x in 0..16 {
                if !mask.get(x, y) {
                    a2.pixels_mut()[y * 16 + x] = 255;
                    b2.pixels_mut()[y * 16 + x] = (x * 16 + y) as u8;
                }
            }
        }
        let scribbled = masked_mutual_information(&a2, &b2, &mask, MI_BINS).unwrap();
        assert_eq!(inside.to_bits(), scribbled.to_bits());
    }

    #[test]
    fn full_mask_equals_the_unmasked_measurement() {
        let a = noise(7, 16, 16);
        let b = noise(8, 16, 16);
        let mask = BinaryMask::from_bits(16, 16, vec![true; 256]);
        let masked = masked_mutual_information(&a, &b, &mask, MI_BINS).unwrap();
        let plain = mutual_information(&a, &b, MI_BINS).unwrap();
        assert_eq!(masked.to_bits(), plain.to_bits());
    }

    #[test]
    fn mismatched_extents_are_rejected() {
        let a = noise(9, 16, 16);
        let b = noise(10, 16, 8);
        assert!(matches!(
            mutual_information(&a, &b, MI_BINS),
            Err(MetricsError::Dimension { .. })
        ));
        let mask = BinaryMask::new(8, 8);
        assert!(matches!(
            masked_mutual_information(&a, &a, &mask, MI_BINS),
            Err(MetricsError::Dimension { .. })
        ));
    }

    #[test]
    fn empty_mask_has_nothing_to_measure() {
        let a = noise(11, 16, 16);
        assert!(matches!(
            masked_mutual_information(&a, &a, &BinaryMask::new(16, 16), MI_BINS),
            Err(MetricsError::NoSamples { .. })
        ));
    }
}
