use serde::{Deserialize, Serialize};
use whorl_image::{dilate, erode, perlin_sample, GrayImage};

/// Capture artifacts applied to the second image of a pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    /// Blends the print toward structured noise, washing out contrast.
    SensorNoise,
    /// Dry skin: ridges lose contact, so dark ridge lines thin out.
    /// Implemented as grayscale dilation (bright valleys expand).
    Dryness,
    /// Excess pressure: ridges flatten and fatten. Grayscale erosion.
    OverPressure,
}

/// Largest dilation/erosion radius, reached at severity 1.
const MORPH_RADIUS_MAX: f64 = 2.6;

/// Fraction of the image replaced by noise at severity 1.
const NOISE_BLEND_MAX: f64 = 0.6;

/// Applies one capture artifact at the given severity in [0, 1].
///
/// Severity 0 returns the input unchanged, bit for bit, for every kind; the
/// artifacts scale continuously from there. `seed` only affects
/// `SensorNoise` (the other two are deterministic morphology).
pub fn corrupt(img: &GrayImage, kind: CorruptionKind, severity: f64, seed: u64) -> GrayImage {
    assert!(
        (0.0..=1.0).contains(&severity),
        "corruption severity {severity} outside [0, 1]"
    );
    match kind {
        CorruptionKind::SensorNoise => sensor_noise(img, severity, seed),
        CorruptionKind::Dryness => dilate(img, MORPH_RADIUS_MAX * severity),
        CorruptionKind::OverPressure => erode(img, MORPH_RADIUS_MAX * severity),
    }
}

/// Blends toward a two-octave noise field centered at mid-gray. The blend
/// weight is `NOISE_BLEND_MAX * severity`, so severity 0 multiplies the
/// noise by exactly zero and reproduces the input.
fn sensor_noise(img: &GrayImage, severity: f64, seed: u64) -> GrayImage {
    let alpha = NOISE_BLEND_MAX * severity;
    if alpha == 0.0 {
        return img.clone();
    }
    let mut out = GrayImage::new(img.width(), img.height());
    for y in 0..img.height() {
        for x in 0..img.width() {
            let (fx, fy) = (x as f64, y as f64);
            let n = 0.65 * perlin_sample(seed, fx, fy, 9.0)
                + 0.35 * perlin_sample(seed ^ 0x5eed, fx, fy, 3.5);
            let noise = 127.5 * (1.0 + n);
            let v = (1.0 - alpha) * img.get(x, y) as f64 + alpha * noise;
            out.set(x, y, v.round().clamp(0.0, 255.0) as u8);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::SyntheticFinger;

    fn sample() -> GrayImage {
        SyntheticFinger::new(0, 42).render(96).image
    }

    #[test]
    fn zero_severity_is_identity_for_every_kind() {
        let img = sample();
        for kind in [
            CorruptionKind::SensorNoise,
            CorruptionKind::Dryness,
            CorruptionKind::OverPressure,
        ] {
            let out = corrupt(&img, kind, 0.0, 7);
            assert_eq!(out.pixels(), img.pixels(), "{kind:?} at severity 0 changed pixels");
        }
    }

    #[test]
    fn full_severity_noise_changes_intensities_noticeably() {
        let img = sample();
        let out = corrupt(&img, CorruptionKind::SensorNoise, 1.0, 7);
        assert!(out.mean_abs_diff(&img) > 10.0);
    }

    #[test]
    fn noise_is_seeded() {
        let img = sample();
        let a = corrupt(&img, CorruptionKind::SensorNoise, 0.5, 1);
        let b = corrupt(&img, CorruptionKind::SensorNoise, 0.5, 1);
        let c = corrupt(&img, CorruptionKind::SensorNoise, 0.5, 2);
        assert_eq!(a.pixels(), b.pixels());
        assert_ne!(a.pixels(), c.pixels());
    }

    #[test]
    fn dryness_brightens_over_pressure_darkens() {
        let img = sample();
        let dry = corrupt(&img, CorruptionKind::Dryness, 0.8, 0);
        let pressed = corrupt(&img, CorruptionKind::OverPressure, 0.8, 0);
        let mean = |im: &GrayImage| {
            im.pixels().iter().map(|&v| v as f64).sum::<f64>() / im.pixels().len() as f64
        };
        assert!(mean(&dry) > mean(&img), "dilation should expand bright valleys");
        assert!(mean(&pressed) < mean(&img), "erosion should expand dark ridges");
    }

    #[test]
    fn dryness_then_over_pressure_is_exactly_a_closing() {
        // Both corruptions are pure morphology at the same radius, so the
        // composite must equal dilate-then-erode with no drift.
        let img = sample();
        let sev = 0.9;
        let composite = corrupt(
            &corrupt(&img, CorruptionKind::Dryness, sev, 0),
            CorruptionKind::OverPressure,
            sev,
            0,
        );
        let direct = erode(&dilate(&img, MORPH_RADIUS_MAX * sev), MORPH_RADIUS_MAX * sev);
        assert_eq!(composite.pixels(), direct.pixels());
    }

    #[test]
    #[should_panic(expected = "severity")]
    fn severity_out_of_range_is_rejected() {
        corrupt(&sample(), CorruptionKind::Dryness, 1.2, 0);
    }
}
