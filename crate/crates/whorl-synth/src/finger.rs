use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use whorl_image::{perlin_sample, BinaryMask, GaborKernel, GrayImage};

use crate::mix_seed;

/// Number of discrete ridge orientations the steering filter bank covers.
/// Orientation is half-turn periodic, so the bins span [0, pi).
const ORIENT_BINS: usize = 24;

/// Oriented-filter passes applied to the seed noise. One pass already shows
/// stripes; three settle the phase so the pattern survives binarization.
const STEER_PASSES: usize = 3;

/// Saturation of the soft binarization. Applied to a unit-RMS ridge field,
/// tanh(2.2 * v) pushes most pixels toward full black/white while leaving a
/// few gray transition pixels along ridge flanks.
const BINARIZE_GAIN: f64 = 2.2;

/// A clean rendered print plus the region it occupies.
///
/// Pixels outside `mask` are exactly 0, matching the background fill used by
/// geometric warps, so a rendered master can be rotated without introducing
/// a second background value.
#[derive(Clone)]
pub struct Master {
    pub image: GrayImage,
    pub mask: BinaryMask,
}

/// Deterministic generator for one finger's ridge pattern.
///
/// The pattern is fully determined by `(identity, dataset_seed)`: those seed
/// the ridge frequency, the orientation-field singularities (cores bend the
/// flow a positive half turn, deltas a negative half turn), a smooth
/// orientation perturbation, the print outline, and the noise the oriented
/// filter crystallizes into ridges. Rendering the same finger twice yields
/// identical bytes.
pub struct SyntheticFinger {
    identity: u64,
    freq: f64,
    base_angle: f64,
    /// Singularity positions in unit coordinates (scaled by size at render).
    cores: Vec<(f64, f64)>,
    deltas: Vec<(f64, f64)>,
    warp_seed: u64,
    mask_seed: u64,
    noise_seed: u64,
}

impl SyntheticFinger {
    pub fn new(identity: u64, dataset_seed: u64) -> SyntheticFinger {
        let seed = mix_seed(dataset_seed, identity);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let freq = rng.gen_range(0.095..0.13);
        let base_angle = rng.gen_range(-std::f64::consts::FRAC_PI_2..std::f64::consts::FRAC_PI_2);
        // One core/one delta gives a loop, two of each a whorl-like pattern.
        // Equal counts keep the net winding zero, so the flow settles back to
        // the base angle away from the singularities instead of spiraling.
        let n_sing = rng.gen_range(1..=2usize);
        let cores = (0..n_sing)
            .map(|_| (rng.gen_range(0.35..0.65), rng.gen_range(0.28..0.52)))
            .collect();
        let deltas = (0..n_sing)
            .map(|_| (rng.gen_range(0.25..0.75), rng.gen_range(0.62..0.86)))
            .collect();
        SyntheticFinger {
            identity,
            freq,
            base_angle,
            cores,
            deltas,
            warp_seed: mix_seed(seed, 1),
            mask_seed: mix_seed(seed, 2),
            noise_seed: mix_seed(seed, 3),
        }
    }

    pub fn identity(&self) -> u64 {
        self.identity
    }

    /// Ridge frequency in cycles per pixel (wavelength is its reciprocal).
    pub fn ridge_frequency(&self) -> f64 {
        self.freq
    }

    /// Ridge tangent direction in radians at a pixel position, for a print
    /// rendered at `size`. Only meaningful modulo a half turn.
    pub fn orientation(&self, x: f64, y: f64, size: usize) -> f64 {
        let s = size as f64;
        let mut theta = self.base_angle;
        for &(cx, cy) in &self.cores {
            theta += 0.5 * (y - cy * s).atan2(x - cx * s);
        }
        for &(dx, dy) in &self.deltas {
            theta -= 0.5 * (y - dy * s).atan2(x - dx * s);
        }
        theta + 0.35 * perlin_sample(self.warp_seed, x, y, 0.45 * s)
    }

    /// Renders the clean master print at `size` x `size`.
    pub fn render(&self, size: usize) -> Master {
        assert!(size >= 32, "render size {size} too small for ridge structure");
        let mask = self.print_mask(size);
        let bins = self.orientation_bins(size);
        let bank = kernel_bank(self.freq);

        let mut field: Vec<f64> = (0..size * size)
            .map(|i| {
                let v = mix_seed(self.noise_seed, i as u64);
                ((v >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect();
        for _ in 0..STEER_PASSES {
            field = steer_pass(&field, &bins, &bank, size);
            let rms = (field.iter().map(|v| v * v).sum::<f64>() / field.len() as f64).sqrt();
            if rms > 0.0 {
                let inv = 1.0 / rms;
                for v in &mut field {
                    *v *= inv;
                }
            }
        }

        let mut image = GrayImage::new(size, size);
        for y in 0..size {
            for x in 0..size {
                if mask.get(x, y) {
                    let t = (BINARIZE_GAIN * field[y * size + x]).tanh();
                    image.set(x, y, (127.5 * (1.0 + t)).round() as u8);
                }
            }
        }
        Master { image, mask }
    }

    /// Elliptical print outline with a low-frequency wobble on the boundary.
    fn print_mask(&self, size: usize) -> BinaryMask {
        let s = size as f64;
        let (cx, cy) = (0.5 * (s - 1.0), 0.52 * (s - 1.0));
        let (rx, ry) = (0.40 * s, 0.45 * s);
        let mut mask = BinaryMask::new(size, size);
        for y in 0..size {
            for x in 0..size {
                let ex = (x as f64 - cx) / rx;
                let ey = (y as f64 - cy) / ry;
                let e = ex * ex + ey * ey
                    + 0.12 * perlin_sample(self.mask_seed, x as f64, y as f64, 0.35 * s);
                mask.set(x, y, e <= 1.0);
            }
        }
        mask
    }

    fn orientation_bins(&self, size: usize) -> Vec<u8> {
        let per = std::f64::consts::PI / ORIENT_BINS as f64;
        (0..size * size)
            .map(|i| {
                let theta = self.orientation((i % size) as f64, (i / size) as f64, size);
                let wrapped = theta.rem_euclid(std::f64::consts::PI);
                ((wrapped / per).round() as usize % ORIENT_BINS) as u8
            })
            .collect()
    }
}

struct KernelBank {
    half: i64,
    /// ORIENT_BINS kernels, one per orientation bin.
    kernels: Vec<GaborKernel>,
}

/// Oriented bandpass kernels, one per orientation bin; the carrier's even
/// symmetry makes them half-turn periodic like the field.
fn kernel_bank(freq: f64) -> KernelBank {
    let kernels: Vec<GaborKernel> = (0..ORIENT_BINS)
        .map(|b| {
            let theta = b as f64 * std::f64::consts::PI / ORIENT_BINS as f64;
            GaborKernel::new(theta, freq)
        })
        .collect();
    let half = kernels[0].half();
    KernelBank { half, kernels }
}

/// One steering pass: every pixel is filtered with the kernel of its own
/// orientation bin. Out-of-bounds taps read as zero. Rows are independent,
/// so parallelizing over them cannot change the result.
fn steer_pass(field: &[f64], bins: &[u8], bank: &KernelBank, size: usize) -> Vec<f64> {
    let half = bank.half;
    let side = (2 * half + 1) as usize;
    let mut out = vec![0.0; size * size];
    out.par_chunks_mut(size).enumerate().for_each(|(y, row)| {
        for (x, slot) in row.iter_mut().enumerate() {
            let kernel = bank.kernels[bins[y * size + x] as usize].taps();
            let mut acc = 0.0;
            for dy in -half..=half {
                let sy = y as i64 + dy;
                if sy < 0 || sy >= size as i64 {
                    continue;
                }
                let krow = ((dy + half) as usize) * side;
                for dx in -half..=half {
                    let sx = x as i64 + dx;
                    if sx < 0 || sx >= size as i64 {
                        continue;
                    }
                    acc += field[sy as usize * size + sx as usize]
                        * kernel[krow + (dx + half) as usize];
                }
            }
            *slot = acc;
        }
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_is_deterministic() {
        let a = SyntheticFinger::new(3, 99).render(64);
        let b = SyntheticFinger::new(3, 99).render(64);
        assert_eq!(a.image.pixels(), b.image.pixels());
        assert_eq!(a.mask.bits(), b.mask.bits());
    }

    #[test]
    fn identities_differ_substantially() {
        let a = SyntheticFinger::new(0, 7).render(128);
        let b = SyntheticFinger::new(1, 7).render(128);
        assert!(
            a.image.mean_abs_diff(&b.image) > 20.0,
            "distinct identities too similar: {}",
            a.image.mean_abs_diff(&b.image)
        );
    }

    #[test]
    fn background_is_zero_and_mask_covers_center() {
        let m = SyntheticFinger::new(5, 7).render(128);
        for y in 0..128 {
            for x in 0..128 {
                if !m.mask.get(x, y) {
                    assert_eq!(m.image.get(x, y), 0);
                }
            }
        }
        assert!(m.mask.get(64, 64), "print mask misses the image center");
        let coverage = m.mask.count() as f64 / (128.0 * 128.0);
        assert!(
            (0.3..0.8).contains(&coverage),
            "implausible print coverage {coverage}"
        );
    }

    #[test]
    fn ridges_use_full_contrast_range() {
        let m = SyntheticFinger::new(2, 11).render(128);
        let inside: Vec<u8> = (0..128 * 128)
            .filter(|&i| m.mask.bits()[i])
            .map(|i| m.image.pixels()[i])
            .collect();
        let dark = inside.iter().filter(|&&v| v < 64).count() as f64 / inside.len() as f64;
        let bright = inside.iter().filter(|&&v| v > 192).count() as f64 / inside.len() as f64;
        assert!(dark > 0.2, "too few ridge pixels: {dark}");
        assert!(bright > 0.2, "too few valley pixels: {bright}");
    }

    #[test]
    fn orientation_field_is_half_turn_periodic_in_binning() {
        // The kernel bank must treat theta and theta + pi identically.
        let bank = kernel_bank(0.1);
        assert_eq!(bank.kernels.len(), ORIENT_BINS);
        for k in &bank.kernels {
            let mean: f64 = k.taps().iter().sum::<f64>() / k.taps().len() as f64;
            assert!(mean.abs() < 1e-12, "kernel not zero-mean: {mean}");
        }
    }
}
