//! Ridge enhancement: oriented bandpass filtering from an estimated
//! orientation field, squashed to a near-binary ridge map.

use rayon::prelude::*;
use whorl_image::{box_filter, GaborKernel, GrayImage, ScalarField};

/// Pluggable enhancement stage. The pipeline only needs "some deterministic
/// ridge-contrast boost", so alternative implementations can drop in.
pub trait Enhancer: Sync {
    fn enhance(&self, img: &GrayImage) -> GrayImage;
}

/// Orientation bins for the kernel bank; half-turn periodic.
const ORIENT_BINS: usize = 16;
/// Filter responses with RMS below this are treated as "no signal" so flat
/// inputs come back flat instead of having rounding noise amplified.
const RESPONSE_FLOOR: f64 = 1e-6;

/// Default enhancer: smoothed structure-tensor orientation estimation, a
/// 16-kernel oriented bandpass bank, and a tanh squash to near-binary ridges.
/// Pure function of the input image.
#[derive(Clone, Copy, Debug)]
pub struct GaborEnhancer {
    /// Center ridge frequency in cycles per pixel.
    pub freq: f64,
    /// Box window width (pixels) for smoothing the structure tensor.
    pub tensor_window: usize,
    /// Box window width (pixels) for the local response-energy estimate.
    pub energy_window: usize,
    /// Gain of the tanh squash applied to the locally normalized response.
    pub gain: f64,
}

impl Default for GaborEnhancer {
    fn default() -> GaborEnhancer {
        GaborEnhancer {
            freq: 0.11,
            tensor_window: 17,
            energy_window: 25,
            gain: 2.2,
        }
    }
}

impl Enhancer for GaborEnhancer {
    fn enhance(&self, img: &GrayImage) -> GrayImage {
        let (w, h) = (img.width(), img.height());
        let field = img.to_unit_f64();
        let bins = self.orientation_bins(img);
        let bank: Vec<GaborKernel> = (0..ORIENT_BINS)
            .map(|b| {
                let theta = b as f64 * std::f64::consts::PI / ORIENT_BINS as f64;
                GaborKernel::new(theta, self.freq)
            })
            .collect();

        let mut response = vec![0.0; w * h];
        response
            .par_chunks_mut(w)
            .enumerate()
            .for_each(|(y, row)| {
                for (x, slot) in row.iter_mut().enumerate() {
                    let kernel = &bank[bins[y * w + x] as usize];
                    let half = kernel.half();
                    let mut acc = 0.0;
                    // Clamped sampling: a kernel truncated at the image edge
                    // loses its zero mean and would invent border ridges on
                    // flat input, so replicate the edge rows instead.
                    for dy in -half..=half {
                        let sy = (y as i64 + dy).clamp(0, h as i64 - 1) as usize;
                        for dx in -half..=half {
                            let sx = (x as i64 + dx).clamp(0, w as i64 - 1) as usize;
                            acc += field[sy * w + sx] * kernel.tap(dx, dy);
                        }
                    }
                    *slot = acc;
                }
            });

        // Normalize by the RMS of the responding pixels so the tanh gain
        // means the same thing for faint and strong prints. The population
        // is "pixels with meaningful response relative to the strongest",
        // which stays the print area whether the background arrives as black
        // (original) or mid-gray (an already-enhanced image); an absolute
        // cutoff there would make a second pass renormalize differently.
        // Local contrast normalization: divide by the box-averaged response
        // energy. Rescaling the response in any neighborhood (which is what
        // running the filter again does, up to waveform shape) then leaves
        // the normalized ratio unchanged, so repeated enhancement is close
        // to a fixed point. It also equalizes faint and strong print areas.
        let mut energy = ScalarField::new(w, h);
        for y in 0..h {
            for x in 0..w {
                energy.set(x, y, response[y * w + x].powi(2));
            }
        }
        let energy = box_filter(&energy, self.energy_window);
        let peak = energy.max();
        if peak < RESPONSE_FLOOR * RESPONSE_FLOOR {
            // No oriented energy anywhere: flat mid-gray, no invented ridges.
            return GrayImage::from_pixels(w, h, vec![128; w * h]);
        }
        // Neighborhoods far quieter than the loudest one read as background;
        // the floor pins their ratio near zero instead of amplifying noise.
        let floor = 4e-4 * peak;

        let pixels = (0..w * h)
            .map(|i| {
                let denom = (energy.values()[i] + floor).sqrt();
                let t = (self.gain * response[i] / denom).tanh();
                (127.5 * (1.0 + t)).round().clamp(0.0, 255.0) as u8
            })
            .collect();
        GrayImage::from_pixels(w, h, pixels)
    }
}

impl GaborEnhancer {
    /// Per-pixel orientation bin from the box-smoothed structure tensor.
    /// The doubled-angle trick averages gradients without cancellation; the
    /// ridge direction is perpendicular to the dominant gradient axis.
    fn orientation_bins(&self, img: &GrayImage) -> Vec<u8> {
        let (w, h) = (img.width(), img.height());
        let at = |x: isize, y: isize| {
            let cx = x.clamp(0, w as isize - 1) as usize;
            let cy = y.clamp(0, h as isize - 1) as usize;
            img.get(cx, cy) as f64 / 255.0
        };
        let mut j11 = ScalarField::new(w, h);
        let mut j22 = ScalarField::new(w, h);
        let mut j12 = ScalarField::new(w, h);
        for y in 0..h as isize {
            for x in 0..w as isize {
                let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                    - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
                let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                    - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
                j11.set(x as usize, y as usize, gx * gx);
                j22.set(x as usize, y as usize, gy * gy);
                j12.set(x as usize, y as usize, gx * gy);
            }
        }
        let j11 = box_filter(&j11, self.tensor_window);
        let j22 = box_filter(&j22, self.tensor_window);
        let j12 = box_filter(&j12, self.tensor_window);

        let per = std::f64::consts::PI / ORIENT_BINS as f64;
        let mut bins = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let grad_axis = 0.5 * (2.0 * j12.get(x, y)).atan2(j11.get(x, y) - j22.get(x, y));
                let ridge = (grad_axis + std::f64::consts::FRAC_PI_2)
                    .rem_euclid(std::f64::consts::PI);
                bins.push(((ridge / per).round() as usize % ORIENT_BINS) as u8);
            }
        }
        bins
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stripes(theta: f64, freq: f64) -> GrayImage {
        // Clean sinusoidal ridges at a known orientation.
        let (s, c) = theta.sin_cos();
        GrayImage::from_fn(96, 96, |x, y| {
            let phase =
                2.0 * std::f64::consts::PI * freq * (-(x as f64) * s + y as f64 * c);
            (127.5 * (1.0 + phase.cos())).round() as u8
        })
    }

    #[test]
    fn constant_image_stays_nearly_constant() {
        for v in [0u8, 128, 255] {
            let img = GrayImage::from_pixels(64, 64, vec![v; 64 * 64]);
            let out = GaborEnhancer::default().enhance(&img);
            let lo = *out.pixels().iter().min().unwrap();
            let hi = *out.pixels().iter().max().unwrap();
            assert!(hi - lo <= 2, "value {v}: output spans {lo}..{hi}");
        }
    }

    #[test]
    fn striped_input_keeps_its_stripes() {
        let img = stripes(0.4, 0.11);
        let out = GaborEnhancer::default().enhance(&img);
        // Enhanced ridges correlate with the input pattern away from borders:
        // bright input pixels stay mostly bright, dark stay dark.
        let mut agree = 0usize;
        let mut total = 0usize;
        for y in 12..84 {
            for x in 12..84 {
                let a = img.get(x, y) >= 128;
                let b = out.get(x, y) >= 128;
                total += 1;
                if a == b {
                    agree += 1;
                }
            }
        }
        let frac = agree as f64 / total as f64;
        assert!(frac > 0.9, "only {frac:.3} of pixels kept their phase");
    }

    #[test]
    fn enhancement_is_deterministic() {
        let img = stripes(1.1, 0.12);
        let e = GaborEnhancer::default();
        assert_eq!(e.enhance(&img).pixels(), e.enhance(&img).pixels());
    }

    #[test]
    fn orientation_bins_track_the_stripe_direction() {
        let e = GaborEnhancer::default();
        for bin in [0usize, 4, 8, 12] {
            let theta = bin as f64 * std::f64::consts::PI / ORIENT_BINS as f64;
            let img = stripes(theta, 0.11);
            let bins = e.orientation_bins(&img);
            let mut hits = 0usize;
            let mut total = 0usize;
            for y in 20..76 {
                for x in 20..76 {
                    let b = bins[y * 96 + x] as usize;
                    let d = (b + ORIENT_BINS - bin) % ORIENT_BINS;
                    total += 1;
                    if d <= 1 || d >= ORIENT_BINS - 1 {
                        hits += 1;
                    }
                }
            }
            assert!(
                hits as f64 / total as f64 > 0.85,
                "bin {bin}: only {hits}/{total} pixels within one bin"
            );
        }
    }
}
