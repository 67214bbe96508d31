//! Oriented bandpass kernels used for ridge synthesis and enhancement.

/// Gaussian envelope times a cosine carrier oscillating across the ridge
/// direction `theta` (radians; the carrier is even, so kernels repeat every
/// half turn). Taps are shifted to zero mean so flat regions produce no
/// response.
#[derive(Clone, Debug)]
pub struct GaborKernel {
    half: i64,
    taps: Vec<f64>,
}

/// Envelope width as a fraction of the ridge period.
const SIGMA_FACTOR: f64 = 0.42;
/// Support radius in units of sigma, capped so kernels stay small.
const SUPPORT_SIGMAS: f64 = 2.2;
const MAX_HALF: f64 = 9.0;

impl GaborKernel {
    /// Builds the kernel for ridge orientation `theta` at spatial frequency
    /// `freq` (cycles per pixel, must be positive).
    pub fn new(theta: f64, freq: f64) -> GaborKernel {
        assert!(freq > 0.0, "kernel frequency must be positive, got {freq}");
        let sigma = SIGMA_FACTOR / freq;
        let half = (SUPPORT_SIGMAS * sigma).ceil().min(MAX_HALF) as i64;
        let (sin_t, cos_t) = theta.sin_cos();
        let side = (2 * half + 1) as usize;
        let mut taps = Vec::with_capacity(side * side);
        for dy in -half..=half {
            for dx in -half..=half {
                let (u, v) = (dx as f64, dy as f64);
                let along_normal = -u * sin_t + v * cos_t;
                let env = (-(u * u + v * v) / (2.0 * sigma * sigma)).exp();
                taps.push(env * (2.0 * std::f64::consts::PI * freq * along_normal).cos());
            }
        }
        let mean = taps.iter().sum::<f64>() / taps.len() as f64;
        for v in &mut taps {
            *v -= mean;
        }
        GaborKernel { half, taps }
    }

    /// Support radius: taps cover offsets in `[-half, half]` on both axes.
    pub fn half(&self) -> i64 {
        self.half
    }

    /// Row-major taps over the `(2*half+1)^2` support window.
    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    /// Tap at offset `(dx, dy)` from the kernel center.
    pub fn tap(&self, dx: i64, dy: i64) -> f64 {
        debug_assert!(dx.abs() <= self.half && dy.abs() <= self.half);
        let side = (2 * self.half + 1) as usize;
        self.taps[(dy + self.half) as usize * side + (dx + self.half) as usize]
    }
}
