//! Classic 2-D gradient noise.
//!
//! Lattice gradients come from a seeded integer hash, corners contribute
//! offset-dot-gradient values, and a smootherstep fade blends them. The field
//! is exactly zero on lattice points and bounded to `[-1, 1]` (the raw
//! gradient-noise bound is sqrt(2)/2; values are rescaled by sqrt(2)).

use crate::gray::ScalarField;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Unit gradient for lattice point `(ix, iy)` under `seed`.
fn gradient(seed: u64, ix: i64, iy: i64) -> (f64, f64) {
    let h = splitmix(seed ^ splitmix(ix as u64 ^ splitmix(iy as u64)));
    let angle = (h >> 11) as f64 / (1u64 << 53) as f64 * std::f64::consts::TAU;
    angle.sin_cos()
}

/// Smootherstep fade: zero value and zero first/second derivative at 0 and 1.
fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Samples one point of the noise field; `cell` is the lattice spacing in
/// pixels.
pub fn perlin_sample(seed: u64, x: f64, y: f64, cell: f64) -> f64 {
    let u = x / cell;
    let v = y / cell;
    let ix = u.floor();
    let iy = v.floor();
    let fx = u - ix;
    let fy = v - iy;
    let (ix, iy) = (ix as i64, iy as i64);
    let corner = |dx: i64, dy: i64| -> f64 {
        let (gy, gx) = gradient(seed, ix + dx, iy + dy);
        gx * (fx - dx as f64) + gy * (fy - dy as f64)
    };
    let n00 = corner(0, 0);
    let n10 = corner(1, 0);
    let n01 = corner(0, 1);
    let n11 = corner(1, 1);
    let sx = fade(fx);
    let sy = fade(fy);
    let raw = lerp(lerp(n00, n10, sx), lerp(n01, n11, sx), sy);
    (raw * std::f64::consts::SQRT_2).clamp(-1.0, 1.0)
}

/// Full-field sampling of [`perlin_sample`] over a `width x height` raster.
pub fn perlin_field(width: usize, height: usize, cell: f64, seed: u64) -> ScalarField {
    assert!(cell > 0.0 && cell.is_finite(), "lattice spacing must be positive");
    let mut out = ScalarField::new(width, height);
    for y in 0..height {
        for x in 0..width {
            out.set(x, y, perlin_sample(seed, x as f64, y as f64, cell));
        }
    }
    out
}
