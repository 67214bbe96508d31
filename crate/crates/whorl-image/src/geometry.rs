//! Projective transforms and resampling.

use thiserror::Error;

use crate::gray::GrayImage;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("transform is singular or nearly so (|det| = {0:.3e})")]
    Singular(f64),
    #[error("transform contains non-finite entries")]
    NonFinite,
}

/// 3x3 projective transform mapping image-1 pixel coordinates into image-2's
/// frame. Construction rejects singular matrices, so inversion is always
/// available afterwards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    m: [[f64; 3]; 3],
}

const DET_FLOOR: f64 = 1e-12;

impl Homography {
    pub fn new(m: [[f64; 3]; 3]) -> Result<Homography, GeometryError> {
        if m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let d = det3(&m);
        if d.abs() < DET_FLOOR {
            return Err(GeometryError::Singular(d.abs()));
        }
        Ok(Homography { m })
    }

    pub fn identity() -> Homography {
        Homography {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    pub fn translation(tx: f64, ty: f64) -> Homography {
        Homography {
            m: [[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]],
        }
    }

    /// Rotation by `degrees` about the point `(cx, cy)`. Positive angles turn
    /// the +x axis toward +y, which reads clockwise with y pointing down.
    pub fn rotation_about(cx: f64, cy: f64, degrees: f64) -> Homography {
        let (s, c) = degrees.to_radians().sin_cos();
        Homography {
            m: [
                [c, -s, cx - c * cx + s * cy],
                [s, c, cy - s * cx - c * cy],
                [0.0, 0.0, 1.0],
            ],
        }
    }

    pub fn matrix(&self) -> &[[f64; 3]; 3] {
        &self.m
    }

    /// Scales the matrix so the bottom-right entry is 1 (it always is after
    /// construction via the public constructors, but estimated homographies
    /// arrive unnormalized).
    pub fn normalized(&self) -> Homography {
        let k = self.m[2][2];
        if k == 0.0 || k == 1.0 {
            return *self;
        }
        let mut m = self.m;
        for row in &mut m {
            for v in row {
                *v /= k;
            }
        }
        Homography { m }
    }

    /// `self` applied after `inner`: the result maps x to self(inner(x)).
    pub fn compose(&self, inner: &Homography) -> Homography {
        let a = &self.m;
        let b = &inner.m;
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
            }
        }
        Homography { m }
    }

    pub fn invert(&self) -> Homography {
        // Adjugate over determinant; construction guaranteed |det| > 0.
        let m = &self.m;
        let d = det3(m);
        let inv = |r0: usize, r1: usize, c0: usize, c1: usize| {
            (m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]) / d
        };
        Homography {
            m: [
                [inv(1, 2, 1, 2), -inv(0, 2, 1, 2), inv(0, 1, 1, 2)],
                [-inv(1, 2, 0, 2), inv(0, 2, 0, 2), -inv(0, 1, 0, 2)],
                [inv(1, 2, 0, 1), -inv(0, 2, 0, 1), inv(0, 1, 0, 1)],
            ],
        }
    }

    /// Maps a point, dividing through the projective scale.
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.m;
        let w = m[2][0] * x + m[2][1] * y + m[2][2];
        (
            (m[0][0] * x + m[0][1] * y + m[0][2]) / w,
            (m[1][0] * x + m[1][1] * y + m[1][2]) / w,
        )
    }
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Resamples `img` through `h` into a `out_width x out_height` canvas:
/// output pixel p takes the bilinear sample of the source at `h^-1(p)`.
/// Samples falling outside the source contribute 0 (background).
pub fn warp(img: &GrayImage, h: &Homography, out_width: usize, out_height: usize) -> GrayImage {
    let inv = h.invert();
    let (w, hgt) = (img.width() as isize, img.height() as isize);
    let mut out = GrayImage::new(out_width, out_height);
    for oy in 0..out_height {
        for ox in 0..out_width {
            let (sx, sy) = inv.apply(ox as f64, oy as f64);
            if !sx.is_finite() || !sy.is_finite() {
                continue;
            }
            let x0 = sx.floor();
            let y0 = sy.floor();
            let fx = sx - x0;
            let fy = sy - y0;
            let (x0, y0) = (x0 as isize, y0 as isize);
            let mut acc = 0.0;
            for (dx, dy, wgt) in [
                (0, 0, (1.0 - fx) * (1.0 - fy)),
                (1, 0, fx * (1.0 - fy)),
                (0, 1, (1.0 - fx) * fy),
                (1, 1, fx * fy),
            ] {
                if wgt == 0.0 {
                    continue;
                }
                let px = x0 + dx;
                let py = y0 + dy;
                if px < 0 || py < 0 || px >= w || py >= hgt {
                    continue; // background contributes 0
                }
                acc += wgt * img.get(px as usize, py as usize) as f64;
            }
            out.set(ox, oy, acc.round().clamp(0.0, 255.0) as u8);
        }
    }
    out
}

impl GrayImage {
    /// Rotation about the image center, same extents, background fill 0.
    pub fn rotate(&self, degrees: f64) -> GrayImage {
        let h = self.rotation_homography(degrees);
        warp(self, &h, self.width(), self.height())
    }

    /// The exact transform [`GrayImage::rotate`] applies, for building
    /// ground-truth correspondences.
    pub fn rotation_homography(&self, degrees: f64) -> Homography {
        let cx = (self.width() as f64 - 1.0) / 2.0;
        let cy = (self.height() as f64 - 1.0) / 2.0;
        Homography::rotation_about(cx, cy, degrees)
    }

    /// Bilinear resize mapping pixel centers; edges clamp instead of reading
    /// background, so resizing never darkens the border.
    pub fn resize(&self, out_width: usize, out_height: usize) -> GrayImage {
        assert!(out_width > 0 && out_height > 0, "resize to empty extents");
        let sx = self.width() as f64 / out_width as f64;
        let sy = self.height() as f64 / out_height as f64;
        let mut out = GrayImage::new(out_width, out_height);
        for oy in 0..out_height {
            for ox in 0..out_width {
                let u = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, self.width() as f64 - 1.0);
                let v = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, self.height() as f64 - 1.0);
                let x0 = u.floor() as usize;
                let y0 = v.floor() as usize;
                let x1 = (x0 + 1).min(self.width() - 1);
                let y1 = (y0 + 1).min(self.height() - 1);
                let fx = u - x0 as f64;
                let fy = v - y0 as f64;
                let top = self.get(x0, y0) as f64 * (1.0 - fx) + self.get(x1, y0) as f64 * fx;
                let bot = self.get(x0, y1) as f64 * (1.0 - fx) + self.get(x1, y1) as f64 * fx;
                let val = top * (1.0 - fy) + bot * fy;
                out.set(ox, oy, val.round().clamp(0.0, 255.0) as u8);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checker(w: usize, h: usize) -> GrayImage {
        GrayImage::from_fn(w, h, |x, y| if (x / 3 + y / 3) % 2 == 0 { 40 } else { 210 })
    }

    #[test]
    fn identity_warp_is_exact() {
        let img = checker(17, 13);
        let out = warp(&img, &Homography::identity(), 17, 13);
        assert_eq!(out, img);
    }

    #[test]
    fn integer_translation_shifts_exactly() {
        let img = checker(10, 10);
        let out = warp(&img, &Homography::translation(3.0, 0.0), 10, 10);
        for y in 0..10 {
            for x in 0..10 {
                let expected = if x < 3 { 0 } else { img.get(x - 3, y) };
                assert_eq!(out.get(x, y), expected);
            }
        }
    }

    #[test]
    fn zero_rotation_is_exact() {
        let img = checker(16, 16);
        assert_eq!(img.rotate(0.0), img);
    }

    #[test]
    fn rotation_half_turn_twice_is_near_identity() {
        let img = checker(16, 16);
        let twice = img.rotate(180.0).rotate(180.0);
        // Interior pixels survive two half turns up to rounding.
        for y in 2..14 {
            for x in 2..14 {
                let d = (twice.get(x, y) as i16 - img.get(x, y) as i16).abs();
                assert!(d <= 1, "pixel ({x},{y}) differs by {d}");
            }
        }
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let result = Homography::new([[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 0.0, 1.0]]);
        assert!(matches!(result, Err(GeometryError::Singular(_))));
    }

    #[test]
    fn inverse_round_trips_points() {
        let h = Homography::rotation_about(8.0, 4.0, 33.0)
            .compose(&Homography::translation(2.5, -1.0));
        let inv = h.invert();
        for &(x, y) in &[(0.0, 0.0), (5.0, 7.0), (-3.0, 2.0)] {
            let (u, v) = h.apply(x, y);
            let (bx, by) = inv.apply(u, v);
            assert!((bx - x).abs() < 1e-9 && (by - y).abs() < 1e-9);
        }
    }

    #[test]
    fn compose_applies_inner_first() {
        let rot = Homography::rotation_about(0.0, 0.0, 90.0);
        let shift = Homography::translation(10.0, 0.0);
        // shift after rotation: (1,0) -> rot -> (0,1) -> shift -> (10,1)
        let (x, y) = shift.compose(&rot).apply(1.0, 0.0);
        assert!((x - 10.0).abs() < 1e-12 && (y - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rotation_direction_maps_plus_x_toward_plus_y() {
        let h = Homography::rotation_about(0.0, 0.0, 90.0);
        let (x, y) = h.apply(1.0, 0.0);
        assert!(x.abs() < 1e-12 && (y - 1.0).abs() < 1e-12);
    }

    #[test]
    fn resize_constant_image_stays_constant() {
        let img = GrayImage::from_pixels(9, 9, vec![123; 81]);
        let out = img.resize(12, 12);
        assert!(out.pixels().iter().all(|&p| p == 123));
    }
}
