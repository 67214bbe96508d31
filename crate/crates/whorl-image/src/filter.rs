//! Classical filters: Sobel gradients, box sums, threshold segmentation,
//! connected components and grayscale morphology.

use crate::gray::{BinaryMask, GrayImage, ScalarField};

/// Gradient magnitude `sqrt(gx^2 + gy^2)` from the 3x3 Sobel pair, with
/// border pixels replicated.
pub fn sobel_magnitude(img: &GrayImage) -> ScalarField {
    let (w, h) = (img.width(), img.height());
    assert!(w >= 1 && h >= 1, "sobel on an empty image");
    let sample = |x: isize, y: isize| -> f64 {
        let xc = x.clamp(0, w as isize - 1) as usize;
        let yc = y.clamp(0, h as isize - 1) as usize;
        img.get(xc, yc) as f64
    };
    let mut out = ScalarField::new(w, h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let tl = sample(x - 1, y - 1);
            let tc = sample(x, y - 1);
            let tr = sample(x + 1, y - 1);
            let ml = sample(x - 1, y);
            let mr = sample(x + 1, y);
            let bl = sample(x - 1, y + 1);
            let bc = sample(x, y + 1);
            let br = sample(x + 1, y + 1);
            let gx = (tr + 2.0 * mr + br) - (tl + 2.0 * ml + bl);
            let gy = (bl + 2.0 * bc + br) - (tl + 2.0 * tc + tr);
            out.set(x as usize, y as usize, (gx * gx + gy * gy).sqrt());
        }
    }
    out
}

/// Un-normalized box sum over a `k x k` window (`k` odd), computed through an
/// integral image. Windows are clipped at the borders, which equals zero
/// padding for a sum.
pub fn box_filter(field: &ScalarField, k: usize) -> ScalarField {
    assert!(k % 2 == 1, "box filter size must be odd, got {k}");
    let (w, h) = (field.width(), field.height());
    let r = (k / 2) as isize;
    // integral[y][x] holds the sum over the rectangle [0, x) x [0, y).
    let mut integral = vec![0.0f64; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row_sum = 0.0;
        for x in 0..w {
            row_sum += field.get(x, y);
            integral[(y + 1) * (w + 1) + (x + 1)] = integral[y * (w + 1) + (x + 1)] + row_sum;
        }
    }
    let rect = |x0: usize, y0: usize, x1: usize, y1: usize| -> f64 {
        integral[y1 * (w + 1) + x1] - integral[y0 * (w + 1) + x1] - integral[y1 * (w + 1) + x0]
            + integral[y0 * (w + 1) + x0]
    };
    let mut out = ScalarField::new(w, h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let x0 = (x - r).max(0) as usize;
            let y0 = (y - r).max(0) as usize;
            let x1 = ((x + r + 1).min(w as isize)) as usize;
            let y1 = ((y + r + 1).min(h as isize)) as usize;
            out.set(x as usize, y as usize, rect(x0, y0, x1, y1));
        }
    }
    out
}

/// Pixels at or above `fraction` of the field maximum. An all-zero field
/// yields an empty mask, which callers detect via [`BinaryMask::is_empty`].
pub fn threshold_mask(field: &ScalarField, fraction: f64) -> BinaryMask {
    assert!(
        (0.0..=1.0).contains(&fraction),
        "threshold fraction must be in [0,1], got {fraction}"
    );
    let max = field.max();
    let mut mask = BinaryMask::new(field.width(), field.height());
    if max <= 0.0 {
        return mask;
    }
    let cut = fraction * max;
    for y in 0..field.height() {
        for x in 0..field.width() {
            if field.get(x, y) >= cut {
                mask.set(x, y, true);
            }
        }
    }
    mask
}

/// Largest 8-connected component of the mask, by pixel count. Ties keep the
/// component whose first pixel comes earliest in scan order, so the result
/// is deterministic. An empty mask stays empty.
pub fn largest_component(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    let mut labels = vec![0u32; w * h]; // 0 = unlabeled
    let mut sizes: Vec<usize> = vec![0]; // indexed by label
    let mut next = 1u32;
    let mut queue: Vec<(usize, usize)> = Vec::new();
    for sy in 0..h {
        for sx in 0..w {
            if !mask.get(sx, sy) || labels[sy * w + sx] != 0 {
                continue;
            }
            let label = next;
            next += 1;
            let mut size = 0usize;
            labels[sy * w + sx] = label;
            queue.push((sx, sy));
            while let Some((x, y)) = queue.pop() {
                size += 1;
                for dy in -1isize..=1 {
                    for dx in -1isize..=1 {
                        if dx == 0 && dy == 0 {
                            continue;
                        }
                        let nx = x as isize + dx;
                        let ny = y as isize + dy;
                        if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                            continue;
                        }
                        let (nx, ny) = (nx as usize, ny as usize);
                        if mask.get(nx, ny) && labels[ny * w + nx] == 0 {
                            labels[ny * w + nx] = label;
                            queue.push((nx, ny));
                        }
                    }
                }
            }
            sizes.push(size);
        }
    }
    if sizes.len() == 1 {
        return BinaryMask::new(w, h);
    }
    // First maximum wins, and labels are assigned in scan order.
    let mut best = 1u32;
    for label in 2..next {
        if sizes[label as usize] > sizes[best as usize] {
            best = label;
        }
    }
    let bits = labels.iter().map(|&l| l == best).collect();
    BinaryMask::from_bits(w, h, bits)
}

/// Offsets of the disk structuring element `{(dx,dy) : dx^2+dy^2 <= r^2}`.
/// A radius below 1 leaves only the center pixel, the identity element.
fn disk_offsets(radius: f64) -> Vec<(isize, isize)> {
    assert!(
        radius.is_finite() && radius >= 0.0,
        "morphology radius must be finite and non-negative"
    );
    let r = radius.floor() as isize;
    let r2 = radius * radius;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if (dx * dx + dy * dy) as f64 <= r2 {
                out.push((dx, dy));
            }
        }
    }
    out
}

fn morph(img: &GrayImage, radius: f64, pick: impl Fn(u8, u8) -> u8, init: u8) -> GrayImage {
    let (w, h) = (img.width(), img.height());
    let offsets = disk_offsets(radius);
    let mut out = GrayImage::new(w, h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut v = init;
            for &(dx, dy) in &offsets {
                let nx = x + dx;
                let ny = y + dy;
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                v = pick(v, img.get(nx as usize, ny as usize));
            }
            out.set(x as usize, y as usize, v);
        }
    }
    out
}

/// Grayscale dilation: max over the disk neighborhood. On dark-ridge images
/// this thins the ridges, which is how dry-skin capture looks.
pub fn dilate(img: &GrayImage, radius: f64) -> GrayImage {
    morph(img, radius, u8::max, 0)
}

/// Grayscale erosion: min over the disk neighborhood. Thickens dark ridges,
/// the over-pressure look.
pub fn erode(img: &GrayImage, radius: f64) -> GrayImage {
    morph(img, radius, u8::min, 255)
}
