//! Production filters against deliberately naive re-implementations.
//!
//! The oracles here trade speed for obviousness: direct double loops, no
//! integral images, no union-find, recursion-free flood fill. Integer-valued
//! outputs must match bit for bit; real-valued outputs within 1e-9.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use whorl_image::{
    box_filter, dilate, erode, largest_component, sobel_magnitude, threshold_mask, BinaryMask,
    GrayImage, ScalarField,
};

const INSTANCES: u64 = 24;
const REAL_TOL: f64 = 1e-9;

fn random_image(rng: &mut StdRng, w: usize, h: usize) -> GrayImage {
    GrayImage::from_pixels(w, h, (0..w * h).map(|_| rng.gen()).collect())
}

fn random_field(rng: &mut StdRng, w: usize, h: usize) -> ScalarField {
    ScalarField::from_values(w, h, (0..w * h).map(|_| rng.gen_range(0.0..50.0)).collect())
}

fn random_mask(rng: &mut StdRng, w: usize, h: usize) -> BinaryMask {
    BinaryMask::from_bits(w, h, (0..w * h).map(|_| rng.gen_bool(0.45)).collect())
}

// ── Oracles ───────────────────────────────────────────────────────────────

fn sobel_oracle(img: &GrayImage) -> Vec<f64> {
    let (w, h) = (img.width() as isize, img.height() as isize);
    let px = |x: isize, y: isize| img.get(x.clamp(0, w - 1) as usize, y.clamp(0, h - 1) as usize) as f64;
    let kx: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    let ky: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let (mut gx, mut gy) = (0.0, 0.0);
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let v = px(x + dx, y + dy);
                    gx += v * kx[(dy + 1) as usize][(dx + 1) as usize];
                    gy += v * ky[(dy + 1) as usize][(dx + 1) as usize];
                }
            }
            out.push(gx.hypot(gy));
        }
    }
    out
}

fn box_oracle(field: &ScalarField, k: usize) -> Vec<f64> {
    let r = (k / 2) as isize;
    let (w, h) = (field.width() as isize, field.height() as isize);
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let mut sum = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx >= 0 && ny >= 0 && nx < w && ny < h {
                        sum += field.get(nx as usize, ny as usize);
                    }
                }
            }
            out.push(sum);
        }
    }
    out
}

/// Queue-based flood fill, 8-connected, largest blob by count with
/// first-in-scan-order tie-breaking.
fn largest_component_oracle(mask: &BinaryMask) -> Vec<bool> {
    let (w, h) = (mask.width(), mask.height());
    let mut seen = vec![false; w * h];
    let mut best: Vec<usize> = Vec::new();
    for start in 0..w * h {
        if !mask.bits()[start] || seen[start] {
            continue;
        }
        let mut blob = Vec::new();
        let mut queue = std::collections::VecDeque::from([start]);
        seen[start] = true;
        while let Some(i) = queue.pop_front() {
            blob.push(i);
            let (x, y) = (i % w, i / w);
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if mask.bits()[j] && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        if blob.len() > best.len() {
            best = blob;
        }
    }
    let mut bits = vec![false; w * h];
    for i in best {
        bits[i] = true;
    }
    bits
}

fn morph_oracle(img: &GrayImage, radius: f64, dilate: bool) -> Vec<u8> {
    let (w, h) = (img.width() as isize, img.height() as isize);
    let r = radius.floor() as isize;
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let mut v: u8 = if dilate { 0 } else { 255 };
            for dy in -r..=r {
                for dx in -r..=r {
                    if ((dx * dx + dy * dy) as f64) > radius * radius {
                        continue;
                    }
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w || ny >= h {
                        continue;
                    }
                    let p = img.get(nx as usize, ny as usize);
                    v = if dilate { v.max(p) } else { v.min(p) };
                }
            }
            out.push(v);
        }
    }
    out
}

// ── Comparisons ───────────────────────────────────────────────────────────

#[test]
fn sobel_matches_direct_convolution() {
    for seed in 0..INSTANCES {
        let rng = &mut StdRng::seed_from_u64(seed);
        let w = rng.gen_range(3..24);
        let h = rng.gen_range(3..24);
        let img = random_image(rng, w, h);
        let fast = sobel_magnitude(&img);
        for (a, b) in fast.values().iter().zip(sobel_oracle(&img)) {
            assert!((a - b).abs() < REAL_TOL, "seed {seed}: {a} vs {b}");
        }
    }
}

#[test]
fn box_filter_matches_window_sums() {
    for seed in 0..INSTANCES {
        let rng = &mut StdRng::seed_from_u64(100 + seed);
        let w = rng.gen_range(4..30);
        let h = rng.gen_range(4..30);
        let k = 2 * rng.gen_range(0..6) + 1;
        let field = random_field(rng, w, h);
        let fast = box_filter(&field, k);
        for (i, (a, b)) in fast.values().iter().zip(box_oracle(&field, k)).enumerate() {
            assert!(
                (a - b).abs() < REAL_TOL,
                "seed {seed} k {k} at {i}: {a} vs {b}"
            );
        }
    }
}

#[test]
fn largest_component_matches_flood_fill() {
    for seed in 0..INSTANCES {
        let rng = &mut StdRng::seed_from_u64(200 + seed);
        let w = rng.gen_range(3..28);
        let h = rng.gen_range(3..28);
        let mask = random_mask(rng, w, h);
        let fast = largest_component(&mask);
        assert_eq!(
            fast.bits(),
            largest_component_oracle(&mask).as_slice(),
            "seed {seed}"
        );
    }
}

#[test]
fn morphology_matches_neighborhood_scan() {
    for seed in 0..INSTANCES {
        let rng = &mut StdRng::seed_from_u64(300 + seed);
        let w = rng.gen_range(3..20);
        let h = rng.gen_range(3..20);
        let radius = rng.gen_range(0.0..4.0);
        let img = random_image(rng, w, h);
        assert_eq!(
            dilate(&img, radius).pixels(),
            morph_oracle(&img, radius, true).as_slice(),
            "dilate seed {seed}"
        );
        assert_eq!(
            erode(&img, radius).pixels(),
            morph_oracle(&img, radius, false).as_slice(),
            "erode seed {seed}"
        );
    }
}

#[test]
fn threshold_matches_direct_comparison() {
    for seed in 0..INSTANCES {
        let rng = &mut StdRng::seed_from_u64(400 + seed);
        let w = rng.gen_range(3..25);
        let h = rng.gen_range(3..25);
        let field = random_field(rng, w, h);
        let frac = rng.gen_range(0.05..0.95);
        let mask = threshold_mask(&field, frac);
        let max = field.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for (bit, v) in mask.bits().iter().zip(field.values()) {
            assert_eq!(*bit, *v >= frac * max, "seed {seed}");
        }
    }
}

/// Dilation and erosion must be duals on complemented images.
#[test]
fn morphology_duality_under_complement() {
    let rng = &mut StdRng::seed_from_u64(77);
    let img = random_image(rng, 16, 16);
    let complement =
        GrayImage::from_fn(16, 16, |x, y| 255 - img.get(x, y));
    let a = dilate(&img, 2.0);
    let b = erode(&complement, 2.0);
    for (x, y) in (0..16).flat_map(|y| (0..16).map(move |x| (x, y))) {
        assert_eq!(a.get(x, y), 255 - b.get(x, y));
    }
}
