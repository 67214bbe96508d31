use rand::Rng;
use serde::{Deserialize, Serialize};
use whorl_image::{BinaryMask, GrayImage};

use crate::{corrupt, CorruptionKind, SyntheticFinger};

/// Rotation range for the second capture, degrees either way.
pub const MAX_ROTATION_DEG: f64 = 60.0;

/// Corruption severity range for generated pairs.
const SEVERITY_RANGE: std::ops::Range<f64> = 0.2..0.65;

/// A grid cell must have at least this fraction of its pixels on the print
/// (in both images) to take part in a correspondence.
const CELL_FOREGROUND_MIN: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairLabel {
    Genuine,
    Imposter,
}

/// Cell-level ground truth for a registered pair.
///
/// The images are tiled into `rows` x `cols` cells of `cell_size` pixels.
/// `targets[r * cols + c]` is the image-2 cell `(row, col)` that the center
/// of image-1 cell `(r, c)` lands on under the true transform, or `None`
/// when the cell is background, maps outside the frame, or lost an
/// injectivity tie. The mapping is always injective: no two sources share a
/// target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceGrid {
    pub rows: usize,
    pub cols: usize,
    pub cell_size: usize,
    pub targets: Vec<Option<(u16, u16)>>,
}

impl CorrespondenceGrid {
    /// All-background grid (every cell unmatched), used for imposter pairs.
    pub fn empty(rows: usize, cols: usize, cell_size: usize) -> CorrespondenceGrid {
        CorrespondenceGrid {
            rows,
            cols,
            cell_size,
            targets: vec![None; rows * cols],
        }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Matched `(source_cell, target_cell)` pairs as flat row-major indices.
    pub fn matched(&self) -> Vec<(usize, usize)> {
        self.targets
            .iter()
            .enumerate()
            .filter_map(|(i, t)| t.map(|(r, c)| (i, r as usize * self.cols + c as usize)))
            .collect()
    }

    /// Image-1 cells with no counterpart (background and off-frame alike).
    pub fn unmatched_sources(&self) -> Vec<usize> {
        self.targets
            .iter()
            .enumerate()
            .filter_map(|(i, t)| t.is_none().then_some(i))
            .collect()
    }

    /// Image-2 cells no source maps to.
    pub fn unmatched_targets(&self) -> Vec<usize> {
        let mut hit = vec![false; self.rows * self.cols];
        for (_, j) in self.matched() {
            hit[j] = true;
        }
        hit.iter()
            .enumerate()
            .filter_map(|(j, &h)| (!h).then_some(j))
            .collect()
    }

    pub fn n_matched(&self) -> usize {
        self.targets.iter().filter(|t| t.is_some()).count()
    }

    pub fn is_injective(&self) -> bool {
        let mut seen = vec![false; self.rows * self.cols];
        for (_, j) in self.matched() {
            if seen[j] {
                return false;
            }
            seen[j] = true;
        }
        true
    }

    /// Pixel coordinates of a cell's center (integer convention: cell (0,0)
    /// of 8-pixel cells is centered at pixel (4, 4)).
    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            (col * self.cell_size + self.cell_size / 2) as f64,
            (row * self.cell_size + self.cell_size / 2) as f64,
        )
    }
}

/// Everything recorded about a generated pair except the pixels.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PairTruth {
    pub label: PairLabel,
    pub identity_a: u64,
    pub identity_b: u64,
    /// True rotation applied to image 2, degrees.
    pub theta_deg: f64,
    pub corruption: CorruptionKind,
    pub severity: f64,
    pub grid: CorrespondenceGrid,
}

/// A labeled image pair plus its ground truth.
#[derive(Clone)]
pub struct PairSample {
    pub a: GrayImage,
    pub b: GrayImage,
    pub truth: PairTruth,
}

/// Two captures of the same finger: the clean master and a rotated, corrupted
/// re-capture, with the cell correspondence implied by the rotation.
pub fn make_genuine_pair(
    finger: &SyntheticFinger,
    size: usize,
    cell_size: usize,
    rng: &mut impl Rng,
) -> PairSample {
    assert!(size % cell_size == 0, "image size {size} not a multiple of cell size {cell_size}");
    let master = finger.render(size);
    let theta_deg = rng.gen_range(-MAX_ROTATION_DEG..MAX_ROTATION_DEG);
    let (kind, severity) = draw_corruption(rng);
    let noise_seed = rng.gen::<u64>();

    let b = corrupt(&master.image.rotate(theta_deg), kind, severity, noise_seed);
    let grid = correspondence_grid(&master.mask, theta_deg, cell_size);
    PairSample {
        a: master.image,
        b,
        truth: PairTruth {
            label: PairLabel::Genuine,
            identity_a: finger.identity(),
            identity_b: finger.identity(),
            theta_deg,
            corruption: kind,
            severity,
            grid,
        },
    }
}

/// Captures of two different fingers. The second is rotated and corrupted
/// like a genuine re-capture would be; the correspondence grid is empty.
pub fn make_imposter_pair(
    finger_a: &SyntheticFinger,
    finger_b: &SyntheticFinger,
    size: usize,
    cell_size: usize,
    rng: &mut impl Rng,
) -> PairSample {
    assert!(size % cell_size == 0, "image size {size} not a multiple of cell size {cell_size}");
    assert!(
        finger_a.identity() != finger_b.identity(),
        "imposter pair needs two distinct identities"
    );
    let a = finger_a.render(size).image;
    let theta_deg = rng.gen_range(-MAX_ROTATION_DEG..MAX_ROTATION_DEG);
    let (kind, severity) = draw_corruption(rng);
    let noise_seed = rng.gen::<u64>();
    let b = corrupt(&finger_b.render(size).image.rotate(theta_deg), kind, severity, noise_seed);
    let n = size / cell_size;
    PairSample {
        a,
        b,
        truth: PairTruth {
            label: PairLabel::Imposter,
            identity_a: finger_a.identity(),
            identity_b: finger_b.identity(),
            theta_deg,
            corruption: kind,
            severity,
            grid: CorrespondenceGrid::empty(n, n, cell_size),
        },
    }
}

fn draw_corruption(rng: &mut impl Rng) -> (CorruptionKind, f64) {
    let kind = match rng.gen_range(0..3u8) {
        0 => CorruptionKind::SensorNoise,
        1 => CorruptionKind::Dryness,
        _ => CorruptionKind::OverPressure,
    };
    (kind, rng.gen_range(SEVERITY_RANGE))
}

/// Builds the cell-level ground truth for a rotation of `theta_deg` degrees
/// about the image center.
///
/// A source cell maps to the cell its center lands in. Cells are dropped
/// when mostly background in image 1, when the mapped center leaves the
/// frame or lands on image-2 background, and when two sources contend for
/// one target (the center nearest the target cell's own center wins, lowest
/// source index breaking exact ties).
pub fn correspondence_grid(
    mask: &BinaryMask,
    theta_deg: f64,
    cell_size: usize,
) -> CorrespondenceGrid {
    let size = mask.width();
    assert_eq!(mask.height(), size, "correspondence grid expects square images");
    let n = size / cell_size;
    let mask_img = mask.to_image();
    let h = mask_img.rotation_homography(theta_deg);
    let rotated = mask_img.rotate(theta_deg);

    let coverage = |img: &GrayImage, row: usize, col: usize| {
        let mut on = 0usize;
        for y in row * cell_size..(row + 1) * cell_size {
            for x in col * cell_size..(col + 1) * cell_size {
                if img.get(x, y) >= 128 {
                    on += 1;
                }
            }
        }
        on as f64 / (cell_size * cell_size) as f64
    };

    // (target_flat, distance to target center, source_flat)
    let mut candidates: Vec<(usize, f64, usize)> = Vec::new();
    for row in 0..n {
        for col in 0..n {
            if coverage(&mask_img, row, col) < CELL_FOREGROUND_MIN {
                continue;
            }
            let cx = (col * cell_size + cell_size / 2) as f64;
            let cy = (row * cell_size + cell_size / 2) as f64;
            let (px, py) = h.apply(cx, cy);
            if px < 0.0 || py < 0.0 || px >= size as f64 || py >= size as f64 {
                continue;
            }
            let (tc, tr) = ((px / cell_size as f64) as usize, (py / cell_size as f64) as usize);
            if tc >= n || tr >= n || coverage(&rotated, tr, tc) < CELL_FOREGROUND_MIN {
                continue;
            }
            let dx = px - (tc * cell_size + cell_size / 2) as f64;
            let dy = py - (tr * cell_size + cell_size / 2) as f64;
            candidates.push((tr * n + tc, dx * dx + dy * dy, row * n + col));
        }
    }

    // Injectivity: one source per target, nearest center first.
    candidates.sort_by(|a, b| {
        (a.0, a.1, a.2)
            .partial_cmp(&(b.0, b.1, b.2))
            .expect("cell distances are finite")
    });
    let mut targets = vec![None; n * n];
    let mut last_target = usize::MAX;
    for (tgt, _, src) in candidates {
        if tgt != last_target {
            targets[src] = Some(((tgt / n) as u16, (tgt % n) as u16));
            last_target = tgt;
        }
    }
    CorrespondenceGrid { rows: n, cols: n, cell_size, targets }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_rotation_maps_foreground_cells_to_themselves() {
        let master = SyntheticFinger::new(1, 5).render(128);
        let grid = correspondence_grid(&master.mask, 0.0, 8);
        assert!(grid.n_matched() > 40, "only {} matched cells", grid.n_matched());
        for (i, j) in grid.matched() {
            assert_eq!(i, j, "identity rotation moved cell {i} to {j}");
        }
        assert!(grid.is_injective());
    }

    #[test]
    fn grid_is_injective_and_in_bounds_under_rotation() {
        let master = SyntheticFinger::new(2, 5).render(128);
        for theta in [-55.0, -20.0, 10.0, 45.0] {
            let grid = correspondence_grid(&master.mask, theta, 8);
            assert!(grid.is_injective(), "duplicate target at theta {theta}");
            assert!(grid.n_matched() > 20, "theta {theta}: {} matches", grid.n_matched());
            for &t in grid.targets.iter().flatten() {
                assert!((t.0 as usize) < grid.rows && (t.1 as usize) < grid.cols);
            }
        }
    }

    #[test]
    fn genuine_pair_is_reproducible_and_labeled() {
        let finger = SyntheticFinger::new(4, 9);
        let p1 = make_genuine_pair(&finger, 128, 8, &mut ChaCha8Rng::seed_from_u64(3));
        let p2 = make_genuine_pair(&finger, 128, 8, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(p1.a.pixels(), p2.a.pixels());
        assert_eq!(p1.b.pixels(), p2.b.pixels());
        assert_eq!(p1.truth.grid, p2.truth.grid);
        assert_eq!(p1.truth.label, PairLabel::Genuine);
        assert_eq!(p1.truth.identity_a, p1.truth.identity_b);
        assert!(p1.truth.theta_deg.abs() <= MAX_ROTATION_DEG);
    }

    #[test]
    fn imposter_pair_has_empty_grid_and_distinct_identities() {
        let fa = SyntheticFinger::new(0, 9);
        let fb = SyntheticFinger::new(1, 9);
        let p = make_imposter_pair(&fa, &fb, 128, 8, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(p.truth.label, PairLabel::Imposter);
        assert_ne!(p.truth.identity_a, p.truth.identity_b);
        assert_eq!(p.truth.grid.n_matched(), 0);
        assert_eq!(p.truth.grid.targets.len(), 16 * 16);
    }

    #[test]
    fn unmatched_partitions_cover_the_grid() {
        let master = SyntheticFinger::new(3, 5).render(128);
        let grid = correspondence_grid(&master.mask, 30.0, 8);
        assert_eq!(grid.matched().len() + grid.unmatched_sources().len(), grid.len());
        assert_eq!(grid.matched().len() + grid.unmatched_targets().len(), grid.len());
    }
}
