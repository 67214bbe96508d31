use serde::{Deserialize, Serialize};

/// One selected cell correspondence with its confidence.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchedCell {
    /// Flat row-major cell index in image 1.
    pub i: usize,
    /// Flat row-major cell index in image 2.
    pub j: usize,
    pub confidence: f64,
}

/// Mutual-best matches between two cell grids.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MatchSet {
    pub cells: Vec<MatchedCell>,
    /// Cells per grid side.
    pub grid_n: usize,
    /// Pixels per cell.
    pub cell_size: usize,
}

/// Center pixel of a flat cell index (integer convention: the first 8-pixel
/// cell is centered at (4, 4)).
pub fn cell_to_pixel(flat: usize, grid_n: usize, cell_size: usize) -> (f64, f64) {
    let (row, col) = (flat / grid_n, flat % grid_n);
    (
        (col * cell_size + cell_size / 2) as f64,
        (row * cell_size + cell_size / 2) as f64,
    )
}

impl MatchSet {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Matches as pixel-center coordinate pairs `((x1, y1), (x2, y2))`.
    pub fn pixel_pairs(&self) -> Vec<((f64, f64), (f64, f64))> {
        self.cells
            .iter()
            .map(|m| {
                (
                    cell_to_pixel(m.i, self.grid_n, self.cell_size),
                    cell_to_pixel(m.j, self.grid_n, self.cell_size),
                )
            })
            .collect()
    }
}

/// Mutual-nearest-neighbor selection over a confidence matrix.
///
/// A pair `(i, j)` survives when `conf[i][j]` is the maximum of row `i` and
/// of column `j` (first maximum wins on exact ties, so lower indices are
/// preferred) and is at least `threshold`. The result is one-to-one by
/// construction.
pub fn select_matches(
    conf: &[f64],
    n_a: usize,
    n_b: usize,
    threshold: f64,
    grid_n: usize,
    cell_size: usize,
) -> MatchSet {
    assert_eq!(conf.len(), n_a * n_b, "confidence matrix shape mismatch");
    let mut row_best = vec![0usize; n_a];
    for i in 0..n_a {
        let row = &conf[i * n_b..(i + 1) * n_b];
        let mut best = 0;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        row_best[i] = best;
    }
    let mut col_best = vec![0usize; n_b];
    for j in 0..n_b {
        let mut best = 0;
        for i in 0..n_a {
            if conf[i * n_b + j] > conf[best * n_b + j] {
                best = i;
            }
        }
        col_best[j] = best;
    }
    let mut cells = Vec::new();
    for i in 0..n_a {
        let j = row_best[i];
        let c = conf[i * n_b + j];
        if col_best[j] == i && c >= threshold {
            cells.push(MatchedCell { i, j, confidence: c });
        }
    }
    MatchSet { cells, grid_n, cell_size }
}
