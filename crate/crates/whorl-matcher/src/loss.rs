use whorl_autograd::Tensor;
use whorl_synth::CorrespondenceGrid;

use crate::ConfidenceMaps;

/// Negative log-likelihood of the ground-truth assignment under the
/// confidence factors.
///
/// Matched cells `(i, j)` are charged under every factor present: the
/// row-normalized factor at `(i, j)` and, in dual mode, the
/// column-normalized factor at `(i, j)`. When a dustbin is present,
/// unmatched source cells are charged to the row factor's dustbin column
/// and (dual mode) unhit target cells to the column factor's dustbin row.
/// The result is the mean negative log over all charged entries.
///
/// Returns `None` when nothing is supervised (no matches and no dustbin),
/// which callers should treat as "skip this pair".
pub fn registration_loss(maps: &ConfidenceMaps, grid: &CorrespondenceGrid) -> Option<Tensor> {
    assert_eq!(
        grid.len(),
        maps.n_a,
        "grid has {} cells but confidence covers {}",
        grid.len(),
        maps.n_a
    );
    let has_dustbin = maps.row.shape()[1] == maps.n_b + 1;
    let matched = grid.matched();

    let mut row_picks: Vec<(usize, usize)> = matched.clone();
    if has_dustbin {
        row_picks.extend(grid.unmatched_sources().into_iter().map(|i| (i, maps.n_b)));
    }

    let mut terms: Vec<Tensor> = Vec::with_capacity(2);
    let mut count = 0usize;
    if !row_picks.is_empty() {
        count += row_picks.len();
        terms.push(maps.row.gather2d(&row_picks).ln().sum());
    }
    if let Some(col) = &maps.col {
        let mut col_picks: Vec<(usize, usize)> = matched;
        if has_dustbin {
            col_picks.extend(grid.unmatched_targets().into_iter().map(|j| (maps.n_a, j)));
        }
        if !col_picks.is_empty() {
            count += col_picks.len();
            terms.push(col.gather2d(&col_picks).ln().sum());
        }
    }
    if count == 0 {
        return None;
    }
    let total = match terms.len() {
        1 => terms.pop().unwrap(),
        _ => &terms[0] + &terms[1],
    };
    Some(total.scale(-1.0 / count as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{confidence, MatchingMode};
    use whorl_autograd::{backward, Parameter, Tensor};
    use whorl_synth::CorrespondenceGrid;

    fn grid_1_match() -> CorrespondenceGrid {
        // 2x1 grid of 8px cells: cell 0 -> cell 1, cell 1 unmatched.
        CorrespondenceGrid {
            rows: 1,
            cols: 2,
            cell_size: 8,
            targets: vec![Some((0, 1)), None],
        }
    }

    #[test]
    fn dual_dustbin_loss_matches_hand_computation() {
        let sim_vals = [1.0, 2.0, 0.5, -0.3];
        let bin = 0.25;
        let sim = Tensor::from_vec(&[2, 2], sim_vals.to_vec());
        let maps = confidence(&sim, Some(&Tensor::scalar(bin)), MatchingMode::Dual);
        let loss = registration_loss(&maps, &grid_1_match()).unwrap();

        // Hand oracle with plain floats.
        let softmax3 = |v: [f64; 3]| {
            let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
            let s: f64 = e.iter().sum();
            [e[0] / s, e[1] / s, e[2] / s]
        };
        let row0 = softmax3([sim_vals[0], sim_vals[1], bin]);
        let row1 = softmax3([sim_vals[2], sim_vals[3], bin]);
        let col0 = softmax3([sim_vals[0], sim_vals[2], bin]);
        let col1 = softmax3([sim_vals[1], sim_vals[3], bin]);
        // Charged: row (0 -> col 1), row dustbin for source 1,
        // col (0 -> 1), col dustbin for target 0. Four terms.
        let expect =
            -(row0[1].ln() + row1[2].ln() + col1[0].ln() + col0[2].ln()) / 4.0;
        assert!(
            (loss.data()[0] - expect).abs() < 1e-12,
            "loss {} vs oracle {}",
            loss.data()[0],
            expect
        );
    }

    #[test]
    fn loss_decreases_when_the_right_cell_wins() {
        let grid = grid_1_match();
        let bad = Tensor::from_vec(&[2, 2], vec![3.0, 0.0, 0.0, 3.0]);
        let good = Tensor::from_vec(&[2, 2], vec![0.0, 3.0, 0.0, -3.0]);
        let bin = Tensor::scalar(0.0);
        let l_bad = registration_loss(
            &confidence(&bad, Some(&bin), MatchingMode::Dual),
            &grid,
        )
        .unwrap();
        let l_good = registration_loss(
            &confidence(&good, Some(&bin), MatchingMode::Dual),
            &grid,
        )
        .unwrap();
        assert!(l_good.data()[0] < l_bad.data()[0]);
    }

    #[test]
    fn no_dustbin_imposter_pair_has_nothing_to_supervise() {
        let sim = Tensor::from_vec(&[4, 4], vec![0.1; 16]);
        let maps = confidence(&sim, None, MatchingMode::Dual);
        let grid = CorrespondenceGrid::empty(2, 2, 8);
        assert!(registration_loss(&maps, &grid).is_none());
    }

    #[test]
    fn dustbin_imposter_pair_supervises_both_dustbins() {
        let sim = Tensor::from_vec(&[4, 4], vec![0.1; 16]);
        let bin = Tensor::scalar(0.5);
        let maps = confidence(&sim, Some(&bin), MatchingMode::Dual);
        let grid = CorrespondenceGrid::empty(2, 2, 8);
        let loss = registration_loss(&maps, &grid).unwrap();
        // 4 row-dustbin terms + 4 col-dustbin terms, all equal by symmetry:
        // row term ln(e^bin / (4 e^0.1 + e^bin)).
        let row = (0.5f64).exp() / (4.0 * (0.1f64).exp() + (0.5f64).exp());
        let expect = -row.ln();
        assert!((loss.data()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn loss_backpropagates_into_the_dustbin_score() {
        let bin = Parameter::new("bin", &[], vec![0.3]);
        let sim = Tensor::from_vec(&[2, 2], vec![1.0, 0.2, -0.1, 0.8]);
        let maps = confidence(&sim, Some(&bin.leaf()), MatchingMode::Dual);
        let grid = grid_1_match();
        let loss = registration_loss(&maps, &grid).unwrap();
        backward(&loss);
        assert!(bin.grad()[0].abs() > 0.0, "dustbin got no gradient");
    }

    #[test]
    fn single_mode_charges_rows_only() {
        let sim = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 0.5, -0.3]);
        let bin = Tensor::scalar(0.25);
        let maps = confidence(&sim, Some(&bin), MatchingMode::Single);
        let loss = registration_loss(&maps, &grid_1_match()).unwrap();
        let softmax3 = |v: [f64; 3]| {
            let e: Vec<f64> = v.iter().map(|x| x.exp()).collect();
            let s: f64 = e.iter().sum();
            [e[0] / s, e[1] / s, e[2] / s]
        };
        let row0 = softmax3([1.0, 2.0, 0.25]);
        let row1 = softmax3([0.5, -0.3, 0.25]);
        let expect = -(row0[1].ln() + row1[2].ln()) / 2.0;
        assert!((loss.data()[0] - expect).abs() < 1e-12);
    }
}
