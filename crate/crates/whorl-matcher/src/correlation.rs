use whorl_autograd::Tensor;

use crate::MatchingMode;

/// Scaled similarity between two token matrices: `a b^T / sqrt(dim)`,
/// shape `[n_a, n_b]`.
pub fn similarity(a: &Tensor, b: &Tensor) -> Tensor {
    let d = a.shape()[1];
    assert_eq!(d, b.shape()[1], "token widths differ");
    a.matmul(&b.transpose()).scale(1.0 / (d as f64).sqrt())
}

/// Normalized confidence maps derived from a similarity matrix.
///
/// `row` always has rows summing to 1; with a dustbin it gains one extra
/// column (index `n_b`) where unmatched rows can park their mass. In dual
/// mode `col` is the column-normalized counterpart with one extra dustbin
/// row (index `n_a`). `joint` is the confidence on real cell pairs only
/// (`[n_a, n_b]`): the product of both factors in dual mode, the row factor
/// alone in single mode.
pub struct ConfidenceMaps {
    pub joint: Tensor,
    pub row: Tensor,
    pub col: Option<Tensor>,
    pub n_a: usize,
    pub n_b: usize,
}

/// Builds confidence maps from similarities. `dustbin` is the learned
/// score appended as an extra column (and, in dual mode, an extra row)
/// before normalization; `None` disables the dustbin.
pub fn confidence(sim: &Tensor, dustbin: Option<&Tensor>, mode: MatchingMode) -> ConfidenceMaps {
    let (n_a, n_b) = (sim.shape()[0], sim.shape()[1]);
    let row = match dustbin {
        Some(s) => sim.append_col_scalar(s).softmax(1),
        None => sim.softmax(1),
    };
    let row_real = match dustbin {
        Some(_) => row.crop2d(0, n_a, 0, n_b),
        None => row.clone(),
    };
    match mode {
        MatchingMode::Single => ConfidenceMaps { joint: row_real, row, col: None, n_a, n_b },
        MatchingMode::Dual => {
            let col = match dustbin {
                Some(s) => sim.append_row_scalar(s).softmax(0),
                None => sim.softmax(0),
            };
            let col_real = match dustbin {
                Some(_) => col.crop2d(0, n_a, 0, n_b),
                None => col.clone(),
            };
            ConfidenceMaps {
                joint: &row_real * &col_real,
                row,
                col: Some(col),
                n_a,
                n_b,
            }
        }
    }
}
