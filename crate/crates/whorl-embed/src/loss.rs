use serde::{Deserialize, Serialize};
use whorl_autograd::Tensor;

/// Coefficients of the composite training objective and the shared margin
/// hyperparameters of its two embedding terms.
///
/// The total loss is `reg * L_reg + emb * L_cos + cls * L_arc`, where
/// `L_reg` supervises the trunk's confidence maps, `L_cos` pulls genuine
/// embedding pairs together and pushes imposters below `margin`, and
/// `L_arc` is an additive-angular-margin classification loss over finger
/// identities with the same `margin` and logit `scale`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub reg: f64,
    pub emb: f64,
    pub cls: f64,
    pub margin: f64,
    pub scale: f64,
}

impl Default for LossWeights {
    fn default() -> LossWeights {
        LossWeights { reg: 0.5, emb: 0.1, cls: 1.0, margin: 0.4, scale: 64.0 }
    }
}

/// Cosine embedding loss over a batch of vector pairs.
///
/// `r1` and `r2` are `[n, d]` with row i of each forming pair i; `labels`
/// holds +1 for genuine pairs and -1 for imposters. Genuine pairs are
/// charged `1 - cos`, imposters `max(0, cos - margin)`, and the batch is
/// averaged. Rows are normalized here, so callers may pass raw vectors.
pub fn cosine_embedding_loss(r1: &Tensor, r2: &Tensor, labels: &[i8], margin: f64) -> Tensor {
    assert_eq!(r1.shape(), r2.shape(), "pair matrices must agree in shape");
    assert_eq!(r1.rank(), 2, "cosine embedding loss needs [n, d] inputs");
    let (n, d) = (r1.shape()[0], r1.shape()[1]);
    assert_eq!(labels.len(), n, "one label per pair required");
    assert!(labels.iter().all(|&l| l == 1 || l == -1), "labels must be +1 or -1");

    // Row-wise cosines as a column vector: elementwise product of the
    // unit rows, then a sum across the feature axis.
    let ones = Tensor::from_vec(&[d, 1], vec![1.0; d]);
    let cos = (&r1.normalize_rows() * &r2.normalize_rows()).matmul(&ones);

    let genuine: Vec<(usize, usize)> =
        labels.iter().enumerate().filter(|(_, &l)| l == 1).map(|(i, _)| (i, 0)).collect();
    let imposter: Vec<(usize, usize)> =
        labels.iter().enumerate().filter(|(_, &l)| l == -1).map(|(i, _)| (i, 0)).collect();

    let mut terms = Vec::new();
    if !genuine.is_empty() {
        terms.push(cos.gather2d(&genuine).neg().add_scalar(1.0).sum());
    }
    if !imposter.is_empty() {
        terms.push(cos.gather2d(&imposter).add_scalar(-margin).relu().sum());
    }
    let total = terms.into_iter().reduce(|a, b| &a + &b).expect("batch cannot be empty");
    total.scale(1.0 / n as f64)
}

/// Additive-angular-margin classification loss.
///
/// `emb` is `[n, d]`, `class_w` holds one prototype row per class as
/// `[k, d]`; both are normalized here. The target-class cosine of each row
/// has the angular margin added (`cos(theta + margin)`), all logits are
/// scaled, and the mean cross entropy against `targets` is returned.
pub fn arcface_loss(
    emb: &Tensor,
    class_w: &Tensor,
    targets: &[usize],
    margin: f64,
    scale: f64,
) -> Tensor {
    assert_eq!(emb.rank(), 2, "embeddings must be [n, d]");
    assert_eq!(class_w.rank(), 2, "class weights must be [k, d]");
    assert_eq!(emb.shape()[1], class_w.shape()[1], "embedding and class dims differ");
    emb.normalize_rows()
        .matmul(&class_w.normalize_rows().transpose())
        .margin_at_targets(targets, margin)
        .scale(scale)
        .cross_entropy_logits(targets)
}
