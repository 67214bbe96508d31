//! Finite-difference oracles for gradient verification.
//!
//! Analytic gradients from [`crate::backward`] are compared against central
//! differences computed from forward evaluations only, so the two routes are
//! independent. The error metric is `|a - b| / max(1, |a|, |b|)`, absolute
//! near zero and relative for large values.
//!
//! The per-op scenarios live here rather than in a test file because the
//! acceptance suite re-runs them as a gate.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::{backward, Param, Parameter, Tensor};

/// Mixed absolute/relative error used by every gradient check.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Worst error between analytic gradients and central differences over every
/// element of every parameter. `loss_fn` must rebuild the graph from the
/// parameters' current values on each call.
pub fn max_grad_error(params: &[Param], loss_fn: &mut dyn FnMut() -> Tensor, h: f64) -> f64 {
    for p in params {
        p.zero_grad();
    }
    let loss = loss_fn();
    backward(&loss);
    let analytic: Vec<Vec<f64>> = params.iter().map(|p| p.grad()).collect();
    let mut worst = 0.0f64;
    for (pi, p) in params.iter().enumerate() {
        let base = p.value();
        for j in 0..p.numel() {
            let orig = base[j];
            p.update_value(|v| v[j] = orig + h);
            let lp = loss_fn().scalar_value();
            p.update_value(|v| v[j] = orig - h);
            let lm = loss_fn().scalar_value();
            p.update_value(|v| v[j] = orig);
            let fd = (lp - lm) / (2.0 * h);
            worst = worst.max(relative_error(analytic[pi][j], fd));
        }
    }
    worst
}

/// Convenience assertion wrapper around [`max_grad_error`].
pub fn assert_grads_close(params: &[Param], loss_fn: &mut dyn FnMut() -> Tensor, h: f64, tol: f64) {
    let err = max_grad_error(params, loss_fn, h);
    assert!(
        err < tol,
        "gradient check failed: max error {err:.3e} >= tolerance {tol:.1e}"
    );
}

/// Result of one named op scenario.
#[derive(Debug, Clone)]
pub struct OpCheck {
    pub name: &'static str,
    pub max_rel_err: f64,
}

const FD_STEP: f64 = 1e-5;

fn rand_vec(rng: &mut StdRng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Values bounded away from zero, for ops with a kink at the origin.
fn rand_vec_off_zero(rng: &mut StdRng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            sign * rng.gen_range(0.1..1.0)
        })
        .collect()
}

fn param(rng: &mut StdRng, name: &str, shape: &[usize], lo: f64, hi: f64) -> Param {
    let n = shape.iter().product();
    Parameter::new(name, shape, rand_vec(rng, n, lo, hi))
}

/// Fixed random projection to a scalar so every op check ends in a rank-0
/// loss with a dense, non-degenerate adjoint.
fn projector(rng: &mut StdRng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(&[n], rand_vec(rng, n, -1.0, 1.0))
}

fn run(name: &'static str, params: Vec<Param>, f: impl Fn() -> Tensor) -> OpCheck {
    let mut f = f;
    OpCheck {
        name,
        max_rel_err: max_grad_error(&params, &mut f, FD_STEP),
    }
}

/// Runs the finite-difference scenario for every differentiable op at the
/// given seed and reports the worst error per op.
pub fn op_gradient_checks(seed: u64) -> Vec<OpCheck> {
    let rng = &mut StdRng::seed_from_u64(seed);
    let mut out = Vec::new();

    {
        let a = param(rng, "a", &[3, 4], -1.0, 1.0);
        let b = param(rng, "b", &[4, 2], -1.0, 1.0);
        let w = projector(rng, &[3, 2]);
        out.push(run("matmul", vec![a.clone(), b.clone()], move || {
            a.leaf().matmul(&b.leaf()).reshape(&[6]).dot(&w)
        }));
    }
    {
        let a = param(rng, "a", &[3, 4], -1.0, 1.0);
        let w = projector(rng, &[4, 3]);
        out.push(run("transpose", vec![a.clone()], move || {
            a.leaf().transpose().reshape(&[12]).dot(&w)
        }));
    }
    {
        let a = param(rng, "a", &[3, 4], -1.0, 1.0);
        let w = projector(rng, &[12]);
        out.push(run("reshape", vec![a.clone()], move || {
            a.leaf().reshape(&[2, 6]).reshape(&[12]).dot(&w)
        }));
    }
    {
        let a = param(rng, "a", &[3, 3], -1.0, 1.0);
        let b = param(rng, "b", &[3, 3], -1.0, 1.0);
        let w = projector(rng, &[9]);
        let (ac, bc) = (a.clone(), b.clone());
        out.push(run("add", vec![a, b], move || {
            (&ac.leaf() + &bc.leaf()).reshape(&[9]).dot(&w)
        }));
    }
    {
        let a = param(rng, "a", &[3, 3], -1.0, 1.0);
        let b = param(rng, "b", &[3, 3], -1.0, 1.0);
        let w = projector(rng, &[9]);
        let (ac, bc) = (a.clone(), b.clone());
        out.push(run("sub", vec![a, b], move || {
            (&ac.leaf() - &bc.leaf()).reshape(&[9]).dot(&w)
        }));
    }
    {
        let a = param(rng, "a", &[3, 3], -1.0, 1.0);
        let b = param(rng, "b", &[3, 3], -1.0, 1.0);
        let w = projector(rng, &[9]);
        let (ac, bc) = (a.clone(), b.clone());
        out.push(run("mul", vec![a, b], move || {
            (&ac.leaf() * &bc.leaf()).reshape(&[9]).dot(&w)
        }));
    }
    {
        let a = param(rng, "a", &[2, 3], -1.0, 1.0);
        let w = projector(rng, &[6]);
        out.push(run("scale", vec![a.clone()], move || {
            a.leaf().scale(1.7).reshape(&[6]).dot(&w)
        }));
    }
    {
        let a = param(rng, "a", &[2, 3], -1.0, 1.0);
        let w = projector(rng, &[6]);
        out.push(run("add_scalar", vec![a.clone()], move || {
            a.leaf().add_scalar(0.3).reshape(&[6]).dot(&w)
        }));
    }
    {
        let a = param(rng, "a", &[2, 3], -1.0, 1.0);
        let w = projector(rng, &[6]);
        out.push(run("neg", vec![a.clone()], move || {
            a.leaf().neg().reshape(&[6]).dot(&w)
        }));
    }
    {
        let a = param(rng, "a", &[4, 3], -1.0, 1.0);
        let b = param(rng, "bias", &[3], -1.0, 1.0);
        let w = projector(rng, &[12]);
        let (ac, bc) = (a.clone(), b.clone());
        out.push(run("add_bias", vec![a, b], move || {
            ac.leaf().add_bias(&bc.leaf()).reshape(&[12]).dot(&w)
        }));
    }
    {
        let a = param(rng, "a", &[2, 3, 3], -1.0, 1.0);
        let b = param(rng, "bias", &[2], -1.0, 1.0);
        let w = projector(rng, &[18]);
        let (ac, bc) = (a.clone(), b.clone());
        out.push(run("add_chan_bias", vec![a, b], move || {
            ac.leaf().add_chan_bias(&bc.leaf()).reshape(&[18]).dot(&w)
        }));
    }
    {
        let a = Parameter::new("a", &[3, 4], rand_vec_off_zero(rng, 12));
        let w = projector(rng, &[12]);
        out.push(run("relu", vec![a.clone()], move || {
            a.leaf().relu().reshape(&[12]).dot(&w)
        }));
    }
    {
        let a = param(rng, "a", &[3, 4], -2.0, 2.0);
        let w = projector(rng, &[12]);
        out.push(run("gelu", vec![a.clone()], move || {
            a.leaf().gelu().reshape(&[12]).dot(&w)
        }));
    }
    {
        let a = param(rng, "a", &[3, 4], 0.2, 2.0);
        let w = projector(rng, &[12]);
        out.push(run("ln", vec![a.clone()], move || {
            a.leaf().ln().reshape(&[12]).dot(&w)
        }));
    }
    {
        let a = param(rng, "a", &[3, 5], -2.0, 2.0);
        let w = projector(rng, &[15]);
        out.push(run("softmax_rows", vec![a.clone()], move || {
            a.leaf().softmax(1).reshape(&[15]).dot(&w)
        }));
    }
    {
        let a = param(rng, "a", &[4, 3], -2.0, 2.0);
        let w = projector(rng, &[12]);
        out.push(run("softmax_cols", vec![a.clone()], move || {
            a.leaf().softmax(0).reshape(&[12]).dot(&w)
        }));
    }
    {
        let a = param(rng, "a", &[3, 6], -1.5, 1.5);
        let g = param(rng, "gain", &[6], 0.5, 1.5);
        let b = param(rng, "bias", &[6], -0.5, 0.5);
        let w = projector(rng, &[18]);
        let (ac, gc, bc) = (a.clone(), g.clone(), b.clone());
        out.push(run("layer_norm", vec![a, g, b], move || {
            ac.leaf()
                .layer_norm(&gc.leaf(), &bc.leaf())
                .reshape(&[18])
                .dot(&w)
        }));
    }
    {
        let x = param(rng, "x", &[2, 5, 5], -1.0, 1.0);
        let k = param(rng, "w", &[3, 2, 3, 3], -0.5, 0.5);
        let w = projector(rng, &[3 * 5 * 5]);
        let (xc, kc) = (x.clone(), k.clone());
        out.push(run("conv2d_s1", vec![x, k], move || {
            xc.leaf().conv2d(&kc.leaf(), 1, 1).reshape(&[75]).dot(&w)
        }));
    }
    {
        let x = param(rng, "x", &[1, 6, 6], -1.0, 1.0);
        let k = param(rng, "w", &[2, 1, 3, 3], -0.5, 0.5);
        let w = projector(rng, &[2 * 3 * 3]);
        let (xc, kc) = (x.clone(), k.clone());
        out.push(run("conv2d_s2", vec![x, k], move || {
            xc.leaf().conv2d(&kc.leaf(), 2, 1).reshape(&[18]).dot(&w)
        }));
    }
    {
        let a = param(rng, "a", &[3, 4], -1.0, 1.0);
        out.push(run("sum", vec![a.clone()], move || a.leaf().sum()));
    }
    {
        let a = param(rng, "a", &[3, 4], -1.0, 1.0);
        out.push(run("mean", vec![a.clone()], move || a.leaf().mean()));
    }
    {
        let a = param(rng, "a", &[4, 3], -1.0, 1.0);
        let w = projector(rng, &[3]);
        out.push(run("mean_rows", vec![a.clone()], move || {
            a.leaf().mean_rows().dot(&w)
        }));
    }
    {
        let a = param(rng, "a", &[2, 3], -1.0, 1.0);
        let b = param(rng, "b", &[2, 3], -1.0, 1.0);
        let (ac, bc) = (a.clone(), b.clone());
        out.push(run("dot", vec![a, b], move || ac.leaf().dot(&bc.leaf())));
    }
    {
        let a = param(rng, "a", &[4, 5], -1.0, 1.0);
        let idx = vec![(0usize, 3usize), (2, 2), (3, 0), (2, 2)];
        let w = projector(rng, &[4]);
        out.push(run("gather2d", vec![a.clone()], move || {
            a.leaf().gather2d(&idx).dot(&w)
        }));
    }
    {
        let a = param(rng, "a", &[3, 4], 0.3, 1.3);
        let w = projector(rng, &[12]);
        out.push(run("normalize_rows", vec![a.clone()], move || {
            a.leaf().normalize_rows().reshape(&[12]).dot(&w)
        }));
    }
    {
        let a = param(rng, "a", &[3, 4], -1.0, 1.0);
        let s = param(rng, "s", &[], -1.0, 1.0);
        let w = projector(rng, &[15]);
        let (ac, sc) = (a.clone(), s.clone());
        out.push(run("append_col_scalar", vec![a, s], move || {
            ac.leaf()
                .append_col_scalar(&sc.leaf())
                .softmax(1)
                .reshape(&[15])
                .dot(&w)
        }));
    }
    {
        let a = param(rng, "a", &[3, 4], -1.0, 1.0);
        let s = param(rng, "s", &[], -1.0, 1.0);
        let w = projector(rng, &[16]);
        let (ac, sc) = (a.clone(), s.clone());
        out.push(run("append_row_scalar", vec![a, s], move || {
            ac.leaf()
                .append_row_scalar(&sc.leaf())
                .softmax(0)
                .reshape(&[16])
                .dot(&w)
        }));
    }
    {
        let a = param(rng, "a", &[4, 5], -1.0, 1.0);
        let w = projector(rng, &[6]);
        out.push(run("crop2d", vec![a.clone()], move || {
            a.leaf().crop2d(1, 3, 2, 5).reshape(&[6]).dot(&w)
        }));
    }
    {
        let a = param(rng, "a", &[3, 2], -1.0, 1.0);
        let b = param(rng, "b", &[3, 3], -1.0, 1.0);
        let w = projector(rng, &[15]);
        let (ac, bc) = (a.clone(), b.clone());
        out.push(run("concat_cols", vec![a, b], move || {
            Tensor::concat_cols(&[ac.leaf(), bc.leaf()])
                .reshape(&[15])
                .dot(&w)
        }));
    }
    {
        let a = param(rng, "a", &[3], -1.0, 1.0);
        let b = param(rng, "b", &[4], -1.0, 1.0);
        let w = projector(rng, &[7]);
        let (ac, bc) = (a.clone(), b.clone());
        out.push(run("concat1d", vec![a, b], move || {
            Tensor::concat1d(&[ac.leaf(), bc.leaf()]).dot(&w)
        }));
    }
    {
        let a = param(rng, "a", &[], -1.0, 1.0);
        let b = param(rng, "b", &[], -1.0, 1.0);
        let c = param(rng, "c", &[], -1.0, 1.0);
        let w = projector(rng, &[3]);
        let (ac, bc, cc) = (a.clone(), b.clone(), c.clone());
        out.push(run("stack_scalars", vec![a, b, c], move || {
            Tensor::stack_scalars(&[ac.leaf(), bc.leaf(), cc.leaf()]).dot(&w)
        }));
    }
    {
        let a = param(rng, "a", &[3, 4], -0.9, 0.9);
        let targets = vec![1usize, 3, 0];
        let w = projector(rng, &[12]);
        out.push(run("margin_at_targets", vec![a.clone()], move || {
            a.leaf()
                .margin_at_targets(&targets, 0.4)
                .reshape(&[12])
                .dot(&w)
        }));
    }
    {
        let a = param(rng, "a", &[3, 5], -2.0, 2.0);
        let targets = vec![4usize, 0, 2];
        out.push(run("cross_entropy_logits", vec![a.clone()], move || {
            a.leaf().cross_entropy_logits(&targets)
        }));
    }

    out
}

/// Runs [`op_gradient_checks`] across seeds, failing with per-op detail when
/// any scenario exceeds `tol`.
pub fn gradient_suite(seeds: &[u64], tol: f64) -> Result<(), String> {
    let mut failures = Vec::new();
    for &seed in seeds {
        for check in op_gradient_checks(seed) {
            if !(check.max_rel_err < tol) {
                failures.push(format!(
                    "{} at seed {}: error {:.3e}",
                    check.name, seed, check.max_rel_err
                ));
            }
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(failures.join("; "))
    }
}
