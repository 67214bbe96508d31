//! Central finite differences against the reverse pass, per op and composed.

use rand::rngs::StdRng;
use rand::SeedableRng;

use whorl_autograd::testing::{assert_grads_close, max_grad_error, op_gradient_checks};
use whorl_autograd::{Parameter, Tensor};

const TOL: f64 = 1e-4;
const SEEDS: [u64; 5] = [11, 23, 37, 41, 59];

#[test]
fn every_op_matches_finite_differences_across_seeds() {
    for seed in SEEDS {
        for check in op_gradient_checks(seed) {
            assert!(
                check.max_rel_err < TOL,
                "{} at seed {seed}: max error {:.3e}",
                check.name,
                check.max_rel_err
            );
        }
    }
}

/// A composed block (conv, norm, attention-style mixing, losses) exercises
/// interactions between ops: fan-out, shared parameters, deep chains.
#[test]
fn composed_network_matches_finite_differences() {
    for seed in SEEDS {
        let rng = &mut StdRng::seed_from_u64(seed);
        let x = Parameter::randn("x", &[1, 8, 8], 0.5, rng);
        let k = Parameter::randn("k", &[4, 1, 3, 3], 0.3, rng);
        let wq = Parameter::randn("wq", &[4, 4], 0.4, rng);
        let wk = Parameter::randn("wk", &[4, 4], 0.4, rng);
        let wv = Parameter::randn("wv", &[4, 4], 0.4, rng);
        let gain = Parameter::constant("gain", &[4], 1.0);
        let bias = Parameter::zeros("bias", &[4]);
        let params = vec![
            x.clone(),
            k.clone(),
            wq.clone(),
            wk.clone(),
            wv.clone(),
            gain.clone(),
            bias.clone(),
        ];
        let mut loss_fn = move || {
            // conv -> tokens -> single-head attention -> layer norm -> CE
            let feat = x.leaf().conv2d(&k.leaf(), 2, 1).gelu();
            let tokens = feat.reshape(&[4, 16]).transpose(); // 16 tokens x 4 dims
            let q = tokens.matmul(&wq.leaf());
            let key = tokens.matmul(&wk.leaf());
            let v = tokens.matmul(&wv.leaf());
            let attn = q.matmul(&key.transpose()).scale(0.5).softmax(1);
            let mixed = attn.matmul(&v);
            let normed = mixed.layer_norm(&gain.leaf(), &bias.leaf());
            let pooled = normed.mean_rows().normalize_rows();
            let logits = pooled.reshape(&[1, 4]).scale(4.0);
            logits.cross_entropy_logits(&[2])
        };
        let err = max_grad_error(&params, &mut loss_fn, 1e-5);
        assert!(
            err < TOL,
            "composed network at seed {seed}: max error {err:.3e}"
        );
    }
}

/// Shared-parameter fan-out: the same leaf feeding two branches must receive
/// the sum of both branch gradients.
#[test]
fn shared_parameter_accumulates_both_branches() {
    let rng = &mut StdRng::seed_from_u64(3);
    let w = Parameter::randn("w", &[3, 3], 0.7, rng);
    let a = Tensor::from_vec(&[2, 3], vec![0.3, -0.4, 0.9, 1.2, 0.1, -0.6]);
    let params = vec![w.clone()];
    let mut loss_fn = move || {
        let leaf = w.leaf();
        let b1 = a.matmul(&leaf).relu();
        let b2 = a.matmul(&leaf).gelu();
        (&b1 + &b2).sum()
    };
    assert_grads_close(&params, &mut loss_fn, 1e-5, TOL);
}

/// Ops on constant inputs must not record history.
#[test]
fn constant_graphs_require_no_grad() {
    let a = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
    let b = a.matmul(&a).softmax(1).sum();
    assert!(!b.requires_grad());
}

#[test]
fn forward_values_stay_finite_on_random_graphs() {
    for seed in SEEDS {
        let rng = &mut StdRng::seed_from_u64(seed ^ 0xabcd);
        let x = Parameter::randn("x", &[4, 6], 2.0, rng);
        let y = x
            .leaf()
            .gelu()
            .softmax(1)
            .ln()
            .neg()
            .normalize_rows()
            .layer_norm(
                &Tensor::from_vec(&[6], vec![1.0; 6]),
                &Tensor::from_vec(&[6], vec![0.0; 6]),
            );
        assert!(y.is_all_finite());
    }
}
