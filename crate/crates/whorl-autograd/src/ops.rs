//! Forward operations and their vector-Jacobian products.
//!
//! Each op validates shapes up front and panics with a descriptive message on
//! mismatch; shape errors are programming errors, not runtime conditions.
//! The reverse rules live in [`accumulate_parent_grads`] as one match, which
//! keeps every derivative next to the list of recorded operands.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::tensor::{add_into, Tensor};
use crate::{COS_CLAMP, LAYER_NORM_EPS, LN_FLOOR, NORM_EPS};

/// Recorded operation. Variants hold the operand handles needed by the
/// reverse rule; anything recomputable from operand or output data is not
/// cached.
pub(crate) enum Op {
    Leaf,
    Matmul { a: Tensor, b: Tensor },
    Transpose { a: Tensor },
    Reshape { a: Tensor },
    Add { a: Tensor, b: Tensor },
    Sub { a: Tensor, b: Tensor },
    Mul { a: Tensor, b: Tensor },
    Scale { a: Tensor, c: f64 },
    AddScalar { a: Tensor },
    Neg { a: Tensor },
    AddBias { a: Tensor, bias: Tensor },
    AddChanBias { a: Tensor, bias: Tensor },
    Relu { a: Tensor },
    Gelu { a: Tensor },
    Ln { a: Tensor },
    Softmax { a: Tensor, axis: usize },
    LayerNorm { a: Tensor, gain: Tensor, bias: Tensor },
    Conv2d { x: Tensor, w: Tensor, stride: usize, pad: usize },
    Sum { a: Tensor },
    Mean { a: Tensor },
    MeanRows { a: Tensor },
    Dot { a: Tensor, b: Tensor },
    Gather2d { a: Tensor, idx: Vec<(usize, usize)> },
    NormalizeRows { a: Tensor },
    AppendColScalar { a: Tensor, s: Tensor },
    AppendRowScalar { a: Tensor, s: Tensor },
    Crop2d { a: Tensor, r0: usize, c0: usize },
    ConcatCols { xs: Vec<Tensor> },
    Concat1d { xs: Vec<Tensor> },
    StackScalars { xs: Vec<Tensor> },
    MarginAtTargets { a: Tensor, targets: Vec<usize>, margin: f64 },
    CrossEntropyLogits { a: Tensor, targets: Vec<usize> },
}

impl Op {
    pub(crate) fn parents(&self) -> Vec<&Tensor> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Matmul { a, b } | Op::Add { a, b } | Op::Sub { a, b } | Op::Mul { a, b } => {
                vec![a, b]
            }
            Op::Dot { a, b } => vec![a, b],
            Op::Transpose { a }
            | Op::Reshape { a }
            | Op::Scale { a, .. }
            | Op::AddScalar { a }
            | Op::Neg { a }
            | Op::Relu { a }
            | Op::Gelu { a }
            | Op::Ln { a }
            | Op::Softmax { a, .. }
            | Op::Sum { a }
            | Op::Mean { a }
            | Op::MeanRows { a }
            | Op::Gather2d { a, .. }
            | Op::NormalizeRows { a }
            | Op::Crop2d { a, .. }
            | Op::MarginAtTargets { a, .. }
            | Op::CrossEntropyLogits { a, .. } => vec![a],
            Op::AddBias { a, bias } | Op::AddChanBias { a, bias } => vec![a, bias],
            Op::LayerNorm { a, gain, bias } => vec![a, gain, bias],
            Op::Conv2d { x, w, .. } => vec![x, w],
            Op::AppendColScalar { a, s } | Op::AppendRowScalar { a, s } => vec![a, s],
            Op::ConcatCols { xs } | Op::Concat1d { xs } | Op::StackScalars { xs } => {
                xs.iter().collect()
            }
        }
    }
}

// ── Forward ───────────────────────────────────────────────────────────────

impl Tensor {
    /// Matrix product of rank-2 tensors, `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&self, rhs: &Tensor) -> Tensor {
        assert_eq!(self.rank(), 2, "matmul lhs must be rank 2");
        assert_eq!(rhs.rank(), 2, "matmul rhs must be rank 2");
        let (m, k) = (self.shape()[0], self.shape()[1]);
        let (k2, n) = (rhs.shape()[0], rhs.shape()[1]);
        assert_eq!(
            k, k2,
            "matmul inner dimensions differ: [{m},{k}] x [{k2},{n}]"
        );
        let out = matmul_nn(self.data(), rhs.data(), m, k, n);
        Tensor::make(
            vec![m, n],
            out,
            Op::Matmul {
                a: self.clone(),
                b: rhs.clone(),
            },
            None,
        )
    }

    /// Rank-2 transpose.
    pub fn transpose(&self) -> Tensor {
        assert_eq!(self.rank(), 2, "transpose needs a rank-2 tensor");
        let (r, c) = (self.shape()[0], self.shape()[1]);
        let src = self.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        Tensor::make(vec![c, r], out, Op::Transpose { a: self.clone() }, None)
    }

    /// Same data, new shape. Element count must be preserved.
    pub fn reshape(&self, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        assert_eq!(
            n,
            self.numel(),
            "reshape from {:?} to {:?} changes element count",
            self.shape(),
            shape
        );
        Tensor::make(
            shape.to_vec(),
            self.data().to_vec(),
            Op::Reshape { a: self.clone() },
            None,
        )
    }

    pub fn add(&self, rhs: &Tensor) -> Tensor {
        assert_eq!(self.shape(), rhs.shape(), "add shape mismatch");
        let out = zip_map(self.data(), rhs.data(), |a, b| a + b);
        Tensor::make(
            self.shape().to_vec(),
            out,
            Op::Add {
                a: self.clone(),
                b: rhs.clone(),
            },
            None,
        )
    }

    pub fn sub(&self, rhs: &Tensor) -> Tensor {
        assert_eq!(self.shape(), rhs.shape(), "sub shape mismatch");
        let out = zip_map(self.data(), rhs.data(), |a, b| a - b);
        Tensor::make(
            self.shape().to_vec(),
            out,
            Op::Sub {
                a: self.clone(),
                b: rhs.clone(),
            },
            None,
        )
    }

    /// Elementwise product.
    pub fn mul(&self, rhs: &Tensor) -> Tensor {
        assert_eq!(self.shape(), rhs.shape(), "mul shape mismatch");
        let out = zip_map(self.data(), rhs.data(), |a, b| a * b);
        Tensor::make(
            self.shape().to_vec(),
            out,
            Op::Mul {
                a: self.clone(),
                b: rhs.clone(),
            },
            None,
        )
    }

    pub fn scale(&self, c: f64) -> Tensor {
        let out = self.data().iter().map(|v| v * c).collect();
        Tensor::make(
            self.shape().to_vec(),
            out,
            Op::Scale { a: self.clone(), c },
            None,
        )
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        let out = self.data().iter().map(|v| v + c).collect();
        Tensor::make(
            self.shape().to_vec(),
            out,
            Op::AddScalar { a: self.clone() },
            None,
        )
    }

    pub fn neg(&self) -> Tensor {
        let out = self.data().iter().map(|v| -v).collect();
        Tensor::make(self.shape().to_vec(), out, Op::Neg { a: self.clone() }, None)
    }

    /// Adds a `[d]` bias to every row of a `[..., d]` tensor.
    pub fn add_bias(&self, bias: &Tensor) -> Tensor {
        assert_eq!(bias.rank(), 1, "bias must be rank 1");
        let d = bias.numel();
        assert!(
            self.rank() >= 1 && *self.shape().last().unwrap() == d,
            "bias of length {d} does not match trailing dim of {:?}",
            self.shape()
        );
        let b = bias.data();
        let out = self
            .data()
            .chunks(d)
            .flat_map(|row| row.iter().zip(b).map(|(x, bb)| x + bb))
            .collect();
        Tensor::make(
            self.shape().to_vec(),
            out,
            Op::AddBias {
                a: self.clone(),
                bias: bias.clone(),
            },
            None,
        )
    }

    /// Adds a `[c]` bias to every plane of a `[c,h,w]` tensor.
    pub fn add_chan_bias(&self, bias: &Tensor) -> Tensor {
        assert_eq!(self.rank(), 3, "channel bias target must be rank 3");
        assert_eq!(bias.rank(), 1, "channel bias must be rank 1");
        let (c, h, w) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        assert_eq!(bias.numel(), c, "channel bias length mismatch");
        let plane = h * w;
        let b = bias.data();
        let mut out = self.data().to_vec();
        for ci in 0..c {
            for v in &mut out[ci * plane..(ci + 1) * plane] {
                *v += b[ci];
            }
        }
        Tensor::make(
            self.shape().to_vec(),
            out,
            Op::AddChanBias {
                a: self.clone(),
                bias: bias.clone(),
            },
            None,
        )
    }

    pub fn relu(&self) -> Tensor {
        let out = self.data().iter().map(|v| v.max(0.0)).collect();
        Tensor::make(self.shape().to_vec(), out, Op::Relu { a: self.clone() }, None)
    }

    /// Gaussian error linear unit (tanh form).
    pub fn gelu(&self) -> Tensor {
        let out = self.data().iter().map(|&v| gelu_fwd(v)).collect();
        Tensor::make(self.shape().to_vec(), out, Op::Gelu { a: self.clone() }, None)
    }

    /// Natural log with inputs clamped to at least [`LN_FLOOR`].
    ///
    /// The clamp guards against `ln(0)`; it must not swallow NaN, or a
    /// poisoned input turns into a large finite value and downstream
    /// finiteness checks never fire. `f64::max` would do exactly that,
    /// so the branch below lets NaN fall through to `ln` untouched.
    pub fn ln(&self) -> Tensor {
        let out = self
            .data()
            .iter()
            .map(|v| if *v < LN_FLOOR { LN_FLOOR.ln() } else { v.ln() })
            .collect();
        Tensor::make(self.shape().to_vec(), out, Op::Ln { a: self.clone() }, None)
    }

    /// Softmax along `axis` of a rank-1 or rank-2 tensor. Each line sums to 1.
    pub fn softmax(&self, axis: usize) -> Tensor {
        assert!(axis < self.rank().max(1), "softmax axis out of range");
        assert!(self.rank() <= 2, "softmax supports rank 1 and 2");
        let mut out = self.data().to_vec();
        for_each_line_mut(&mut out, self.shape(), axis, softmax_line);
        Tensor::make(
            self.shape().to_vec(),
            out,
            Op::Softmax {
                a: self.clone(),
                axis,
            },
            None,
        )
    }

    /// Layer normalization over the trailing dimension, then affine scale and
    /// shift by `gain` and `bias` (both `[d]`).
    pub fn layer_norm(&self, gain: &Tensor, bias: &Tensor) -> Tensor {
        let d = *self.shape().last().expect("layer_norm on rank-0 tensor");
        assert_eq!(gain.shape(), &[d], "layer_norm gain shape mismatch");
        assert_eq!(bias.shape(), &[d], "layer_norm bias shape mismatch");
        let g = gain.data();
        let b = bias.data();
        let mut out = Vec::with_capacity(self.numel());
        for row in self.data().chunks(d) {
            let (mean, inv_std) = row_moments(row);
            for (j, &x) in row.iter().enumerate() {
                out.push((x - mean) * inv_std * g[j] + b[j]);
            }
        }
        Tensor::make(
            self.shape().to_vec(),
            out,
            Op::LayerNorm {
                a: self.clone(),
                gain: gain.clone(),
                bias: bias.clone(),
            },
            None,
        )
    }

    /// 2-D convolution of `[c,h,w]` with kernel `[o,c,kh,kw]`, zero padding.
    pub fn conv2d(&self, w: &Tensor, stride: usize, pad: usize) -> Tensor {
        assert_eq!(self.rank(), 3, "conv2d input must be [c,h,w]");
        assert_eq!(w.rank(), 4, "conv2d kernel must be [o,c,kh,kw]");
        assert!(stride >= 1, "conv2d stride must be at least 1");
        let (c, h, wid) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let (o, wc, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
        assert_eq!(c, wc, "conv2d channel mismatch");
        assert!(
            kh <= h + 2 * pad && kw <= wid + 2 * pad,
            "conv2d kernel {kh}x{kw} larger than padded input {}x{}",
            h + 2 * pad,
            wid + 2 * pad
        );
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (wid + 2 * pad - kw) / stride + 1;
        let x = self.data();
        let ker = w.data();
        let mut out = vec![0.0; o * ho * wo];
        let run = |oi: usize, plane: &mut [f64]| {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for ky in 0..kh {
                            let iy = oy * stride + ky;
                            if iy < pad || iy >= h + pad {
                                continue;
                            }
                            let iy = iy - pad;
                            for kx in 0..kw {
                                let ix = ox * stride + kx;
                                if ix < pad || ix >= wid + pad {
                                    continue;
                                }
                                let ix = ix - pad;
                                acc += x[(ci * h + iy) * wid + ix]
                                    * ker[((oi * c + ci) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    plane[oy * wo + ox] = acc;
                }
            }
        };
        if o * ho * wo * c * kh * kw >= PAR_THRESHOLD {
            out.par_chunks_mut(ho * wo)
                .enumerate()
                .for_each(|(oi, plane)| run(oi, plane));
        } else {
            for (oi, plane) in out.chunks_mut(ho * wo).enumerate() {
                run(oi, plane);
            }
        }
        Tensor::make(
            vec![o, ho, wo],
            out,
            Op::Conv2d {
                x: self.clone(),
                w: w.clone(),
                stride,
                pad,
            },
            None,
        )
    }

    /// Sum of all elements, rank-0 result.
    pub fn sum(&self) -> Tensor {
        let s = self.data().iter().sum();
        Tensor::make(Vec::new(), vec![s], Op::Sum { a: self.clone() }, None)
    }

    /// Mean of all elements, rank-0 result.
    pub fn mean(&self) -> Tensor {
        assert!(self.numel() > 0, "mean of an empty tensor");
        let s: f64 = self.data().iter().sum();
        let m = s / self.numel() as f64;
        Tensor::make(Vec::new(), vec![m], Op::Mean { a: self.clone() }, None)
    }

    /// Column means of a `[n,d]` tensor, result `[d]`.
    pub fn mean_rows(&self) -> Tensor {
        assert_eq!(self.rank(), 2, "mean_rows needs a rank-2 tensor");
        let (n, d) = (self.shape()[0], self.shape()[1]);
        assert!(n > 0, "mean_rows of zero rows");
        let mut out = vec![0.0; d];
        for row in self.data().chunks(d) {
            for (o, x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        for o in &mut out {
            *o /= n as f64;
        }
        Tensor::make(vec![d], out, Op::MeanRows { a: self.clone() }, None)
    }

    /// Inner product of two same-shape tensors, rank-0 result.
    pub fn dot(&self, rhs: &Tensor) -> Tensor {
        assert_eq!(self.shape(), rhs.shape(), "dot shape mismatch");
        let s = self
            .data()
            .iter()
            .zip(rhs.data())
            .map(|(a, b)| a * b)
            .sum();
        Tensor::make(
            Vec::new(),
            vec![s],
            Op::Dot {
                a: self.clone(),
                b: rhs.clone(),
            },
            None,
        )
    }

    /// Picks `(row, col)` entries from a rank-2 tensor into a `[len]` vector.
    pub fn gather2d(&self, idx: &[(usize, usize)]) -> Tensor {
        assert_eq!(self.rank(), 2, "gather2d needs a rank-2 tensor");
        let (r, c) = (self.shape()[0], self.shape()[1]);
        let data = self.data();
        let out: Vec<f64> = idx
            .iter()
            .map(|&(i, j)| {
                assert!(i < r && j < c, "gather2d index ({i},{j}) out of bounds");
                data[i * c + j]
            })
            .collect();
        Tensor::make(
            vec![idx.len()],
            out,
            Op::Gather2d {
                a: self.clone(),
                idx: idx.to_vec(),
            },
            None,
        )
    }

    /// Scales each row of a `[n,d]` (or a single `[d]`) tensor to unit L2
    /// norm. Rows with norm below [`NORM_EPS`] are divided by the epsilon
    /// instead, so zero rows stay zero.
    pub fn normalize_rows(&self) -> Tensor {
        assert!(self.rank() == 1 || self.rank() == 2, "normalize_rows rank");
        let d = *self.shape().last().unwrap();
        let mut out = Vec::with_capacity(self.numel());
        for row in self.data().chunks(d) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_EPS);
            out.extend(row.iter().map(|v| v / norm));
        }
        Tensor::make(
            self.shape().to_vec(),
            out,
            Op::NormalizeRows { a: self.clone() },
            None,
        )
    }

    /// Appends a column filled with scalar `s` to a rank-2 tensor.
    pub fn append_col_scalar(&self, s: &Tensor) -> Tensor {
        assert_eq!(self.rank(), 2, "append_col_scalar needs rank 2");
        assert_eq!(s.rank(), 0, "appended value must be a scalar");
        let (r, c) = (self.shape()[0], self.shape()[1]);
        let v = s.scalar_value();
        let mut out = Vec::with_capacity(r * (c + 1));
        for row in self.data().chunks(c) {
            out.extend_from_slice(row);
            out.push(v);
        }
        Tensor::make(
            vec![r, c + 1],
            out,
            Op::AppendColScalar {
                a: self.clone(),
                s: s.clone(),
            },
            None,
        )
    }

    /// Appends a row filled with scalar `s` to a rank-2 tensor.
    pub fn append_row_scalar(&self, s: &Tensor) -> Tensor {
        assert_eq!(self.rank(), 2, "append_row_scalar needs rank 2");
        assert_eq!(s.rank(), 0, "appended value must be a scalar");
        let (r, c) = (self.shape()[0], self.shape()[1]);
        let mut out = self.data().to_vec();
        out.extend(std::iter::repeat(s.scalar_value()).take(c));
        Tensor::make(
            vec![r + 1, c],
            out,
            Op::AppendRowScalar {
                a: self.clone(),
                s: s.clone(),
            },
            None,
        )
    }

    /// Rectangular crop `[r0..r1, c0..c1]` of a rank-2 tensor.
    pub fn crop2d(&self, r0: usize, r1: usize, c0: usize, c1: usize) -> Tensor {
        assert_eq!(self.rank(), 2, "crop2d needs rank 2");
        let (r, c) = (self.shape()[0], self.shape()[1]);
        assert!(r0 < r1 && r1 <= r && c0 < c1 && c1 <= c, "crop2d bounds");
        let data = self.data();
        let mut out = Vec::with_capacity((r1 - r0) * (c1 - c0));
        for i in r0..r1 {
            out.extend_from_slice(&data[i * c + c0..i * c + c1]);
        }
        Tensor::make(
            vec![r1 - r0, c1 - c0],
            out,
            Op::Crop2d {
                a: self.clone(),
                r0,
                c0,
            },
            None,
        )
    }

    /// Concatenates rank-2 tensors with equal row counts along columns.
    pub fn concat_cols(xs: &[Tensor]) -> Tensor {
        assert!(!xs.is_empty(), "concat_cols of nothing");
        let r = xs[0].shape()[0];
        for x in xs {
            assert_eq!(x.rank(), 2, "concat_cols needs rank-2 inputs");
            assert_eq!(x.shape()[0], r, "concat_cols row count mismatch");
        }
        let total: usize = xs.iter().map(|x| x.shape()[1]).sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for x in xs {
                let c = x.shape()[1];
                out.extend_from_slice(&x.data()[i * c..(i + 1) * c]);
            }
        }
        Tensor::make(
            vec![r, total],
            out,
            Op::ConcatCols { xs: xs.to_vec() },
            None,
        )
    }

    /// Concatenates rank-1 tensors.
    pub fn concat1d(xs: &[Tensor]) -> Tensor {
        assert!(!xs.is_empty(), "concat1d of nothing");
        let mut out = Vec::new();
        for x in xs {
            assert_eq!(x.rank(), 1, "concat1d needs rank-1 inputs");
            out.extend_from_slice(x.data());
        }
        Tensor::make(
            vec![out.len()],
            out,
            Op::Concat1d { xs: xs.to_vec() },
            None,
        )
    }

    /// Stacks rank-0 tensors into a `[n]` vector.
    pub fn stack_scalars(xs: &[Tensor]) -> Tensor {
        assert!(!xs.is_empty(), "stack_scalars of nothing");
        let out: Vec<f64> = xs
            .iter()
            .map(|x| {
                assert_eq!(x.rank(), 0, "stack_scalars needs rank-0 inputs");
                x.data()[0]
            })
            .collect();
        Tensor::make(
            vec![xs.len()],
            out,
            Op::StackScalars { xs: xs.to_vec() },
            None,
        )
    }

    /// Additive angular margin: entries `(r, targets[r])` of a `[n,k]` cosine
    /// matrix become `cos(arccos(c) + margin)`; all others pass through.
    /// Cosines are clamped per [`COS_CLAMP`] before the arccos.
    pub fn margin_at_targets(&self, targets: &[usize], margin: f64) -> Tensor {
        assert_eq!(self.rank(), 2, "margin_at_targets needs rank 2");
        let (n, k) = (self.shape()[0], self.shape()[1]);
        assert_eq!(targets.len(), n, "one target per row required");
        let (sin_m, cos_m) = margin.sin_cos();
        let mut out = self.data().to_vec();
        for (r, &t) in targets.iter().enumerate() {
            assert!(t < k, "target {t} out of range for {k} classes");
            let c = out[r * k + t].clamp(-1.0 + COS_CLAMP, 1.0 - COS_CLAMP);
            out[r * k + t] = c * cos_m - (1.0 - c * c).sqrt() * sin_m;
        }
        Tensor::make(
            vec![n, k],
            out,
            Op::MarginAtTargets {
                a: self.clone(),
                targets: targets.to_vec(),
                margin,
            },
            None,
        )
    }

    /// Mean softmax cross-entropy of `[n,k]` logits against integer targets,
    /// rank-0 result.
    pub fn cross_entropy_logits(&self, targets: &[usize]) -> Tensor {
        assert_eq!(self.rank(), 2, "cross_entropy_logits needs rank 2");
        let (n, k) = (self.shape()[0], self.shape()[1]);
        assert_eq!(targets.len(), n, "one target per row required");
        let mut total = 0.0;
        for (row, &t) in self.data().chunks(k).zip(targets) {
            assert!(t < k, "target {t} out of range for {k} classes");
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[t];
        }
        Tensor::make(
            Vec::new(),
            vec![total / n as f64],
            Op::CrossEntropyLogits {
                a: self.clone(),
                targets: targets.to_vec(),
            },
            None,
        )
    }
}

// ── Reverse rules ─────────────────────────────────────────────────────────

/// Routes `grad` (the adjoint of `node`) to the adjoints of its parents.
pub(crate) fn accumulate_parent_grads(
    node: &Tensor,
    grad: &[f64],
    grads: &mut HashMap<u64, Vec<f64>>,
) {
    match &node.inner.op {
        Op::Leaf => {}
        Op::Matmul { a, b } => {
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let n = b.shape()[1];
            if a.requires_grad() {
                add_into(grads, a, matmul_nt(grad, b.data(), m, n, k));
            }
            if b.requires_grad() {
                add_into(grads, b, matmul_tn(a.data(), grad, m, k, n));
            }
        }
        Op::Transpose { a } => {
            let (r, c) = (a.shape()[0], a.shape()[1]);
            let mut da = vec![0.0; r * c];
            for i in 0..c {
                for j in 0..r {
                    da[j * c + i] = grad[i * r + j];
                }
            }
            add_into(grads, a, da);
        }
        Op::Reshape { a } => add_into(grads, a, grad.to_vec()),
        Op::Add { a, b } => {
            add_into(grads, a, grad.to_vec());
            add_into(grads, b, grad.to_vec());
        }
        Op::Sub { a, b } => {
            add_into(grads, a, grad.to_vec());
            add_into(grads, b, grad.iter().map(|g| -g).collect());
        }
        Op::Mul { a, b } => {
            if a.requires_grad() {
                add_into(grads, a, zip_map(grad, b.data(), |g, bv| g * bv));
            }
            if b.requires_grad() {
                add_into(grads, b, zip_map(grad, a.data(), |g, av| g * av));
            }
        }
        Op::Scale { a, c } => add_into(grads, a, grad.iter().map(|g| g * c).collect()),
        Op::AddScalar { a } => add_into(grads, a, grad.to_vec()),
        Op::Neg { a } => add_into(grads, a, grad.iter().map(|g| -g).collect()),
        Op::AddBias { a, bias } => {
            let d = bias.numel();
            if a.requires_grad() {
                add_into(grads, a, grad.to_vec());
            }
            if bias.requires_grad() {
                let mut db = vec![0.0; d];
                for row in grad.chunks(d) {
                    for (o, g) in db.iter_mut().zip(row) {
                        *o += g;
                    }
                }
                add_into(grads, bias, db);
            }
        }
        Op::AddChanBias { a, bias } => {
            let c = bias.numel();
            let plane = grad.len() / c;
            if a.requires_grad() {
                add_into(grads, a, grad.to_vec());
            }
            if bias.requires_grad() {
                let db: Vec<f64> = grad.chunks(plane).map(|p| p.iter().sum()).collect();
                add_into(grads, bias, db);
            }
        }
        Op::Relu { a } => {
            let da = zip_map(grad, a.data(), |g, x| if x > 0.0 { g } else { 0.0 });
            add_into(grads, a, da);
        }
        Op::Gelu { a } => {
            let da = zip_map(grad, a.data(), |g, x| g * gelu_grad(x));
            add_into(grads, a, da);
        }
        Op::Ln { a } => {
            let da = zip_map(grad, a.data(), |g, x| {
                if x > LN_FLOOR {
                    g / x
                } else {
                    0.0
                }
            });
            add_into(grads, a, da);
        }
        Op::Softmax { a, axis } => {
            // d_x = y * (g - <g, y>) per line, with y the softmax output.
            let y = node.data();
            let mut da = grad.to_vec();
            for_each_line_pair_mut(&mut da, y, a.shape(), *axis, |gl, yl| {
                let dot: f64 = gl.iter().zip(yl.iter()).map(|(g, y)| g * y).sum();
                for (g, y) in gl.iter_mut().zip(yl) {
                    *g = y * (*g - dot);
                }
            });
            add_into(grads, a, da);
        }
        Op::LayerNorm { a, gain, bias } => {
            let d = *a.shape().last().unwrap();
            let g = gain.data();
            let mut da = vec![0.0; a.numel()];
            let mut dgain = vec![0.0; d];
            let mut dbias = vec![0.0; d];
            for (row_i, (row, grow)) in a.data().chunks(d).zip(grad.chunks(d)).enumerate() {
                let (mean, inv_std) = row_moments(row);
                let base = row_i * d;
                let mut mean_dxh = 0.0;
                let mut mean_dxh_xh = 0.0;
                for j in 0..d {
                    let xh = (row[j] - mean) * inv_std;
                    let dxh = grow[j] * g[j];
                    dgain[j] += grow[j] * xh;
                    dbias[j] += grow[j];
                    mean_dxh += dxh;
                    mean_dxh_xh += dxh * xh;
                }
                mean_dxh /= d as f64;
                mean_dxh_xh /= d as f64;
                for j in 0..d {
                    let xh = (row[j] - mean) * inv_std;
                    let dxh = grow[j] * g[j];
                    da[base + j] = inv_std * (dxh - mean_dxh - xh * mean_dxh_xh);
                }
            }
            if a.requires_grad() {
                add_into(grads, a, da);
            }
            if gain.requires_grad() {
                add_into(grads, gain, dgain);
            }
            if bias.requires_grad() {
                add_into(grads, bias, dbias);
            }
        }
        Op::Conv2d { x, w, stride, pad } => {
            conv2d_backward(node, x, w, *stride, *pad, grad, grads);
        }
        Op::Sum { a } => {
            let g = grad[0];
            add_into(grads, a, vec![g; a.numel()]);
        }
        Op::Mean { a } => {
            let g = grad[0] / a.numel() as f64;
            add_into(grads, a, vec![g; a.numel()]);
        }
        Op::MeanRows { a } => {
            let (n, d) = (a.shape()[0], a.shape()[1]);
            let scale = 1.0 / n as f64;
            let mut da = Vec::with_capacity(n * d);
            for _ in 0..n {
                da.extend(grad.iter().map(|g| g * scale));
            }
            add_into(grads, a, da);
        }
        Op::Dot { a, b } => {
            let g = grad[0];
            if a.requires_grad() {
                add_into(grads, a, b.data().iter().map(|v| v * g).collect());
            }
            if b.requires_grad() {
                add_into(grads, b, a.data().iter().map(|v| v * g).collect());
            }
        }
        Op::Gather2d { a, idx } => {
            let c = a.shape()[1];
            let mut da = vec![0.0; a.numel()];
            for (g, &(i, j)) in grad.iter().zip(idx) {
                da[i * c + j] += g;
            }
            add_into(grads, a, da);
        }
        Op::NormalizeRows { a } => {
            let d = *a.shape().last().unwrap();
            let y = node.data();
            let mut da = Vec::with_capacity(a.numel());
            for ((row, yrow), grow) in a.data().chunks(d).zip(y.chunks(d)).zip(grad.chunks(d)) {
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_EPS);
                let dot: f64 = grow.iter().zip(yrow).map(|(g, y)| g * y).sum();
                for (g, y) in grow.iter().zip(yrow) {
                    da.push((g - y * dot) / norm);
                }
            }
            add_into(grads, a, da);
        }
        Op::AppendColScalar { a, s } => {
            let (r, c) = (a.shape()[0], a.shape()[1]);
            if a.requires_grad() {
                let mut da = Vec::with_capacity(r * c);
                for row in grad.chunks(c + 1) {
                    da.extend_from_slice(&row[..c]);
                }
                add_into(grads, a, da);
            }
            if s.requires_grad() {
                let ds: f64 = grad.chunks(c + 1).map(|row| row[c]).sum();
                add_into(grads, s, vec![ds]);
            }
        }
        Op::AppendRowScalar { a, s } => {
            let (r, c) = (a.shape()[0], a.shape()[1]);
            if a.requires_grad() {
                add_into(grads, a, grad[..r * c].to_vec());
            }
            if s.requires_grad() {
                let ds: f64 = grad[r * c..].iter().sum();
                add_into(grads, s, vec![ds]);
            }
        }
        Op::Crop2d { a, r0, c0 } => {
            let c = a.shape()[1];
            let (or, oc) = (node.shape()[0], node.shape()[1]);
            let mut da = vec![0.0; a.numel()];
            for i in 0..or {
                for j in 0..oc {
                    da[(r0 + i) * c + (c0 + j)] = grad[i * oc + j];
                }
            }
            add_into(grads, a, da);
        }
        Op::ConcatCols { xs } => {
            let r = xs[0].shape()[0];
            let total: usize = xs.iter().map(|x| x.shape()[1]).sum();
            let mut offset = 0;
            for x in xs {
                if x.requires_grad() {
                    let c = x.shape()[1];
                    let mut dx = Vec::with_capacity(r * c);
                    for i in 0..r {
                        dx.extend_from_slice(&grad[i * total + offset..i * total + offset + c]);
                    }
                    add_into(grads, x, dx);
                }
                offset += x.shape()[1];
            }
        }
        Op::Concat1d { xs } => {
            let mut offset = 0;
            for x in xs {
                let n = x.numel();
                if x.requires_grad() {
                    add_into(grads, x, grad[offset..offset + n].to_vec());
                }
                offset += n;
            }
        }
        Op::StackScalars { xs } => {
            for (g, x) in grad.iter().zip(xs) {
                if x.requires_grad() {
                    add_into(grads, x, vec![*g]);
                }
            }
        }
        Op::MarginAtTargets { a, targets, margin } => {
            let k = a.shape()[1];
            let (sin_m, cos_m) = margin.sin_cos();
            let mut da = grad.to_vec();
            for (r, &t) in targets.iter().enumerate() {
                let c = a.data()[r * k + t];
                let slope = if c.abs() < 1.0 - COS_CLAMP {
                    cos_m + c * sin_m / (1.0 - c * c).sqrt()
                } else {
                    0.0
                };
                da[r * k + t] *= slope;
            }
            add_into(grads, a, da);
        }
        Op::CrossEntropyLogits { a, targets } => {
            let (n, k) = (a.shape()[0], a.shape()[1]);
            let g = grad[0] / n as f64;
            let mut da = Vec::with_capacity(n * k);
            for (row, &t) in a.data().chunks(k).zip(targets) {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let denom: f64 = row.iter().map(|v| (v - max).exp()).sum();
                for (j, &v) in row.iter().enumerate() {
                    let p = (v - max).exp() / denom;
                    da.push(g * (p - if j == t { 1.0 } else { 0.0 }));
                }
            }
            add_into(grads, a, da);
        }
    }
}

fn conv2d_backward(
    node: &Tensor,
    x: &Tensor,
    w: &Tensor,
    stride: usize,
    pad: usize,
    grad: &[f64],
    grads: &mut HashMap<u64, Vec<f64>>,
) {
    let (c, h, wid) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (o, _, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    let (ho, wo) = (node.shape()[1], node.shape()[2]);
    let xd = x.data();
    let kd = w.data();
    if x.requires_grad() {
        let mut dx = vec![0.0; x.numel()];
        let run = |ci: usize, plane: &mut [f64]| {
            for oi in 0..o {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let g = grad[(oi * ho + oy) * wo + ox];
                        if g == 0.0 {
                            continue;
                        }
                        for ky in 0..kh {
                            let iy = oy * stride + ky;
                            if iy < pad || iy >= h + pad {
                                continue;
                            }
                            let iy = iy - pad;
                            for kx in 0..kw {
                                let ix = ox * stride + kx;
                                if ix < pad || ix >= wid + pad {
                                    continue;
                                }
                                let ix = ix - pad;
                                plane[iy * wid + ix] += g * kd[((oi * c + ci) * kh + ky) * kw + kx];
                            }
                        }
                    }
                }
            }
        };
        if o * ho * wo * c * kh * kw >= PAR_THRESHOLD {
            dx.par_chunks_mut(h * wid)
                .enumerate()
                .for_each(|(ci, plane)| run(ci, plane));
        } else {
            for (ci, plane) in dx.chunks_mut(h * wid).enumerate() {
                run(ci, plane);
            }
        }
        add_into(grads, x, dx);
    }
    if w.requires_grad() {
        let mut dw = vec![0.0; w.numel()];
        let per_out = c * kh * kw;
        let run = |oi: usize, wslice: &mut [f64]| {
            for oy in 0..ho {
                for ox in 0..wo {
                    let g = grad[(oi * ho + oy) * wo + ox];
                    if g == 0.0 {
                        continue;
                    }
                    for ci in 0..c {
                        for ky in 0..kh {
                            let iy = oy * stride + ky;
                            if iy < pad || iy >= h + pad {
                                continue;
                            }
                            let iy = iy - pad;
                            for kx in 0..kw {
                                let ix = ox * stride + kx;
                                if ix < pad || ix >= wid + pad {
                                    continue;
                                }
                                let ix = ix - pad;
                                wslice[(ci * kh + ky) * kw + kx] += g * xd[(ci * h + iy) * wid + ix];
                            }
                        }
                    }
                }
            }
        };
        if o * ho * wo * per_out >= PAR_THRESHOLD {
            dw.par_chunks_mut(per_out)
                .enumerate()
                .for_each(|(oi, ws)| run(oi, ws));
        } else {
            for (oi, ws) in dw.chunks_mut(per_out).enumerate() {
                run(oi, ws);
            }
        }
        add_into(grads, w, dw);
    }
}

// ── Kernels and small helpers ─────────────────────────────────────────────

/// Work size above which matmul and conv parallelize over independent output
/// slices. Each output element is still a fixed sequential reduction, so the
/// result is identical at any thread count.
const PAR_THRESHOLD: usize = 1 << 15;

/// `[m,k] x [k,n]`, both row-major.
pub(crate) fn matmul_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    let row = |i: usize, orow: &mut [f64]| {
        for (kk, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av != 0.0 {
                let brow = &b[kk * n..(kk + 1) * n];
                for (o, bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    };
    if m * k * n >= PAR_THRESHOLD && m > 1 {
        out.par_chunks_mut(n).enumerate().for_each(|(i, r)| row(i, r));
    } else {
        for (i, r) in out.chunks_mut(n).enumerate() {
            row(i, r);
        }
    }
    out
}

/// `[m,k] x [n,k]^T -> [m,n]`.
pub(crate) fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    let row = |i: usize, orow: &mut [f64]| {
        let arow = &a[i * k..(i + 1) * k];
        for (j, o) in orow.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            *o = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    };
    if m * k * n >= PAR_THRESHOLD && m > 1 {
        out.par_chunks_mut(n).enumerate().for_each(|(i, r)| row(i, r));
    } else {
        for (i, r) in out.chunks_mut(n).enumerate() {
            row(i, r);
        }
    }
    out
}

/// `[m,k]^T x [m,n] -> [k,n]`.
pub(crate) fn matmul_tn(a: &[f64], g: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    let row = |kk: usize, orow: &mut [f64]| {
        for i in 0..m {
            let av = a[i * k + kk];
            if av != 0.0 {
                let grow = &g[i * n..(i + 1) * n];
                for (o, gv) in orow.iter_mut().zip(grow) {
                    *o += av * gv;
                }
            }
        }
    };
    if m * k * n >= PAR_THRESHOLD && k > 1 {
        out.par_chunks_mut(n).enumerate().for_each(|(kk, r)| row(kk, r));
    } else {
        for (kk, r) in out.chunks_mut(n).enumerate() {
            row(kk, r);
        }
    }
    out
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044715;

fn gelu_fwd(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_K * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_K * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_A * x * x)
}

fn row_moments(row: &[f64]) -> (f64, f64) {
    let d = row.len() as f64;
    let mean = row.iter().sum::<f64>() / d;
    let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d;
    (mean, 1.0 / (var + LAYER_NORM_EPS).sqrt())
}

/// Stable softmax of one contiguous line, in place.
fn softmax_line(line: &mut [f64]) {
    let max = line.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in line.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in line.iter_mut() {
        *v /= sum;
    }
}

/// Applies `f` to every line of `data` along `axis`. Lines along axis 1 (or a
/// rank-1 tensor) are contiguous; axis 0 lines are gathered and scattered.
fn for_each_line_mut(data: &mut [f64], shape: &[usize], axis: usize, f: impl Fn(&mut [f64])) {
    if shape.len() <= 1 {
        f(data);
        return;
    }
    let (r, c) = (shape[0], shape[1]);
    if axis == 1 {
        for line in data.chunks_mut(c) {
            f(line);
        }
    } else {
        let mut line = vec![0.0; r];
        for j in 0..c {
            for i in 0..r {
                line[i] = data[i * c + j];
            }
            f(&mut line);
            for i in 0..r {
                data[i * c + j] = line[i];
            }
        }
    }
}

/// Like [`for_each_line_mut`] but pairing mutable lines of `data` with
/// read-only lines of `aux` (same layout).
fn for_each_line_pair_mut(
    data: &mut [f64],
    aux: &[f64],
    shape: &[usize],
    axis: usize,
    f: impl Fn(&mut [f64], &[f64]),
) {
    if shape.len() <= 1 {
        f(data, aux);
        return;
    }
    let (r, c) = (shape[0], shape[1]);
    if axis == 1 {
        for (line, aline) in data.chunks_mut(c).zip(aux.chunks(c)) {
            f(line, aline);
        }
    } else {
        let mut line = vec![0.0; r];
        let mut aline = vec![0.0; r];
        for j in 0..c {
            for i in 0..r {
                line[i] = data[i * c + j];
                aline[i] = aux[i * c + j];
            }
            f(&mut line, &aline);
            for i in 0..r {
                data[i * c + j] = line[i];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn matmul_known_product() {
        let a = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let b = Tensor::from_vec(&[2, 1], vec![5.0, 6.0]);
        let c = a.matmul(&b);
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.data(), &[17.0, 39.0]);
    }

    #[test]
    #[should_panic(expected = "inner dimensions differ")]
    fn matmul_shape_mismatch_panics() {
        let a = Tensor::from_vec(&[2, 3], vec![0.0; 6]);
        let b = Tensor::from_vec(&[2, 2], vec![0.0; 4]);
        let _ = a.matmul(&b);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0]);
        let y = x.softmax(1);
        for row in y.data().chunks(3) {
            assert_close(row.iter().sum::<f64>(), 1.0, 1e-12);
        }
        let yc = x.softmax(0);
        for j in 0..3 {
            assert_close(yc.at2(0, j) + yc.at2(1, j), 1.0, 1e-12);
        }
    }

    #[test]
    fn softmax_shift_invariance() {
        let x = Tensor::from_vec(&[1, 3], vec![1.0, 2.0, 3.0]);
        let y1 = x.softmax(1);
        let y2 = x.add_scalar(100.0).softmax(1);
        for (a, b) in y1.data().iter().zip(y2.data()) {
            assert_close(*a, *b, 1e-12);
        }
    }

    #[test]
    fn conv2d_identity_kernel() {
        // 1x1 kernel of weight 1 reproduces the input at stride 1.
        let x = Tensor::from_vec(&[1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let w = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]);
        let y = x.conv2d(&w, 1, 0);
        assert_eq!(y.shape(), &[1, 2, 3]);
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv2d_stride_two_extents() {
        let x = Tensor::from_vec(&[1, 8, 8], vec![1.0; 64]);
        let w = Tensor::from_vec(&[2, 1, 3, 3], vec![1.0; 18]);
        let y = x.conv2d(&w, 2, 1);
        assert_eq!(y.shape(), &[2, 4, 4]);
        // Center taps see the full 3x3 ones window.
        assert_close(y.data()[5], 9.0, 1e-12);
    }

    #[test]
    #[should_panic(expected = "larger than padded input")]
    fn conv2d_oversized_kernel_panics() {
        let x = Tensor::from_vec(&[1, 2, 2], vec![0.0; 4]);
        let w = Tensor::from_vec(&[1, 1, 5, 5], vec![0.0; 25]);
        let _ = x.conv2d(&w, 1, 0);
    }

    #[test]
    fn layer_norm_zero_mean_unit_var() {
        let x = Tensor::from_vec(&[1, 4], vec![1.0, 2.0, 3.0, 4.0]);
        let gain = Tensor::from_vec(&[4], vec![1.0; 4]);
        let bias = Tensor::from_vec(&[4], vec![0.0; 4]);
        let y = x.layer_norm(&gain, &bias);
        let mean: f64 = y.data().iter().sum::<f64>() / 4.0;
        let var: f64 = y.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
        assert_close(mean, 0.0, 1e-12);
        assert_close(var, 1.0, 1e-3);
    }

    #[test]
    fn normalize_rows_unit_norm_and_zero_row() {
        let x = Tensor::from_vec(&[2, 3], vec![3.0, 0.0, 4.0, 0.0, 0.0, 0.0]);
        let y = x.normalize_rows();
        let n0: f64 = y.data()[..3].iter().map(|v| v * v).sum::<f64>().sqrt();
        assert_close(n0, 1.0, 1e-12);
        assert_eq!(&y.data()[3..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn margin_zero_is_identity() {
        let x = Tensor::from_vec(&[2, 2], vec![0.5, -0.2, 0.1, 0.9]);
        let y = x.margin_at_targets(&[0, 1], 0.0);
        for (a, b) in x.data().iter().zip(y.data()) {
            assert_close(*a, *b, 1e-12);
        }
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let x = Tensor::from_vec(&[1, 4], vec![0.0; 4]);
        let l = x.cross_entropy_logits(&[2]);
        assert_close(l.scalar_value(), (4.0f64).ln(), 1e-12);
    }

    #[test]
    fn append_and_crop_round_trip() {
        let x = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let s = Tensor::scalar(9.0);
        let wide = x.append_col_scalar(&s);
        assert_eq!(wide.shape(), &[2, 3]);
        assert_eq!(wide.data(), &[1.0, 2.0, 9.0, 3.0, 4.0, 9.0]);
        let tall = x.append_row_scalar(&s);
        assert_eq!(tall.shape(), &[3, 2]);
        assert_eq!(tall.data(), &[1.0, 2.0, 3.0, 4.0, 9.0, 9.0]);
        let back = wide.crop2d(0, 2, 0, 2);
        assert_eq!(back.data(), x.data());
    }

    #[test]
    fn gather_picks_entries() {
        let x = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let g = x.gather2d(&[(0, 2), (1, 0)]);
        assert_eq!(g.data(), &[3.0, 4.0]);
    }
}
