use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use whorl_autograd::checkpoint::{self, CheckpointError};
use whorl_autograd::{Param, Parameter, Tensor};
use whorl_image::GrayImage;
use whorl_matcher::{
    select_matches, ConfidenceMaps, MatchSet, MatcherConfig, MatcherNet, ModelError, CONFIG_FILE,
    WEIGHTS_FILE,
};
use whorl_synth::mix_seed;

use crate::{EmbedError, Embedding256, EMBED_DIM};

/// Representation network: a dense-matcher trunk plus a linear head that
/// pools each image's tokens into a unit-norm [`Embedding256`].
///
/// Both images of a pair go through the same weights (the trunk's encoder
/// is already Siamese), so swapping the inputs swaps the outputs.
pub struct EmbedNet {
    trunk: MatcherNet,
    head_w: Param,
    head_b: Param,
    params: Vec<Param>,
}

/// Embeddings and interpretable matches from one pair forward pass.
pub struct PairEmbedding {
    pub r1: Embedding256,
    pub r2: Embedding256,
    /// Mutual-best matches at the trunk's configured threshold, selected
    /// from the same forward pass that produced the embeddings.
    pub matches: MatchSet,
}

impl EmbedNet {
    /// Fresh trunk and head, both drawn from `seed`.
    pub fn new(cfg: MatcherConfig, seed: u64) -> Result<EmbedNet, ModelError> {
        Ok(EmbedNet::with_head(MatcherNet::new(cfg, seed)?, mix_seed(seed, 1)))
    }

    /// Trunk warm-started from a trained dense-matcher checkpoint, head
    /// fresh from `head_seed`.
    ///
    /// `image_size` may differ from the checkpoint's: the local branch runs
    /// on upsampled ROI crops. Every trunk weight transfers unchanged
    /// except the learned token positions, which are resampled onto the new
    /// grid (see [`adapted_matcher`]).
    pub fn from_stage1(
        stage1_dir: &Path,
        image_size: usize,
        head_seed: u64,
    ) -> Result<EmbedNet, EmbedError> {
        Ok(EmbedNet::with_head(adapted_matcher(stage1_dir, image_size)?, head_seed))
    }

    fn with_head(trunk: MatcherNet, head_seed: u64) -> EmbedNet {
        let dim = trunk.config().dim;
        let mut rng = ChaCha8Rng::seed_from_u64(head_seed);
        let std = (1.0 / dim as f64).sqrt();
        let head_w = Parameter::randn("head.w", &[dim, EMBED_DIM], std, &mut rng);
        let head_b = Parameter::zeros("head.b", &[EMBED_DIM]);
        let mut params = trunk.params().to_vec();
        params.extend([head_w.clone(), head_b.clone()]);
        EmbedNet { trunk, head_w, head_b, params }
    }

    pub fn config(&self) -> &MatcherConfig {
        self.trunk.config()
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    /// Pools one image's token matrix and projects it onto the unit sphere.
    ///
    /// Tokens are one per grid cell; the matching head's dustbin exists
    /// only as a score-matrix row/column, never as a token, so pooling over
    /// every row pools exactly the real cells.
    fn project(&self, tokens: &Tensor, track: bool) -> Tensor {
        let w = if track { self.head_w.leaf() } else { self.head_w.frozen() };
        let b = if track { self.head_b.leaf() } else { self.head_b.frozen() };
        tokens
            .mean_rows()
            .reshape(&[1, self.trunk.config().dim])
            .matmul(&w)
            .add_bias(&b)
            .normalize_rows()
            .reshape(&[EMBED_DIM])
    }

    /// Training pathway: the trunk's confidence maps plus both unit-norm
    /// embedding vectors, all in one graph.
    pub fn forward_pair(
        &self,
        a: &GrayImage,
        b: &GrayImage,
        track: bool,
    ) -> (ConfidenceMaps, Tensor, Tensor) {
        let (maps, ta, tb) = self.trunk.pair_confidence_with_tokens(a, b, track);
        let r1 = self.project(&ta, track);
        let r2 = self.project(&tb, track);
        (maps, r1, r2)
    }

    /// Frozen-weight inference over a pair.
    pub fn embed(&self, a: &GrayImage, b: &GrayImage) -> Result<PairEmbedding, EmbedError> {
        let size = self.trunk.config().image_size;
        for img in [a, b] {
            check_extent("input width", img.width(), size)?;
            check_extent("input height", img.height(), size)?;
        }
        let (maps, r1, r2) = self.forward_pair(a, b, false);
        let cfg = self.trunk.config();
        let matches = select_matches(
            maps.joint.data(),
            maps.n_a,
            maps.n_b,
            cfg.threshold,
            cfg.grid_n(),
            cfg.cell_size,
        );
        Ok(PairEmbedding {
            r1: Embedding256::new(r1.data().to_vec())?,
            r2: Embedding256::new(r2.data().to_vec())?,
            matches,
        })
    }

    /// Writes `config.json` and `weights.ifv` (trunk plus head) under `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), EmbedError> {
        fs::create_dir_all(dir).map_err(|source| EmbedError::Io { path: dir.into(), source })?;
        let cfg_path = dir.join(CONFIG_FILE);
        let body = serde_json::to_vec_pretty(self.trunk.config())
            .map_err(|source| EmbedError::Json { path: cfg_path.clone(), source })?;
        fs::write(&cfg_path, body)
            .map_err(|source| EmbedError::Io { path: cfg_path.clone(), source })?;
        checkpoint::save(&dir.join(WEIGHTS_FILE), &self.params)?;
        Ok(())
    }

    /// Loads a network saved by [`EmbedNet::save`].
    pub fn load(dir: &Path) -> Result<EmbedNet, EmbedError> {
        let cfg_path = dir.join(CONFIG_FILE);
        let body = fs::read(&cfg_path)
            .map_err(|source| EmbedError::Io { path: cfg_path.clone(), source })?;
        let cfg: MatcherConfig = serde_json::from_slice(&body)
            .map_err(|source| EmbedError::Json { path: cfg_path.clone(), source })?;
        let net = EmbedNet::new(cfg, 0)?;
        checkpoint::load_into(&dir.join(WEIGHTS_FILE), &net.params)?;
        Ok(net)
    }
}

fn check_extent(what: &'static str, found: usize, expected: usize) -> Result<(), EmbedError> {
    if found == expected {
        Ok(())
    } else {
        Err(EmbedError::Dimension { what, expected, found })
    }
}

/// Rebuilds a trained dense matcher at a different input size.
///
/// Backbone and attention weights are size-free and copy over unchanged;
/// the learned token positions are defined on the source grid and get
/// bilinearly resampled onto the target grid (center-aligned, the same
/// convention image resizing uses). The result is frozen-equivalent to the
/// checkpoint when the sizes match.
pub fn adapted_matcher(stage1_dir: &Path, image_size: usize) -> Result<MatcherNet, EmbedError> {
    let cfg_path = stage1_dir.join(CONFIG_FILE);
    let body = fs::read(&cfg_path)
        .map_err(|source| EmbedError::Io { path: cfg_path.clone(), source })?;
    let src_cfg: MatcherConfig = serde_json::from_slice(&body)
        .map_err(|source| EmbedError::Json { path: cfg_path.clone(), source })?;
    let cfg = MatcherConfig { image_size, ..src_cfg };
    let net = MatcherNet::new(cfg, 0)?;

    let records = checkpoint::load(&stage1_dir.join(WEIGHTS_FILE))?;
    let by_name: HashMap<&str, &checkpoint::TensorRecord> =
        records.iter().map(|r| (r.name.as_str(), r)).collect();
    for p in net.params() {
        let rec = by_name
            .get(p.name())
            .ok_or_else(|| CheckpointError::Missing(p.name().to_string()))?;
        let values: Vec<f64> = rec.values.iter().map(|&v| v as f64).collect();
        if rec.shape == p.shape() {
            p.set_value(values);
        } else if p.name().ends_with(".pos")
            && rec.shape.len() == 2
            && p.shape().len() == 2
            && rec.shape[1] == p.shape()[1]
        {
            let g_src = grid_side(rec.shape[0]);
            let g_dst = grid_side(p.shape()[0]);
            p.set_value(resample_pos_grid(&values, g_src, g_dst, rec.shape[1]));
        } else {
            return Err(CheckpointError::ShapeMismatch {
                name: p.name().to_string(),
                expected: p.shape().to_vec(),
                found: rec.shape.clone(),
            }
            .into());
        }
    }
    Ok(net)
}

/// Side length of the square token grid a position table covers.
fn grid_side(tokens: usize) -> usize {
    let side = (tokens as f64).sqrt().round() as usize;
    assert_eq!(side * side, tokens, "position table of {tokens} tokens is not a square grid");
    side
}

/// Center-aligned bilinear resampling of a `[g_src^2, dim]` position table
/// onto a `g_dst` by `g_dst` grid, channel by channel.
fn resample_pos_grid(values: &[f64], g_src: usize, g_dst: usize, dim: usize) -> Vec<f64> {
    let scale = g_src as f64 / g_dst as f64;
    let coord = |i: usize| ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (g_src - 1) as f64);
    let mut out = Vec::with_capacity(g_dst * g_dst * dim);
    for row in 0..g_dst {
        let v = coord(row);
        let y0 = v.floor() as usize;
        let y1 = (y0 + 1).min(g_src - 1);
        let fy = v - y0 as f64;
        for col in 0..g_dst {
            let u = coord(col);
            let x0 = u.floor() as usize;
            let x1 = (x0 + 1).min(g_src - 1);
            let fx = u - x0 as f64;
            let at = |y: usize, x: usize, c: usize| values[(y * g_src + x) * dim + c];
            for c in 0..dim {
                let top = at(y0, x0, c) * (1.0 - fx) + at(y0, x1, c) * fx;
                let bot = at(y1, x0, c) * (1.0 - fx) + at(y1, x1, c) * fx;
                out.push(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use whorl_synth::SyntheticFinger;

    fn tiny_cfg() -> MatcherConfig {
        MatcherConfig {
            dim: 16,
            heads: 2,
            rounds: 1,
            image_size: 64,
            ..Default::default()
        }
    }

    fn test_image(seed: u64) -> GrayImage {
        SyntheticFinger::new(seed, 50).render(64).image
    }

    #[test]
    fn seeds_give_reproducible_weights() {
        let a = EmbedNet::new(tiny_cfg(), 7).unwrap();
        let b = EmbedNet::new(tiny_cfg(), 7).unwrap();
        for (pa, pb) in a.params().iter().zip(b.params()) {
            assert_eq!(pa.value(), pb.value(), "{} differs across same-seed inits", pa.name());
        }
    }

    #[test]
    fn embeddings_are_unit_norm_for_random_inputs() {
        let net = EmbedNet::new(tiny_cfg(), 3).unwrap();
        let out = net.embed(&test_image(0), &test_image(1)).unwrap();
        for r in [&out.r1, &out.r2] {
            let norm: f64 = r.values().iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() <= 1e-6, "norm {norm} off unit");
        }
    }

    #[test]
    fn identical_inputs_give_identical_embeddings() {
        let net = EmbedNet::new(tiny_cfg(), 3).unwrap();
        let img = test_image(2);
        let out = net.embed(&img, &img).unwrap();
        // The Siamese encoder produces byte-identical token sets for an
        // image paired with itself, so the projections agree exactly.
        assert_eq!(out.r1.values(), out.r2.values());
        assert!((out.r1.cosine(&out.r2) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn embed_rejects_mismatched_extents() {
        let net = EmbedNet::new(tiny_cfg(), 3).unwrap();
        let small = SyntheticFinger::new(0, 50).render(32).image;
        match net.embed(&small, &small) {
            Err(EmbedError::Dimension { expected: 64, found: 32, .. }) => {}
            other => panic!("expected a dimension error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn save_load_round_trip_preserves_embeddings_to_f32() {
        let tmp = tempfile::tempdir().unwrap();
        let net = EmbedNet::new(tiny_cfg(), 9).unwrap();
        let (a, b) = (test_image(0), test_image(1));
        let before = net.embed(&a, &b).unwrap();
        net.save(tmp.path()).unwrap();
        let loaded = EmbedNet::load(tmp.path()).unwrap();
        let after = loaded.embed(&a, &b).unwrap();
        for (x, y) in before.r1.values().iter().zip(after.r1.values()) {
            assert!((x - y).abs() < 1e-5, "embedding drifted more than f32 storage explains");
        }
        assert_eq!(before.matches.len(), after.matches.len());
    }

    #[test]
    fn stage1_adaptation_at_equal_size_is_an_exact_copy() {
        let tmp = tempfile::tempdir().unwrap();
        let stage1 = MatcherNet::new(tiny_cfg(), 11).unwrap();
        stage1.save(tmp.path()).unwrap();
        let adapted = adapted_matcher(tmp.path(), 64).unwrap();
        let reloaded = MatcherNet::load(tmp.path()).unwrap();
        for (a, b) in adapted.params().iter().zip(reloaded.params()) {
            assert_eq!(a.name(), b.name());
            assert_eq!(a.value(), b.value(), "{} diverged without any resampling", a.name());
        }
    }

    #[test]
    fn stage1_adaptation_resamples_only_the_position_table() {
        let tmp = tempfile::tempdir().unwrap();
        let stage1 = MatcherNet::new(tiny_cfg(), 11).unwrap();
        stage1.save(tmp.path()).unwrap();
        // 64 -> 96 pixels is an 8x8 -> 12x12 token grid.
        let adapted = adapted_matcher(tmp.path(), 96).unwrap();
        let src: HashMap<String, Vec<f64>> = MatcherNet::load(tmp.path())
            .unwrap()
            .params()
            .iter()
            .map(|p| (p.name().to_string(), p.value()))
            .collect();
        for p in adapted.params() {
            if p.name().ends_with(".pos") {
                assert_eq!(p.shape(), &[144, 16]);
                // Resampled positions stay inside the source value range
                // per channel: bilinear blending cannot extrapolate.
                let dst = p.value();
                let src_pos = &src[p.name()];
                for c in 0..16 {
                    let ch = |vals: &[f64]| {
                        vals.iter().skip(c).step_by(16).fold(
                            (f64::INFINITY, f64::NEG_INFINITY),
                            |(lo, hi), &v| (lo.min(v), hi.max(v)),
                        )
                    };
                    let (slo, shi) = ch(src_pos);
                    let (dlo, dhi) = ch(&dst);
                    assert!(dlo >= slo - 1e-12 && dhi <= shi + 1e-12);
                }
            } else {
                assert_eq!(p.value(), src[p.name()], "{} should copy unchanged", p.name());
            }
        }
        // The adapted net must actually run at the new size.
        let img = SyntheticFinger::new(4, 50).render(96).image;
        adapted.match_images(&img, &img);
    }

    #[test]
    fn pos_resampling_preserves_constants_and_x_ramps() {
        // One constant channel and one channel linear in grid x.
        let (g_src, g_dst, dim) = (8usize, 12usize, 2usize);
        let mut vals = Vec::new();
        for _row in 0..g_src {
            for col in 0..g_src {
                vals.push(5.0);
                vals.push(col as f64);
            }
        }
        let out = resample_pos_grid(&vals, g_src, g_dst, dim);
        assert_eq!(out.len(), g_dst * g_dst * dim);
        for row in 0..g_dst {
            let mut prev = f64::NEG_INFINITY;
            for col in 0..g_dst {
                let base = (row * g_dst + col) * dim;
                assert_eq!(out[base], 5.0, "constant channel changed");
                assert!(out[base + 1] >= prev, "x ramp lost monotonicity");
                prev = out[base + 1];
            }
            assert!(prev <= (g_src - 1) as f64 + 1e-12);
        }
    }

    #[test]
    fn pos_resampling_at_equal_size_is_identity() {
        let vals: Vec<f64> = (0..5 * 5 * 3).map(|i| (i as f64).sin()).collect();
        assert_eq!(resample_pos_grid(&vals, 5, 5, 3), vals);
    }
}
