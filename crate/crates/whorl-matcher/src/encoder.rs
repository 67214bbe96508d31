use rand::RngCore;
use whorl_autograd::{Param, Parameter, Tensor};

/// Turns a `[dim, n, n]` feature grid into `[n*n, dim]` tokens: flatten,
/// learned linear projection, plus a learned per-position embedding.
pub struct Tokenizer {
    proj: Param,
    pos: Param,
    tokens: usize,
}

impl Tokenizer {
    pub fn new(prefix: &str, dim: usize, tokens: usize, rng: &mut dyn RngCore) -> Tokenizer {
        let std = (1.0 / dim as f64).sqrt();
        Tokenizer {
            proj: Parameter::randn(&format!("{prefix}.proj"), &[dim, dim], std, rng),
            pos: Parameter::randn(&format!("{prefix}.pos"), &[tokens, dim], 0.02, rng),
            tokens,
        }
    }

    pub fn forward(&self, grid: &Tensor, track: bool) -> Tensor {
        let (d, h, w) = (grid.shape()[0], grid.shape()[1], grid.shape()[2]);
        assert_eq!(
            h * w,
            self.tokens,
            "feature grid {h}x{w} does not match the {} learned positions",
            self.tokens
        );
        let proj = if track { self.proj.leaf() } else { self.proj.frozen() };
        let pos = if track { self.pos.leaf() } else { self.pos.frozen() };
        let flat = grid.reshape(&[d, h * w]).transpose();
        &flat.matmul(&proj) + &pos
    }

    pub fn params(&self) -> Vec<Param> {
        vec![self.proj.clone(), self.pos.clone()]
    }
}

/// One post-norm transformer block: multi-head attention (queries from `x`,
/// keys/values from `kv`), residual, layer norm, a GELU feed-forward at 2x
/// width, residual, layer norm.
pub struct AttnBlock {
    wq: Param,
    wk: Param,
    wv: Param,
    wo: Param,
    bo: Param,
    ln1_g: Param,
    ln1_b: Param,
    ff1: Param,
    ff1_b: Param,
    ff2: Param,
    ff2_b: Param,
    ln2_g: Param,
    ln2_b: Param,
    heads: usize,
    dim: usize,
}

impl AttnBlock {
    pub fn new(prefix: &str, dim: usize, heads: usize, rng: &mut dyn RngCore) -> AttnBlock {
        assert!(heads > 0 && dim % heads == 0, "heads {heads} must divide dim {dim}");
        let std = (1.0 / dim as f64).sqrt();
        let p = |n: &str| format!("{prefix}.{n}");
        AttnBlock {
            wq: Parameter::randn(&p("wq"), &[dim, dim], std, rng),
            wk: Parameter::randn(&p("wk"), &[dim, dim], std, rng),
            wv: Parameter::randn(&p("wv"), &[dim, dim], std, rng),
            wo: Parameter::randn(&p("wo"), &[dim, dim], std, rng),
            bo: Parameter::zeros(&p("bo"), &[dim]),
            ln1_g: Parameter::constant(&p("ln1_g"), &[dim], 1.0),
            ln1_b: Parameter::zeros(&p("ln1_b"), &[dim]),
            ff1: Parameter::randn(&p("ff1"), &[dim, 2 * dim], (2.0 / dim as f64).sqrt(), rng),
            ff1_b: Parameter::zeros(&p("ff1_b"), &[2 * dim]),
            ff2: Parameter::randn(&p("ff2"), &[2 * dim, dim], std, rng),
            ff2_b: Parameter::zeros(&p("ff2_b"), &[dim]),
            ln2_g: Parameter::constant(&p("ln2_g"), &[dim], 1.0),
            ln2_b: Parameter::zeros(&p("ln2_b"), &[dim]),
            heads,
            dim,
        }
    }

    /// Multi-head attention output plus each head's attention matrix
    /// (`[n_q, n_kv]`, rows summing to 1).
    pub fn attend(&self, x: &Tensor, kv: &Tensor, track: bool) -> (Tensor, Vec<Tensor>) {
        let t = |p: &Param| if track { p.leaf() } else { p.frozen() };
        let q = x.matmul(&t(&self.wq));
        let k = kv.matmul(&t(&self.wk));
        let v = kv.matmul(&t(&self.wv));
        let (n_q, n_kv) = (q.shape()[0], k.shape()[0]);
        let dk = self.dim / self.heads;
        let scale = 1.0 / (dk as f64).sqrt();

        let mut heads_out = Vec::with_capacity(self.heads);
        let mut attns = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (c0, c1) = (h * dk, (h + 1) * dk);
            let qh = q.crop2d(0, n_q, c0, c1);
            let kh = k.crop2d(0, n_kv, c0, c1);
            let vh = v.crop2d(0, n_kv, c0, c1);
            let attn = qh.matmul(&kh.transpose()).scale(scale).softmax(1);
            heads_out.push(attn.matmul(&vh));
            attns.push(attn);
        }
        let merged = Tensor::concat_cols(&heads_out);
        (merged.matmul(&t(&self.wo)).add_bias(&t(&self.bo)), attns)
    }

    pub fn forward(&self, x: &Tensor, kv: &Tensor, track: bool) -> Tensor {
        let t = |p: &Param| if track { p.leaf() } else { p.frozen() };
        let (att, _) = self.attend(x, kv, track);
        let x = (x + &att).layer_norm(&t(&self.ln1_g), &t(&self.ln1_b));
        let ff = x
            .matmul(&t(&self.ff1))
            .add_bias(&t(&self.ff1_b))
            .gelu()
            .matmul(&t(&self.ff2))
            .add_bias(&t(&self.ff2_b));
        (&x + &ff).layer_norm(&t(&self.ln2_g), &t(&self.ln2_b))
    }

    pub fn params(&self) -> Vec<Param> {
        vec![
            self.wq.clone(),
            self.wk.clone(),
            self.wv.clone(),
            self.wo.clone(),
            self.bo.clone(),
            self.ln1_g.clone(),
            self.ln1_b.clone(),
            self.ff1.clone(),
            self.ff1_b.clone(),
            self.ff2.clone(),
            self.ff2_b.clone(),
            self.ln2_g.clone(),
            self.ln2_b.clone(),
        ]
    }
}

/// Siamese interleaved self/cross encoder.
///
/// Each round applies one shared self-attention block to both token sets,
/// then one shared cross-attention block in both directions *from the same
/// snapshot*, so the two updates see identical inputs. Swapping the two
/// images therefore swaps the outputs exactly, and encoding an image against
/// itself yields two identical token sets.
pub struct Encoder {
    tokenizer: Tokenizer,
    self_blocks: Vec<AttnBlock>,
    cross_blocks: Vec<AttnBlock>,
}

impl Encoder {
    pub fn new(
        prefix: &str,
        dim: usize,
        heads: usize,
        rounds: usize,
        tokens: usize,
        rng: &mut dyn RngCore,
    ) -> Encoder {
        let tokenizer = Tokenizer::new(&format!("{prefix}.tok"), dim, tokens, rng);
        let self_blocks = (0..rounds)
            .map(|r| AttnBlock::new(&format!("{prefix}.r{r}.self"), dim, heads, rng))
            .collect();
        let cross_blocks = (0..rounds)
            .map(|r| AttnBlock::new(&format!("{prefix}.r{r}.cross"), dim, heads, rng))
            .collect();
        Encoder { tokenizer, self_blocks, cross_blocks }
    }

    /// Encodes two feature grids into mutually-aware token matrices.
    pub fn encode_pair(&self, grid_a: &Tensor, grid_b: &Tensor, track: bool) -> (Tensor, Tensor) {
        let mut a = self.tokenizer.forward(grid_a, track);
        let mut b = self.tokenizer.forward(grid_b, track);
        for (sblk, cblk) in self.self_blocks.iter().zip(&self.cross_blocks) {
            a = sblk.forward(&a, &a, track);
            b = sblk.forward(&b, &b, track);
            let (snap_a, snap_b) = (a.clone(), b.clone());
            a = cblk.forward(&snap_a, &snap_b, track);
            b = cblk.forward(&snap_b, &snap_a, track);
        }
        (a, b)
    }

    pub fn params(&self) -> Vec<Param> {
        let mut out = self.tokenizer.params();
        for blk in self.self_blocks.iter().chain(&self.cross_blocks) {
            out.extend(blk.params());
        }
        out
    }
}
