use rand::RngCore;
use whorl_autograd::{Param, Parameter, Tensor};

/// Strides of the four conv stages. 2*2*2*1 = 8, one token per 8-pixel cell.
const STRIDES: [usize; 4] = [2, 2, 2, 1];

struct ConvBlock {
    w: Param,
    b: Param,
    stride: usize,
}

impl ConvBlock {
    fn new(name: &str, c_in: usize, c_out: usize, stride: usize, rng: &mut dyn RngCore) -> ConvBlock {
        let std = (2.0 / (c_in * 9) as f64).sqrt();
        ConvBlock {
            w: Parameter::randn(&format!("{name}.w"), &[c_out, c_in, 3, 3], std, rng),
            b: Parameter::zeros(&format!("{name}.b"), &[c_out]),
            stride,
        }
    }

    fn forward(&self, x: &Tensor, track: bool) -> Tensor {
        let w = if track { self.w.leaf() } else { self.w.frozen() };
        let b = if track { self.b.leaf() } else { self.b.frozen() };
        x.conv2d(&w, self.stride, 1).add_chan_bias(&b).relu()
    }
}

/// Four-stage convolutional feature extractor.
///
/// Channel ramp dim/4 -> dim/2 -> dim -> dim with 3x3 kernels; the stride
/// stack downsamples by 8, so a `[1, s, s]` image becomes a
/// `[dim, s/8, s/8]` feature grid whose spatial cells line up one-to-one
/// with correspondence grid cells.
pub struct Backbone {
    blocks: [ConvBlock; 4],
}

impl Backbone {
    pub fn new(prefix: &str, dim: usize, rng: &mut dyn RngCore) -> Backbone {
        assert!(dim % 4 == 0, "backbone dim {dim} must be a multiple of 4");
        let chans = [1, dim / 4, dim / 2, dim, dim];
        let blocks = std::array::from_fn(|i| {
            ConvBlock::new(
                &format!("{prefix}.c{}", i + 1),
                chans[i],
                chans[i + 1],
                STRIDES[i],
                rng,
            )
        });
        Backbone { blocks }
    }

    /// `[1, s, s]` unit-range image to `[dim, s/8, s/8]` features.
    pub fn forward(&self, img: &Tensor, track: bool) -> Tensor {
        let mut x = img.clone();
        for block in &self.blocks {
            x = block.forward(&x, track);
        }
        x
    }

    pub fn params(&self) -> Vec<Param> {
        self.blocks
            .iter()
            .flat_map(|b| [b.w.clone(), b.b.clone()])
            .collect()
    }
}
