use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;
use whorl_autograd::{checkpoint, Param, Parameter, Tensor};
use whorl_image::GrayImage;

use crate::{
    confidence, registration_loss, select_matches, similarity, Backbone, ConfidenceMaps, Encoder,
    MatchSet, MatcherConfig,
};

pub const CONFIG_FILE: &str = "config.json";
pub const WEIGHTS_FILE: &str = "weights.ifv";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid matcher config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: std::path::PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Checkpoint(#[from] checkpoint::CheckpointError),
}

/// The dense registration network: backbone, Siamese attention encoder, and
/// the matching head's learned dustbin score.
pub struct MatcherNet {
    cfg: MatcherConfig,
    backbone: Backbone,
    encoder: Encoder,
    dustbin: Option<Param>,
    params: Vec<Param>,
}

/// Inference output for one image pair.
pub struct MatchOutcome {
    pub matches: MatchSet,
    /// Dense mutual confidence on real cells, row-major `[n, n]`.
    pub joint: Vec<f64>,
}

impl MatcherNet {
    /// Builds a fresh network with weights drawn from `seed`.
    pub fn new(cfg: MatcherConfig, seed: u64) -> Result<MatcherNet, ModelError> {
        cfg.validate().map_err(ModelError::Config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let backbone = Backbone::new("backbone", cfg.dim, &mut rng);
        let encoder = Encoder::new("enc", cfg.dim, cfg.heads, cfg.rounds, cfg.tokens(), &mut rng);
        let dustbin = cfg
            .dustbin
            .then(|| Parameter::new("matcher.dustbin", &[], vec![1.0]));
        let mut params = backbone.params();
        params.extend(encoder.params());
        if let Some(d) = &dustbin {
            params.push(d.clone());
        }
        Ok(MatcherNet { cfg, backbone, encoder, dustbin, params })
    }

    pub fn config(&self) -> &MatcherConfig {
        &self.cfg
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    /// Unit-range `[1, h, w]` tensor from a grayscale image.
    pub fn image_tensor(img: &GrayImage) -> Tensor {
        Tensor::from_vec(&[1, img.height(), img.width()], img.to_unit_f64())
    }

    fn check_size(&self, img: &GrayImage) {
        assert!(
            img.width() == self.cfg.image_size && img.height() == self.cfg.image_size,
            "image {}x{} does not match the model's {} input size",
            img.width(),
            img.height(),
            self.cfg.image_size
        );
    }

    /// Backbone features only, `[dim, n, n]`. Exposed for equivariance
    /// checks and the descriptor pathway.
    pub fn backbone_features(&self, img: &GrayImage, track: bool) -> Tensor {
        self.check_size(img);
        self.backbone.forward(&Self::image_tensor(img), track)
    }

    /// Full pair encoding: backbone, tokenization, interleaved self/cross
    /// attention. Returns `[n^2, dim]` token matrices for both images.
    pub fn encode_images(&self, a: &GrayImage, b: &GrayImage, track: bool) -> (Tensor, Tensor) {
        let ga = self.backbone_features(a, track);
        let gb = self.backbone_features(b, track);
        self.encoder.encode_pair(&ga, &gb, track)
    }

    /// Confidence maps for a pair under the configured matching mode.
    pub fn pair_confidence(&self, a: &GrayImage, b: &GrayImage, track: bool) -> ConfidenceMaps {
        self.pair_confidence_with_tokens(a, b, track).0
    }

    /// Like [`MatcherNet::pair_confidence`], but also returns the encoded
    /// token matrices, so heads built on top of this network can pool the
    /// same forward pass instead of encoding twice.
    pub fn pair_confidence_with_tokens(
        &self,
        a: &GrayImage,
        b: &GrayImage,
        track: bool,
    ) -> (ConfidenceMaps, Tensor, Tensor) {
        let (ta, tb) = self.encode_images(a, b, track);
        let sim = similarity(&ta, &tb);
        let bin = self.dustbin.as_ref().map(|d| if track { d.leaf() } else { d.frozen() });
        (confidence(&sim, bin.as_ref(), self.cfg.matching), ta, tb)
    }

    /// Training loss for a supervised pair; `None` when the pair supervises
    /// nothing under the current mode (see [`registration_loss`]).
    pub fn pair_loss(
        &self,
        a: &GrayImage,
        b: &GrayImage,
        grid: &whorl_synth::CorrespondenceGrid,
    ) -> Option<Tensor> {
        registration_loss(&self.pair_confidence(a, b, true), grid)
    }

    /// Frozen-weight inference: mutual-best matches above the configured
    /// threshold plus the dense confidence they were drawn from.
    pub fn match_images(&self, a: &GrayImage, b: &GrayImage) -> MatchOutcome {
        let maps = self.pair_confidence(a, b, false);
        let joint = maps.joint.data().to_vec();
        let matches = select_matches(
            &joint,
            maps.n_a,
            maps.n_b,
            self.cfg.threshold,
            self.cfg.grid_n(),
            self.cfg.cell_size,
        );
        MatchOutcome { matches, joint }
    }

    /// Writes `config.json` and `weights.ifv` under `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), ModelError> {
        fs::create_dir_all(dir).map_err(|source| ModelError::Io { path: dir.into(), source })?;
        let cfg_path = dir.join(CONFIG_FILE);
        let body = serde_json::to_vec_pretty(&self.cfg)
            .map_err(|source| ModelError::Json { path: cfg_path.clone(), source })?;
        fs::write(&cfg_path, body)
            .map_err(|source| ModelError::Io { path: cfg_path.clone(), source })?;
        checkpoint::save(&dir.join(WEIGHTS_FILE), &self.params)?;
        Ok(())
    }

    /// Loads a model saved by [`MatcherNet::save`].
    pub fn load(dir: &Path) -> Result<MatcherNet, ModelError> {
        let cfg_path = dir.join(CONFIG_FILE);
        let body = fs::read(&cfg_path)
            .map_err(|source| ModelError::Io { path: cfg_path.clone(), source })?;
        let cfg: MatcherConfig = serde_json::from_slice(&body)
            .map_err(|source| ModelError::Json { path: cfg_path.clone(), source })?;
        let net = MatcherNet::new(cfg, 0)?;
        checkpoint::load_into(&dir.join(WEIGHTS_FILE), &net.params)?;
        Ok(net)
    }
}
