//! Fixed-length fingerprint representations on top of the dense matcher.
//!
//! The dense matcher ends at cell correspondences; this crate adds the
//! second stage that turns its token encodings into a 256-value unit-norm
//! vector per image, so whole prints can be compared with a dot product.
//! An [`EmbedNet`] is a matcher trunk (usually warm-started from a trained
//! registration checkpoint) plus a pooled linear head. Two independently
//! trained nets cover the two views of a pair produced by the alignment
//! pipeline: the shared enhanced overlap, and the raw region-of-interest
//! crops.
//!
//! Training combines three terms (see [`total_loss`]): the matcher's own
//! registration likelihood against pseudo labels from a frozen copy of the
//! stage-one net, a pairwise cosine hinge, and an additive-angular-margin
//! classification loss over finger identities. Scoring fuses the two
//! branches' cosines with weights fitted by least squares
//! ([`fit_fusion`]); [`MatchModel::score`] runs the whole
//! align-enhance-extract-embed pipeline on a raw pair.

use std::io;
use std::path::PathBuf;

use thiserror::Error;
use whorl_autograd::checkpoint::CheckpointError;
use whorl_matcher::ModelError;

mod embedding;
mod loss;
mod net;
mod score;
mod train;

pub use embedding::{Embedding256, EMBED_DIM, NORM_TOL};
pub use loss::{arcface_loss, cosine_embedding_loss, LossWeights};
pub use net::{adapted_matcher, EmbedNet, PairEmbedding};
pub use score::{
    fit_fusion, prepare_inputs, FusionFit, FusionWeights, MatchModel, MatchScore, PreparedPair,
    FAILURE_SCORE, FUSION_FILE, GLOBAL_DIR, LOCAL_DIR, MIN_FIT_PAIRS, REGISTRATION_DIR,
};
pub use train::{
    pseudo_grid, total_loss, EmbedTrainer, LabeledPair, MatchTrainConfig, MatchTrainReport,
    TrainPair, CLASSES_FILE, PSEUDO_LABEL_THRESHOLD,
};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("{what}: expected {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("embedding norm {norm} is not within {NORM_TOL} of 1")]
    NotUnit { norm: f64 },
    #[error("fusion fit needs at least {need} labeled pairs, found {found}")]
    TooFewPairs { found: usize, need: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}
