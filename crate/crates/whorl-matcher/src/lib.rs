//! Dense cell-level fingerprint registration.
//!
//! A pair of grayscale prints goes through a shared convolutional backbone
//! (one output token per 8x8 cell), a Siamese encoder of interleaved
//! self/cross attention rounds, and a scaled token correlation. The
//! correlation is normalized into row- and column-factor confidences with a
//! learned dustbin for unmatched cells; mutual-best selection above a
//! threshold yields a one-to-one [`MatchSet`].
//!
//! Training minimizes the negative log-likelihood of ground-truth cell
//! correspondences under those factors ([`registration_loss`]). The
//! [`RegistrationTrainer`] runs deterministic, resumable epochs: shuffles
//! derive from `(seed, epoch)` and optimizer state round-trips through a
//! sidecar file, so an interrupted run continues bit-exactly.

mod backbone;
mod config;
mod correlation;
mod encoder;
mod loss;
mod matches;
mod model;
mod train;

pub use backbone::Backbone;
pub use config::{MatcherConfig, MatchingMode};
pub use correlation::{confidence, similarity, ConfidenceMaps};
pub use encoder::{AttnBlock, Encoder, Tokenizer};
pub use loss::registration_loss;
pub use matches::{cell_to_pixel, select_matches, MatchSet, MatchedCell};
pub use model::{MatchOutcome, MatcherNet, ModelError, CONFIG_FILE, WEIGHTS_FILE};
pub use train::{RegistrationTrainer, TrainConfig, TrainError, TrainReport, LOSS_FILE, STATE_FILE};
