use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use whorl_autograd::{backward, checkpoint, Adam, AdamConfig};
use whorl_synth::{mix_seed, PairSample};

use crate::{MatcherNet, ModelError};

pub const STATE_FILE: &str = "train_state.ifvs";
pub const LOSS_FILE: &str = "loss.csv";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("loss became non-finite at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Checkpoint(#[from] checkpoint::CheckpointError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Data(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> TrainError + '_ {
    move |source| TrainError::Io { path: path.to_path_buf(), source }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Pairs per optimizer step; each pair's gradient is accumulated at
    /// weight `1 / batch_size`.
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            epochs: 10,
            batch_size: 8,
            lr: 1e-3,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

/// Loss curve and step count of a completed run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainReport {
    /// `(epoch, mean per-pair loss)` for each epoch this call ran.
    pub epochs: Vec<(usize, f64)>,
    pub steps: u64,
}

/// Drives registration training with deterministic, resumable epochs.
///
/// Every epoch shuffles with an RNG derived from `(seed, epoch)`, never
/// from a long-lived stream, so a resumed run replays exactly the epochs a
/// single run would have seen. The optimizer state file records enough (via
/// the step counter) to infer how many epochs are already done, provided
/// the data length and batch size are unchanged.
pub struct RegistrationTrainer {
    pub model: MatcherNet,
    opt: Adam,
    cfg: TrainConfig,
    epochs_done: usize,
}

impl RegistrationTrainer {
    pub fn new(model: MatcherNet, cfg: TrainConfig) -> RegistrationTrainer {
        let opt = Adam::new(
            model.params().to_vec(),
            AdamConfig {
                lr: cfg.lr,
                weight_decay: cfg.weight_decay,
                ..Default::default()
            },
        );
        RegistrationTrainer { model, opt, cfg, epochs_done: 0 }
    }

    /// Rebuilds a trainer mid-run from a model directory and its optimizer
    /// state. `data_len` must equal the training set length the original
    /// run used; batch size and epoch schedule come from `cfg` and must
    /// also be unchanged for the resumed run to be equivalent.
    pub fn resume(dir: &Path, cfg: TrainConfig, data_len: usize) -> Result<RegistrationTrainer, TrainError> {
        let model = MatcherNet::load(dir)?;
        let mut trainer = RegistrationTrainer::new(model, cfg);
        checkpoint::load_train_state(&dir.join(STATE_FILE), &mut trainer.opt)?;
        let per_epoch = trainer.batches_per_epoch(data_len) as u64;
        let steps = trainer.opt.steps();
        if steps % per_epoch != 0 {
            return Err(TrainError::Data(format!(
                "optimizer state at step {steps} is not a whole number of {per_epoch}-batch epochs; \
                 was the data length or batch size changed?"
            )));
        }
        trainer.epochs_done = (steps / per_epoch) as usize;
        Ok(trainer)
    }

    fn batches_per_epoch(&self, data_len: usize) -> usize {
        data_len.div_ceil(self.cfg.batch_size)
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    /// Runs the remaining epochs. When `out_dir` is given, each epoch
    /// appends to `loss.csv` and refreshes the model + optimizer state
    /// checkpoint in place.
    pub fn train(
        &mut self,
        data: &[PairSample],
        out_dir: Option<&Path>,
    ) -> Result<TrainReport, TrainError> {
        if data.is_empty() {
            return Err(TrainError::Data("empty training set".into()));
        }
        let start_steps = self.opt.steps();
        let mut report = TrainReport { epochs: Vec::new(), steps: 0 };
        for epoch in self.epochs_done..self.cfg.epochs {
            let mut order: Vec<usize> = (0..data.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(self.cfg.seed, epoch as u64)));

            let mut loss_sum = 0.0;
            let mut loss_count = 0usize;
            for (batch_idx, batch) in order.chunks(self.cfg.batch_size).enumerate() {
                self.opt.zero_grad();
                for &idx in batch {
                    let sample = &data[idx];
                    let Some(loss) =
                        self.model.pair_loss(&sample.a, &sample.b, &sample.truth.grid)
                    else {
                        continue;
                    };
                    let v = loss.data()[0];
                    if !v.is_finite() {
                        return Err(TrainError::NonFinite { epoch, batch: batch_idx });
                    }
                    loss_sum += v;
                    loss_count += 1;
                    backward(&loss.scale(1.0 / batch.len() as f64));
                }
                self.opt.step();
            }
            let mean = if loss_count > 0 { loss_sum / loss_count as f64 } else { 0.0 };
            report.epochs.push((epoch, mean));
            self.epochs_done = epoch + 1;
            if let Some(dir) = out_dir {
                self.append_loss_row(dir, epoch, mean)?;
                self.save_checkpoint(dir)?;
            }
        }
        report.steps = self.opt.steps() - start_steps;
        Ok(report)
    }

    /// Writes the model (config + weights) and full optimizer state.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<(), TrainError> {
        self.model.save(dir)?;
        checkpoint::save_train_state(&dir.join(STATE_FILE), &self.opt)?;
        Ok(())
    }

    fn append_loss_row(&self, dir: &Path, epoch: usize, mean: f64) -> Result<(), TrainError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join(LOSS_FILE);
        let fresh = !path.exists();
        let file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        if fresh {
            w.write_record(["epoch", "mean_loss"])?;
        }
        w.write_record([epoch.to_string(), format!("{mean:.6}")])?;
        w.flush().map_err(io_err(&path))?;
        Ok(())
    }
}
