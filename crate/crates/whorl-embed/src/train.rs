use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use whorl_autograd::{backward, checkpoint, Adam, AdamConfig, Param, Parameter, Tensor};
use whorl_image::GrayImage;
use whorl_matcher::{registration_loss, select_matches, MatcherNet, TrainError, STATE_FILE};
use whorl_synth::{mix_seed, CorrespondenceGrid};

use crate::loss::{arcface_loss, cosine_embedding_loss, LossWeights};
use crate::net::EmbedNet;
use crate::{EmbedError, EMBED_DIM};

/// Confidence cut for turning a frozen matcher's output into supervision.
/// Deliberately stricter than the inference threshold: pseudo labels feed
/// the registration loss, so only high-confidence cells should count.
pub const PSEUDO_LABEL_THRESHOLD: f64 = 0.5;

/// Sidecar recording the classifier head's class count, written next to
/// the model so an interrupted run can rebuild its optimizer.
pub const CLASSES_FILE: &str = "classes.json";

/// A labeled image pair as the dataset provides it: no correspondence
/// grid yet, just identities and the genuine/imposter verdict.
#[derive(Clone, Debug)]
pub struct LabeledPair {
    pub a: GrayImage,
    pub b: GrayImage,
    pub genuine: bool,
    pub class_a: usize,
    pub class_b: usize,
}

/// A pair ready for the composite loss: labels plus a correspondence grid
/// (pseudo labels from a frozen matcher, or ground truth in tests).
#[derive(Clone, Debug)]
pub struct TrainPair {
    pub a: GrayImage,
    pub b: GrayImage,
    pub genuine: bool,
    pub class_a: usize,
    pub class_b: usize,
    pub grid: CorrespondenceGrid,
}

impl TrainPair {
    /// Attaches pseudo labels from `frozen` to a dataset pair.
    pub fn pseudo_labeled(frozen: &MatcherNet, pair: &LabeledPair) -> TrainPair {
        TrainPair {
            a: pair.a.clone(),
            b: pair.b.clone(),
            genuine: pair.genuine,
            class_a: pair.class_a,
            class_b: pair.class_b,
            grid: pseudo_grid(frozen, &pair.a, &pair.b),
        }
    }
}

/// Correspondences a frozen matcher believes in at the pseudo-label
/// threshold, expressed as a supervision grid. Cells without a confident
/// mutual-best partner stay unmatched and are pushed toward the dustbin.
pub fn pseudo_grid(frozen: &MatcherNet, a: &GrayImage, b: &GrayImage) -> CorrespondenceGrid {
    let cfg = frozen.config();
    let n = cfg.grid_n();
    let maps = frozen.pair_confidence(a, b, false);
    let matches = select_matches(
        maps.joint.data(),
        maps.n_a,
        maps.n_b,
        PSEUDO_LABEL_THRESHOLD,
        n,
        cfg.cell_size,
    );
    let mut grid = CorrespondenceGrid::empty(n, n, cfg.cell_size);
    for m in &matches.cells {
        grid.targets[m.i] = Some(((m.j / n) as u16, (m.j % n) as u16));
    }
    grid
}

/// Composite objective over one batch:
/// `reg * L_registration + emb * L_cosine + cls * L_arcface`.
///
/// The registration term averages per-pair confidence-map losses over the
/// whole batch (pairs whose grid supervises nothing contribute zero). The
/// two embedding terms see every pair: the cosine loss on (r1, r2) rows
/// with genuine/imposter labels, the margin classifier on all `2n`
/// embeddings against their finger identities.
pub fn total_loss(
    net: &EmbedNet,
    class_w: &Param,
    batch: &[TrainPair],
    lw: &LossWeights,
) -> Tensor {
    assert!(!batch.is_empty(), "loss of an empty batch");
    let n = batch.len();
    let mut reg_terms = Vec::new();
    let mut pair_rows = (Vec::new(), Vec::new());
    let mut all_rows = Vec::new();
    let mut labels = Vec::with_capacity(n);
    let mut targets = Vec::with_capacity(2 * n);
    for pair in batch {
        let (maps, r1, r2) = net.forward_pair(&pair.a, &pair.b, true);
        if let Some(l) = registration_loss(&maps, &pair.grid) {
            reg_terms.push(l);
        }
        pair_rows.0.push(r1.clone());
        pair_rows.1.push(r2.clone());
        all_rows.extend([r1, r2]);
        labels.push(if pair.genuine { 1 } else { -1 });
        targets.extend([pair.class_a, pair.class_b]);
    }

    let reg = match reg_terms.into_iter().reduce(|a, b| &a + &b) {
        Some(sum) => sum.scale(1.0 / n as f64),
        None => Tensor::scalar(0.0),
    };
    let stack = |rows: &[Tensor]| Tensor::concat1d(rows).reshape(&[rows.len(), EMBED_DIM]);
    let emb = cosine_embedding_loss(&stack(&pair_rows.0), &stack(&pair_rows.1), &labels, lw.margin);
    let cls = arcface_loss(&stack(&all_rows), &class_w.leaf(), &targets, lw.margin, lw.scale);
    &(&reg.scale(lw.reg) + &emb.scale(lw.emb)) + &cls.scale(lw.cls)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchTrainConfig {
    pub epochs: usize,
    /// Pairs per optimizer step. The composite loss averages within the
    /// batch, so one backward pass per batch suffices.
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub loss: LossWeights,
}

impl Default for MatchTrainConfig {
    fn default() -> MatchTrainConfig {
        MatchTrainConfig {
            epochs: 10,
            batch_size: 4,
            lr: 1e-3,
            weight_decay: 0.0,
            seed: 0,
            loss: LossWeights::default(),
        }
    }
}

/// Loss curve of a completed representation-training run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MatchTrainReport {
    /// `(epoch, mean batch loss)` for each epoch this call ran.
    pub epochs: Vec<(usize, f64)>,
    /// Every batch loss in step order, for convergence diagnostics finer
    /// than the epoch means.
    pub step_losses: Vec<f64>,
    pub steps: u64,
}

#[derive(Serialize, Deserialize)]
struct ClassesMeta {
    num_classes: usize,
}

/// Trains an [`EmbedNet`] and its classifier head on labeled pairs, with
/// pseudo supervision for the registration term coming from a frozen
/// matcher.
///
/// Epoch order is drawn from `(seed, epoch)` exactly as in registration
/// training, so interrupted runs resume onto the same schedule. Pseudo
/// grids depend only on the frozen matcher and the data, never on the
/// trainable weights, so they are computed once per run.
pub struct EmbedTrainer {
    pub model: EmbedNet,
    frozen: MatcherNet,
    class_w: Param,
    opt: Adam,
    cfg: MatchTrainConfig,
    epochs_done: usize,
}

impl EmbedTrainer {
    /// `frozen` supplies pseudo labels and must share the model's input
    /// size. `num_classes` covers every identity the data will mention.
    pub fn new(
        model: EmbedNet,
        frozen: MatcherNet,
        num_classes: usize,
        cfg: MatchTrainConfig,
    ) -> EmbedTrainer {
        assert!(num_classes >= 2, "classification needs at least two identities");
        assert_eq!(
            frozen.config().image_size,
            model.config().image_size,
            "pseudo-labeler and model must agree on input size"
        );
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 2));
        let std = (1.0 / EMBED_DIM as f64).sqrt();
        let class_w = Parameter::randn("classifier.w", &[num_classes, EMBED_DIM], std, &mut rng);
        let mut params = model.params().to_vec();
        params.push(class_w.clone());
        let opt = Adam::new(
            params,
            AdamConfig { lr: cfg.lr, weight_decay: cfg.weight_decay, ..Default::default() },
        );
        EmbedTrainer { model, frozen, class_w, opt, cfg, epochs_done: 0 }
    }

    /// Rebuilds a trainer from a checkpoint directory. The full-precision
    /// training state restores model and classifier weights exactly, so a
    /// resumed run matches an uninterrupted one bit for bit. `data_len`,
    /// batch size, and the epoch schedule must be unchanged.
    pub fn resume(
        dir: &Path,
        frozen: MatcherNet,
        cfg: MatchTrainConfig,
        data_len: usize,
    ) -> Result<EmbedTrainer, TrainError> {
        let model = EmbedNet::load(dir).map_err(embed_err)?;
        let meta_path = dir.join(CLASSES_FILE);
        let body = fs::read(&meta_path)
            .map_err(|source| TrainError::Io { path: meta_path.clone(), source })?;
        let meta: ClassesMeta = serde_json::from_slice(&body)
            .map_err(|e| TrainError::Data(format!("{}: {e}", meta_path.display())))?;
        let mut trainer = EmbedTrainer::new(model, frozen, meta.num_classes, cfg);
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

    /// Identity prototypes of the classifier head (training-time only;
    /// scoring never touches them).
    pub fn class_weights(&self) -> &Param {
        &self.class_w
    }

    /// Runs the remaining epochs. With `out_dir` set, each epoch appends
    /// to `loss.csv` and refreshes the checkpoint in place.
    pub fn train(
        &mut self,
        data: &[LabeledPair],
        out_dir: Option<&Path>,
    ) -> Result<MatchTrainReport, TrainError> {
        if data.is_empty() {
            return Err(TrainError::Data("empty training set".into()));
        }
        let num_classes = self.class_w.shape()[0];
        for (i, p) in data.iter().enumerate() {
            if p.class_a >= num_classes || p.class_b >= num_classes {
                return Err(TrainError::Data(format!(
                    "pair {i} names identity {} but the classifier has {num_classes} rows",
                    p.class_a.max(p.class_b)
                )));
            }
        }
        let pairs: Vec<TrainPair> =
            data.iter().map(|p| TrainPair::pseudo_labeled(&self.frozen, p)).collect();

        let start_steps = self.opt.steps();
        let mut report =
            MatchTrainReport { epochs: Vec::new(), step_losses: Vec::new(), steps: 0 };
        for epoch in self.epochs_done..self.cfg.epochs {
            let mut order: Vec<usize> = (0..pairs.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(self.cfg.seed, epoch as u64)));

            let mut loss_sum = 0.0;
            let mut batches = 0usize;
            for (batch_idx, batch) in order.chunks(self.cfg.batch_size).enumerate() {
                let batch: Vec<TrainPair> = batch.iter().map(|&i| pairs[i].clone()).collect();
                self.opt.zero_grad();
                let loss = total_loss(&self.model, &self.class_w, &batch, &self.cfg.loss);
                let v = loss.scalar_value();
                if !v.is_finite() {
                    return Err(TrainError::NonFinite { epoch, batch: batch_idx });
                }
                backward(&loss);
                self.opt.step();
                loss_sum += v;
                batches += 1;
                report.step_losses.push(v);
            }
            let mean = loss_sum / batches as f64;
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

    /// Writes the model, the class count, and the full optimizer state.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<(), TrainError> {
        self.model.save(dir).map_err(embed_err)?;
        let meta_path = dir.join(CLASSES_FILE);
        let meta = ClassesMeta { num_classes: self.class_w.shape()[0] };
        fs::write(&meta_path, serde_json::to_vec_pretty(&meta).expect("meta serializes"))
            .map_err(|source| TrainError::Io { path: meta_path, source })?;
        checkpoint::save_train_state(&dir.join(STATE_FILE), &self.opt)?;
        Ok(())
    }

    fn append_loss_row(&self, dir: &Path, epoch: usize, mean: f64) -> Result<(), TrainError> {
        fs::create_dir_all(dir)
            .map_err(|source| TrainError::Io { path: dir.to_path_buf(), source })?;
        let path = dir.join(whorl_matcher::LOSS_FILE);
        let fresh = !path.exists();
        let file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|source| TrainError::Io { path: path.clone(), source })?;
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        if fresh {
            w.write_record(["epoch", "mean_loss"])?;
        }
        w.write_record([epoch.to_string(), format!("{mean:.6}")])?;
        w.flush().map_err(|source| TrainError::Io { path, source })?;
        Ok(())
    }
}

fn embed_err(e: EmbedError) -> TrainError {
    match e {
        EmbedError::Model(m) => TrainError::Model(m),
        EmbedError::Checkpoint(c) => TrainError::Checkpoint(c),
        EmbedError::Io { path, source } => TrainError::Io { path, source },
        other => TrainError::Data(other.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use whorl_matcher::MatcherConfig;
    use whorl_synth::SyntheticFinger;

    fn tiny_cfg() -> MatcherConfig {
        MatcherConfig { dim: 16, heads: 2, rounds: 1, image_size: 64, ..Default::default() }
    }

    fn img(seed: u64) -> GrayImage {
        SyntheticFinger::new(seed, 55).render(64).image
    }

    fn labeled(a: u64, b: u64, genuine: bool) -> LabeledPair {
        LabeledPair { a: img(a), b: img(b), genuine, class_a: a as usize, class_b: b as usize }
    }

    #[test]
    fn pseudo_grid_mirrors_the_selected_matches() {
        let frozen = MatcherNet::new(tiny_cfg(), 3).unwrap();
        let (a, b) = (img(0), img(0));
        let grid = pseudo_grid(&frozen, &a, &b);
        assert_eq!((grid.rows, grid.cols, grid.cell_size), (8, 8, 8));

        let maps = frozen.pair_confidence(&a, &b, false);
        let matches =
            select_matches(maps.joint.data(), maps.n_a, maps.n_b, PSEUDO_LABEL_THRESHOLD, 8, 8);
        let mut want: Vec<(usize, usize)> = matches.cells.iter().map(|m| (m.i, m.j)).collect();
        want.sort_unstable();
        let mut have = grid.matched();
        have.sort_unstable();
        assert_eq!(have, want, "grid encodes a different correspondence set");
    }

    #[test]
    fn zeroing_embedding_terms_leaves_scaled_registration_loss() {
        let cfg = tiny_cfg();
        let net = EmbedNet::new(cfg.clone(), 4).unwrap();
        let twin = MatcherNet::new(cfg, 4).unwrap();
        let frozen = MatcherNet::new(tiny_cfg(), 9).unwrap();
        let data = [labeled(0, 0, true), labeled(1, 2, false)];
        let batch: Vec<TrainPair> =
            data.iter().map(|p| TrainPair::pseudo_labeled(&frozen, p)).collect();

        // Same seed means the embed trunk and the twin matcher carry
        // identical weights, so per-pair losses can be computed outside.
        let l0 = twin.pair_loss(&batch[0].a, &batch[0].b, &batch[0].grid).unwrap().scalar_value();
        let l1 = twin.pair_loss(&batch[1].a, &batch[1].b, &batch[1].grid).unwrap().scalar_value();
        let want = (l0 + l1) * 0.5 * 0.5;

        let lw = LossWeights { emb: 0.0, cls: 0.0, ..Default::default() };
        let class_w = Parameter::zeros("classifier.w", &[3, EMBED_DIM]);
        let have = total_loss(&net, &class_w, &batch, &lw).scalar_value();
        // A two-pair batch halves exactly, and the zeroed terms add
        // exactly 0.0, so the agreement is bitwise.
        assert_eq!(have, want);
    }

    #[test]
    fn empty_data_is_rejected() {
        let cfg = tiny_cfg();
        let model = EmbedNet::new(cfg.clone(), 1).unwrap();
        let frozen = MatcherNet::new(cfg, 2).unwrap();
        let mut t = EmbedTrainer::new(model, frozen, 2, MatchTrainConfig::default());
        assert!(matches!(t.train(&[], None), Err(TrainError::Data(_))));
    }

    #[test]
    fn out_of_range_identity_is_rejected() {
        let cfg = tiny_cfg();
        let model = EmbedNet::new(cfg.clone(), 1).unwrap();
        let frozen = MatcherNet::new(cfg, 2).unwrap();
        let mut t = EmbedTrainer::new(model, frozen, 2, MatchTrainConfig::default());
        let err = t.train(&[labeled(0, 5, false)], None).err().expect("class 5 of 2 must fail");
        assert!(matches!(err, TrainError::Data(_)), "got {err}");
    }

    #[test]
    fn non_finite_loss_aborts_with_location() {
        let cfg = tiny_cfg();
        let model = EmbedNet::new(cfg.clone(), 1).unwrap();
        let frozen = MatcherNet::new(cfg, 2).unwrap();
        // Poisoning the projection keeps the registration term finite but
        // sends NaN through the genuine pair's 1 - cos path, which no
        // rectifier or max-fold can swallow.
        let head = model.params().iter().find(|p| p.name() == "head.w").unwrap().clone();
        head.set_value(vec![f64::NAN; head.numel()]);
        let mut t = EmbedTrainer::new(model, frozen, 2, MatchTrainConfig::default());
        let err = t.train(&[labeled(0, 0, true)], None).err().expect("NaN loss must abort");
        assert!(matches!(err, TrainError::NonFinite { epoch: 0, batch: 0 }), "got {err}");
    }

    #[test]
    fn resumed_training_is_bit_identical_to_one_shot() {
        let data =
            vec![labeled(0, 0, true), labeled(1, 1, true), labeled(0, 1, false), labeled(1, 2, false)];
        let cfg = MatchTrainConfig { epochs: 4, batch_size: 2, lr: 1e-3, ..Default::default() };

        let mut straight = EmbedTrainer::new(
            EmbedNet::new(tiny_cfg(), 5).unwrap(),
            MatcherNet::new(tiny_cfg(), 6).unwrap(),
            3,
            cfg.clone(),
        );
        straight.train(&data, None).unwrap();

        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("ckpt");
        let mut first_half = EmbedTrainer::new(
            EmbedNet::new(tiny_cfg(), 5).unwrap(),
            MatcherNet::new(tiny_cfg(), 6).unwrap(),
            3,
            MatchTrainConfig { epochs: 2, ..cfg.clone() },
        );
        first_half.train(&data, None).unwrap();
        first_half.save_checkpoint(&dir).unwrap();
        drop(first_half);

        let mut second_half =
            EmbedTrainer::resume(&dir, MatcherNet::new(tiny_cfg(), 6).unwrap(), cfg, data.len())
                .unwrap();
        assert_eq!(second_half.epochs_done(), 2);
        second_half.train(&data, None).unwrap();

        for (a, b) in straight.model.params().iter().zip(second_half.model.params()) {
            assert_eq!(a.name(), b.name());
            assert_eq!(a.value(), b.value(), "{} differs between runs", a.name());
        }
        assert_eq!(straight.class_w.value(), second_half.class_w.value());
    }
}
