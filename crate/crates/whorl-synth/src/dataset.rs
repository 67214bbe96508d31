use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use whorl_image::{load_png, save_png, GrayImage, ImageIoError};

use crate::{make_genuine_pair, make_imposter_pair, mix_seed, PairLabel, PairSample, PairTruth};

pub const MANIFEST_NAME: &str = "dataset.json";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid dataset config: {0}")]
    InvalidConfig(String),
    #[error("output {0} already exists; refusing to overwrite")]
    OutputExists(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Image(#[from] ImageIoError),
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> SynthError + '_ {
    move |source| SynthError::Io { path: path.to_path_buf(), source }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Number of distinct fingers the pairs draw from.
    pub identities: usize,
    /// Total pairs to generate.
    pub pairs: usize,
    /// Square image edge in pixels.
    pub size: usize,
    /// Correspondence grid cell edge in pixels; must divide `size`.
    pub cell_size: usize,
    /// Genuine pairs per imposter pair (3 means a 3:1 mix).
    pub genuine_per_imposter: usize,
    /// Root seed; every identity and pair derives its own stream from it.
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> DatasetConfig {
        DatasetConfig {
            identities: 16,
            pairs: 64,
            size: 128,
            cell_size: 8,
            genuine_per_imposter: 3,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    fn validate(&self) -> Result<(), SynthError> {
        let fail = |msg: String| Err(SynthError::InvalidConfig(msg));
        if self.identities < 2 {
            return fail(format!("need at least 2 identities, got {}", self.identities));
        }
        if self.pairs == 0 {
            return fail("pair count must be positive".into());
        }
        if self.size < 32 {
            return fail(format!("image size {} too small", self.size));
        }
        if self.cell_size == 0 || self.size % self.cell_size != 0 {
            return fail(format!(
                "cell size {} must divide image size {}",
                self.cell_size, self.size
            ));
        }
        if self.genuine_per_imposter == 0 {
            return fail("genuine_per_imposter must be at least 1".into());
        }
        Ok(())
    }

    /// Pair `idx` is genuine unless it falls on every (g+1)-th slot.
    pub fn is_genuine_index(&self, idx: usize) -> bool {
        idx % (self.genuine_per_imposter + 1) != self.genuine_per_imposter
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub format_version: u32,
    pub config: DatasetConfig,
    pub genuine: usize,
    pub imposter: usize,
}

/// One pair on disk: its directory plus the parsed ground truth. Pixels stay
/// on disk until [`load_pair_images`] is called.
#[derive(Clone, Debug)]
pub struct PairRecord {
    pub index: usize,
    pub dir: PathBuf,
    pub truth: PairTruth,
}

fn pair_dir(root: &Path, idx: usize) -> PathBuf {
    root.join("pairs").join(format!("{idx:05}"))
}

/// Generates a labeled pair dataset under `out`.
///
/// Layout: `out/dataset.json` plus `out/pairs/NNNNN/{a.png,b.png,truth.json}`.
/// Generation is parallel over pairs yet byte-deterministic: each pair's RNG
/// stream is derived from `(seed, index)`, never from draw order. The whole
/// tree is built in a sibling `.partial` directory and renamed into place at
/// the end, so `out` either appears complete or not at all.
pub fn generate_dataset(cfg: &DatasetConfig, out: &Path) -> Result<DatasetSummary, SynthError> {
    cfg.validate()?;
    if out.exists() {
        return Err(SynthError::OutputExists(out.to_path_buf()));
    }
    let staging = out.with_extension("partial");
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(io_err(&staging))?;
    }
    fs::create_dir_all(&staging).map_err(io_err(&staging))?;

    (0..cfg.pairs)
        .into_par_iter()
        .try_for_each(|idx| write_pair(cfg, &staging, idx))?;

    let genuine = (0..cfg.pairs).filter(|&i| cfg.is_genuine_index(i)).count();
    let summary = DatasetSummary {
        format_version: FORMAT_VERSION,
        config: cfg.clone(),
        genuine,
        imposter: cfg.pairs - genuine,
    };
    let manifest = staging.join(MANIFEST_NAME);
    let body = serde_json::to_vec_pretty(&summary)
        .map_err(|source| SynthError::Json { path: manifest.clone(), source })?;
    fs::write(&manifest, body).map_err(io_err(&manifest))?;

    fs::rename(&staging, out).map_err(io_err(out))?;
    Ok(summary)
}

fn write_pair(cfg: &DatasetConfig, root: &Path, idx: usize) -> Result<(), SynthError> {
    let sample = build_pair(cfg, idx);
    let dir = pair_dir(root, idx);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    save_png(&sample.a, &dir.join("a.png"))?;
    save_png(&sample.b, &dir.join("b.png"))?;
    let truth_path = dir.join("truth.json");
    let body = serde_json::to_vec_pretty(&sample.truth)
        .map_err(|source| SynthError::Json { path: truth_path.clone(), source })?;
    fs::write(&truth_path, body).map_err(io_err(&truth_path))?;
    Ok(())
}

/// Builds pair `idx` of a dataset entirely from the config, with no stored
/// state. Exposed so training loops can regenerate samples in memory without
/// touching disk.
pub fn build_pair(cfg: &DatasetConfig, idx: usize) -> PairSample {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, idx as u64));
    if cfg.is_genuine_index(idx) {
        let id = rng.gen_range(0..cfg.identities) as u64;
        let finger = crate::SyntheticFinger::new(id, cfg.seed);
        make_genuine_pair(&finger, cfg.size, cfg.cell_size, &mut rng)
    } else {
        let a = rng.gen_range(0..cfg.identities);
        let b = (a + rng.gen_range(1..cfg.identities)) % cfg.identities;
        let fa = crate::SyntheticFinger::new(a as u64, cfg.seed);
        let fb = crate::SyntheticFinger::new(b as u64, cfg.seed);
        make_imposter_pair(&fa, &fb, cfg.size, cfg.cell_size, &mut rng)
    }
}

/// Reads a dataset's manifest and every pair's ground truth.
pub fn load_dataset(root: &Path) -> Result<(DatasetSummary, Vec<PairRecord>), SynthError> {
    let manifest = root.join(MANIFEST_NAME);
    let body = fs::read(&manifest).map_err(io_err(&manifest))?;
    let summary: DatasetSummary = serde_json::from_slice(&body)
        .map_err(|source| SynthError::Json { path: manifest.clone(), source })?;
    if summary.format_version != FORMAT_VERSION {
        return Err(SynthError::InvalidConfig(format!(
            "dataset format version {} unsupported (expected {})",
            summary.format_version, FORMAT_VERSION
        )));
    }
    let mut records = Vec::with_capacity(summary.config.pairs);
    for idx in 0..summary.config.pairs {
        let dir = pair_dir(root, idx);
        let truth_path = dir.join("truth.json");
        let body = fs::read(&truth_path).map_err(io_err(&truth_path))?;
        let truth: PairTruth = serde_json::from_slice(&body)
            .map_err(|source| SynthError::Json { path: truth_path.clone(), source })?;
        records.push(PairRecord { index: idx, dir, truth });
    }
    Ok((summary, records))
}

/// Loads the two images of a stored pair.
pub fn load_pair_images(record: &PairRecord) -> Result<(GrayImage, GrayImage), SynthError> {
    Ok((
        load_png(&record.dir.join("a.png"))?,
        load_png(&record.dir.join("b.png"))?,
    ))
}

impl PairRecord {
    pub fn label(&self) -> PairLabel {
        self.truth.label
    }
}
