//! Synthetic fingerprint corpus generation.
//!
//! Everything here is deterministic: a finger is a pure function of
//! `(identity, dataset_seed)`, a pair is a pure function of the dataset seed
//! and its index, and dataset generation parallelizes over pairs without
//! changing a single byte of output.
//!
//! The pieces, bottom to top:
//!
//! - [`SyntheticFinger`] renders a clean "master" print: an orientation field
//!   with core/delta singularities steers iterative oriented filtering of
//!   seeded noise, which settles into ridge/valley stripes at the finger's
//!   ridge frequency. Ridges are dark, valleys bright, background 0.
//! - [`corrupt`] applies one of three capture artifacts (sensor noise, dry
//!   skin, over-pressure) with a severity knob where 0 is exactly the
//!   identity.
//! - [`make_genuine_pair`] / [`make_imposter_pair`] build labeled image pairs
//!   plus a cell-level [`CorrespondenceGrid`] derived from the true rotation.
//! - [`generate_dataset`] / [`load_dataset`] write and read the on-disk
//!   layout (`pairs/NNNN/{a.png,b.png,truth.json}` plus a manifest).

mod corrupt;
mod dataset;
mod finger;
mod pair;

pub use corrupt::{corrupt, CorruptionKind};
pub use dataset::{
    build_pair, generate_dataset, load_dataset, load_pair_images, DatasetConfig, DatasetSummary,
    PairRecord, SynthError,
};
pub use finger::{Master, SyntheticFinger};
pub use pair::{
    correspondence_grid, make_genuine_pair, make_imposter_pair, CorrespondenceGrid, PairLabel,
    PairSample, PairTruth,
};

/// Stateless seed derivation for independent RNG streams.
///
/// Chains two rounds of the splitmix64 finalizer over `a ^ rotl(b)` so that
/// nearby `(a, b)` inputs land on unrelated streams. Used to give every
/// identity and every pair its own seed without any sequential RNG draws,
/// which is what makes parallel dataset generation deterministic.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.rotate_left(32) ^ 0x9e37_79b9_7f4a_7c15;
    for _ in 0..2 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}
