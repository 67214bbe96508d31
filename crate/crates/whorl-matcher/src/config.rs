use serde::{Deserialize, Serialize};

/// How raw similarities become match confidences.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchingMode {
    /// Product of a row-normalized and a column-normalized softmax; a match
    /// must win in both directions to score high.
    Dual,
    /// Row-normalized softmax only.
    Single,
}

/// Architecture and matching hyperparameters for [`crate::MatcherNet`].
///
/// The backbone downsamples by `cell_size` in total, so one output token
/// covers exactly one correspondence cell; `image_size` therefore fixes the
/// token count at `(image_size / cell_size)^2` and the learned position
/// table is sized to it at construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatcherConfig {
    /// Token width. Must be divisible by 4 (backbone channel ramp) and by
    /// `heads`.
    pub dim: usize,
    /// Attention heads per block.
    pub heads: usize,
    /// Interleaved self/cross attention rounds. Zero means raw backbone
    /// tokens are matched directly.
    pub rounds: usize,
    /// Mutual-confidence floor for keeping a match.
    pub threshold: f64,
    /// Learn a dustbin score so unmatched cells have somewhere to go.
    pub dustbin: bool,
    pub matching: MatchingMode,
    /// Square input edge in pixels.
    pub image_size: usize,
    /// Pixels per grid cell. The conv backbone's stride stack fixes this
    /// at 8.
    pub cell_size: usize,
}

impl Default for MatcherConfig {
    fn default() -> MatcherConfig {
        MatcherConfig {
            dim: 64,
            heads: 4,
            rounds: 2,
            threshold: 0.2,
            dustbin: true,
            matching: MatchingMode::Dual,
            image_size: 128,
            cell_size: 8,
        }
    }
}

impl MatcherConfig {
    /// Tokens per image side.
    pub fn grid_n(&self) -> usize {
        self.image_size / self.cell_size
    }

    /// Tokens per image.
    pub fn tokens(&self) -> usize {
        self.grid_n() * self.grid_n()
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.dim == 0 || self.dim % 4 != 0 {
            return Err(format!("dim {} must be a positive multiple of 4", self.dim));
        }
        if self.heads == 0 || self.dim % self.heads != 0 {
            return Err(format!("heads {} must divide dim {}", self.heads, self.dim));
        }
        if self.cell_size != 8 {
            return Err(format!(
                "cell_size {} unsupported: the backbone downsamples by 8",
                self.cell_size
            ));
        }
        if self.image_size == 0 || self.image_size % self.cell_size != 0 {
            return Err(format!(
                "image_size {} must be a positive multiple of cell_size {}",
                self.image_size, self.cell_size
            ));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(format!("threshold {} outside [0, 1]", self.threshold));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let cfg = MatcherConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.grid_n(), 16);
        assert_eq!(cfg.tokens(), 256);
    }

    #[test]
    fn invalid_shapes_are_rejected() {
        assert!(MatcherConfig { dim: 30, ..Default::default() }.validate().is_err());
        assert!(MatcherConfig { heads: 3, ..Default::default() }.validate().is_err());
        assert!(MatcherConfig { cell_size: 4, ..Default::default() }.validate().is_err());
        assert!(MatcherConfig { image_size: 100, ..Default::default() }.validate().is_err());
        assert!(MatcherConfig { threshold: 1.5, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn config_survives_serde() {
        let cfg = MatcherConfig { dim: 32, heads: 2, ..Default::default() };
        let json = serde_json::to_string(&cfg).unwrap();
        let back: MatcherConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
    }
}
