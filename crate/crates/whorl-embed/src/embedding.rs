use crate::EmbedError;

/// Length of the fixed-size representation vector.
pub const EMBED_DIM: usize = 256;

/// Unit-norm slack accepted by [`Embedding256::new`].
pub const NORM_TOL: f64 = 1e-6;

/// A fixed-length, unit-norm representation of one fingerprint view.
///
/// The constructor enforces the norm, so the dot product of any two
/// embeddings is their cosine similarity and [`Embedding256::cosine`] can
/// clamp instead of renormalizing.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding256 {
    values: Vec<f64>,
}

impl Embedding256 {
    pub fn new(values: Vec<f64>) -> Result<Embedding256, EmbedError> {
        if values.len() != EMBED_DIM {
            return Err(EmbedError::Dimension {
                what: "embedding length",
                expected: EMBED_DIM,
                found: values.len(),
            });
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(EmbedError::NotUnit { norm });
        }
        Ok(Embedding256 { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Cosine similarity, clamped so rounding can never leave [-1, 1].
    pub fn cosine(&self, other: &Embedding256) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            .clamp(-1.0, 1.0)
    }
}
