//! Deterministic toy encoder: a seeded hash expanded to unit-variance
//! feature vectors. A pure function of (seed, input bytes), so golden
//! matrices hold bit-exact across platforms.

use ndarray::Array2;
use sha2::{Digest, Sha256};

use crate::data::RgbData;
use crate::rng::SplitMix64;
use crate::scalar::Scalar;

use super::{EncodeError, EncoderBackend, FeatureSequence, SequenceKind};

/// Test-scale stand-in for pretrained encoders.
///
/// Images map to a fixed number of patch vectors (one per contiguous block
/// of the RGB byte stream); texts tokenize on whitespace, one vector per
/// token, position-independent.
#[derive(Debug, Clone)]
pub struct ToyEncoder {
    pub seed: u64,
    pub dim: usize,
    pub patches: usize,
}

impl ToyEncoder {
    pub fn new(seed: u64, dim: usize, patches: usize) -> Self {
        assert!(dim > 0 && patches > 0);
        Self { seed, dim, patches }
    }
}

impl Default for ToyEncoder {
    fn default() -> Self {
        Self::new(0, 32, 16)
    }
}

/// Expand (seed, payload) into `dim` unit-variance values via
/// SHA-256 → SplitMix64 → Irwin-Hall.
fn feature_row(seed: u64, payload_parts: &[&[u8]], dim: usize) -> Vec<f64> {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    for part in payload_parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    let digest = hasher.finalize();
    let mut rng = SplitMix64::from_bytes(&digest);
    (0..dim).map(|_| rng.next_unit_variance()).collect()
}

impl<F: Scalar> EncoderBackend<F> for ToyEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode_image(&self, image: &RgbData) -> Result<FeatureSequence<F>, EncodeError> {
        let bytes = &image.pixels;
        let mut rows = Array2::zeros((self.patches, self.dim));
        for p in 0..self.patches {
            let start = p * bytes.len() / self.patches;
            let end = (p + 1) * bytes.len() / self.patches;
            let block = &bytes[start..end];
            let values = feature_row(
                self.seed,
                &[
                    b"patch",
                    &(p as u64).to_le_bytes(),
                    &u64::from(image.width).to_le_bytes(),
                    &u64::from(image.height).to_le_bytes(),
                    block,
                ],
                self.dim,
            );
            for (j, v) in values.into_iter().enumerate() {
                rows[(p, j)] = F::from_f64(v);
            }
        }
        FeatureSequence::dense(rows, SequenceKind::Visual)
    }

    fn encode_text(&self, text: &str, max_tokens: usize) -> Result<FeatureSequence<F>, EncodeError> {
        let tokens: Vec<&str> = text.split_whitespace().take(max_tokens).collect();
        let mut rows = Array2::zeros((tokens.len(), self.dim));
        for (i, token) in tokens.iter().enumerate() {
            let values = feature_row(self.seed, &[b"token", token.as_bytes()], self.dim);
            for (j, v) in values.into_iter().enumerate() {
                rows[(i, j)] = F::from_f64(v);
            }
        }
        FeatureSequence::dense(rows, SequenceKind::Textual)
    }
}
