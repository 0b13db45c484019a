//! Feature extraction: visual patch sequences and token sequences for the
//! original and enhanced texts, behind a pluggable backend.
//!
//! Two backends exist: [`toy::ToyEncoder`], a deterministic seeded-hash
//! feature extractor used for tests and desk-scale runs, and
//! [`archive::FeatureArchive`], which serves precomputed features exported
//! offline from pretrained encoders.

pub mod archive;
pub mod toy;

use std::collections::BTreeMap;

use ndarray::Array2;
use thiserror::Error;

use crate::data::RgbData;
use crate::enhance::{EnhancementRecord, EnhancementStep};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("non-finite value in encoded features")]
    NonFinite,
    #[error("mask length {mask} does not match row count {rows}")]
    MaskMismatch { mask: usize, rows: usize },
    #[error("enhancement step {0} is enabled but missing from the record")]
    MissingStep(EnhancementStep),
    #[error("feature archive: {0}")]
    Archive(String),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SequenceKind {
    Visual,
    Textual,
}

/// A length × d feature matrix with a validity mask.
#[derive(Debug, Clone)]
pub struct FeatureSequence<F: Scalar> {
    pub rows: Array2<F>,
    pub mask: Vec<bool>,
    pub kind: SequenceKind,
}

impl<F: Scalar> FeatureSequence<F> {
    pub fn new(rows: Array2<F>, mask: Vec<bool>, kind: SequenceKind) -> Result<Self, EncodeError> {
        if mask.len() != rows.nrows() {
            return Err(EncodeError::MaskMismatch {
                mask: mask.len(),
                rows: rows.nrows(),
            });
        }
        if rows.iter().any(|x| !x.is_finite()) {
            return Err(EncodeError::NonFinite);
        }
        Ok(Self { rows, mask, kind })
    }

    /// All-unmasked sequence.
    pub fn dense(rows: Array2<F>, kind: SequenceKind) -> Result<Self, EncodeError> {
        let mask = vec![true; rows.nrows()];
        Self::new(rows, mask, kind)
    }

    pub fn empty(dim: usize, kind: SequenceKind) -> Self {
        Self {
            rows: Array2::zeros((0, dim)),
            mask: Vec::new(),
            kind,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn unmasked_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

/// Everything the fusion model consumes for one meme.
#[derive(Debug, Clone)]
pub struct FeatureBundle<F: Scalar> {
    pub visual: FeatureSequence<F>,
    pub text: FeatureSequence<F>,
    /// One sequence per enabled enhancement step, keyed in chain order.
    pub enhanced: BTreeMap<EnhancementStep, FeatureSequence<F>>,
}

/// Encoder interface. Implementations are immutable after construction and
/// safe to share across threads.
pub trait EncoderBackend<F: Scalar>: Send + Sync {
    /// Width of textual feature vectors (the model dimension d).
    fn dim(&self) -> usize;

    /// Width of visual feature vectors. Backends whose vision encoder
    /// disagrees with the text width rely on the model's visual projection.
    fn vision_dim(&self) -> usize {
        self.dim()
    }

    fn encode_image(&self, image: &RgbData) -> Result<FeatureSequence<F>, EncodeError>;

    /// Empty text yields a 0 × d sequence; longer texts are truncated to
    /// `max_tokens` rows.
    fn encode_text(&self, text: &str, max_tokens: usize) -> Result<FeatureSequence<F>, EncodeError>;
}

/// Per-modality token caps.
#[derive(Debug, Clone, Copy)]
pub struct TokenLimits {
    pub original_text: usize,
    pub enhanced_text: usize,
}

impl Default for TokenLimits {
    fn default() -> Self {
        Self {
            original_text: 64,
            enhanced_text: 128,
        }
    }
}

/// Encode one meme into the bundle the fusion model consumes: the visual
/// sequence, the original-text sequence, and one sequence per enabled
/// enhancement step.
pub fn encode_bundle<F: Scalar>(
    backend: &dyn EncoderBackend<F>,
    image: &RgbData,
    meme_text: &str,
    record: &EnhancementRecord,
    enabled_steps: &[EnhancementStep],
    limits: TokenLimits,
) -> Result<FeatureBundle<F>, EncodeError> {
    let visual = backend.encode_image(image)?;
    let text = backend.encode_text(meme_text, limits.original_text)?;
    let mut enhanced = BTreeMap::new();
    for &step in enabled_steps {
        let enhanced_text = record
            .texts
            .get(&step)
            .ok_or(EncodeError::MissingStep(step))?;
        enhanced.insert(
            step,
            backend.encode_text(enhanced_text, limits.enhanced_text)?,
        );
    }
    Ok(FeatureBundle {
        visual,
        text,
        enhanced,
    })
}
