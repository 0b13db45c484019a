//! Feature archive backend: serves precomputed features exported offline
//! from pretrained encoders (frozen backbones are fixed functions, so their
//! outputs can be materialized once by any framework and reused here).
//!
//! Layout: `<dir>/meta.json` plus one JSON matrix per input under
//! `<dir>/vision/<digest>.json` and `<dir>/text/<digest>.json`, keyed by a
//! SHA-256 of the input content.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::RgbData;
use crate::scalar::Scalar;

use super::{EncodeError, EncoderBackend, FeatureSequence, SequenceKind};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArchiveMeta {
    /// Identifier of the vision model whose features were exported.
    pub vision_id: String,
    /// Identifier of the text model whose features were exported.
    pub text_id: String,
    pub text_dim: usize,
    pub vision_dim: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct StoredMatrix {
    rows: Vec<Vec<f64>>,
}

/// Read-only feature store implementing [`EncoderBackend`].
#[derive(Debug, Clone)]
pub struct FeatureArchive {
    dir: PathBuf,
    pub meta: ArchiveMeta,
}

impl FeatureArchive {
    pub fn open<P: AsRef<Path>>(dir: P) -> Result<Self, EncodeError> {
        let dir = dir.as_ref().to_path_buf();
        let meta_path = dir.join("meta.json");
        let raw = fs::read_to_string(&meta_path).map_err(|e| {
            EncodeError::Archive(format!("cannot read {}: {e}", meta_path.display()))
        })?;
        let meta: ArchiveMeta = serde_json::from_str(&raw)
            .map_err(|e| EncodeError::Archive(format!("{}: {e}", meta_path.display())))?;
        Ok(Self { dir, meta })
    }

    /// Initialize an empty archive directory (used by exporters and tests).
    pub fn create<P: AsRef<Path>>(dir: P, meta: ArchiveMeta) -> Result<Self, EncodeError> {
        let dir = dir.as_ref().to_path_buf();
        for sub in ["vision", "text"] {
            fs::create_dir_all(dir.join(sub))
                .map_err(|e| EncodeError::Archive(format!("cannot create {sub}/: {e}")))?;
        }
        let meta_path = dir.join("meta.json");
        let json = serde_json::to_string_pretty(&meta).expect("meta serializes");
        fs::write(&meta_path, json)
            .map_err(|e| EncodeError::Archive(format!("cannot write meta.json: {e}")))?;
        Ok(Self { dir, meta })
    }

    pub fn image_key(image: &RgbData) -> String {
        let mut hasher = Sha256::new();
        hasher.update(u64::from(image.width).to_le_bytes());
        hasher.update(u64::from(image.height).to_le_bytes());
        hasher.update(&image.pixels);
        hex::encode(hasher.finalize())
    }

    pub fn text_key(text: &str) -> String {
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn put_image(&self, image: &RgbData, rows: Vec<Vec<f64>>) -> Result<(), EncodeError> {
        self.put("vision", &Self::image_key(image), rows, self.meta.vision_dim)
    }

    pub fn put_text(&self, text: &str, rows: Vec<Vec<f64>>) -> Result<(), EncodeError> {
        self.put("text", &Self::text_key(text), rows, self.meta.text_dim)
    }

    fn put(
        &self,
        kind: &str,
        key: &str,
        rows: Vec<Vec<f64>>,
        dim: usize,
    ) -> Result<(), EncodeError> {
        if rows.iter().any(|r| r.len() != dim) {
            return Err(EncodeError::Archive(format!(
                "{kind} entry width differs from declared dim {dim}"
            )));
        }
        let path = self.dir.join(kind).join(format!("{key}.json"));
        let json = serde_json::to_string(&StoredMatrix { rows }).expect("matrix serializes");
        fs::write(&path, json)
            .map_err(|e| EncodeError::Archive(format!("cannot write {}: {e}", path.display())))
    }

    fn get<F: Scalar>(
        &self,
        kind: &str,
        key: &str,
        dim: usize,
    ) -> Result<Array2<F>, EncodeError> {
        let path = self.dir.join(kind).join(format!("{key}.json"));
        let raw = fs::read_to_string(&path).map_err(|_| {
            EncodeError::Archive(format!(
                "no {kind} features for digest {key}; run the feature exporter for this input"
            ))
        })?;
        let stored: StoredMatrix = serde_json::from_str(&raw)
            .map_err(|e| EncodeError::Archive(format!("{}: {e}", path.display())))?;
        let n = stored.rows.len();
        let mut rows = Array2::zeros((n, dim));
        for (i, row) in stored.rows.iter().enumerate() {
            if row.len() != dim {
                return Err(EncodeError::Archive(format!(
                    "{}: row {i} has width {}, expected {dim}",
                    path.display(),
                    row.len()
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                rows[(i, j)] = F::from_f64(v);
            }
        }
        Ok(rows)
    }
}

impl<F: Scalar> EncoderBackend<F> for FeatureArchive {
    fn dim(&self) -> usize {
        self.meta.text_dim
    }

    fn vision_dim(&self) -> usize {
        self.meta.vision_dim
    }

    fn encode_image(&self, image: &RgbData) -> Result<FeatureSequence<F>, EncodeError> {
        let rows = self.get("vision", &Self::image_key(image), self.meta.vision_dim)?;
        FeatureSequence::dense(rows, SequenceKind::Visual)
    }

    fn encode_text(&self, text: &str, max_tokens: usize) -> Result<FeatureSequence<F>, EncodeError> {
        let rows: Array2<F> = self.get("text", &Self::text_key(text), self.meta.text_dim)?;
        let keep = rows.nrows().min(max_tokens);
        let truncated = rows.slice(ndarray::s![..keep, ..]).to_owned();
        FeatureSequence::dense(truncated, SequenceKind::Textual)
    }
}
