//! Checkpoint archive: parameter tensors keyed by canonical names, plus
//! the run config and label vocabulary, in one JSON file. Tensor data is
//! stored as f64, which round-trips both scalar widths losslessly.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::data::LabelVocab;
use crate::scalar::Scalar;

use super::{FusionDims, FusionModel, FusionVariant, TensorRef};

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint {path}: {message}")]
    Io { path: String, message: String },
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error("checkpoint mismatch: {0}")]
    Mismatch(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorData {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub vocab: Vec<String>,
    pub variant: FusionVariant,
    pub keep_stage1: bool,
    pub dims: FusionDims,
    tensors: BTreeMap<String, TensorData>,
}

impl Checkpoint {
    pub fn from_model<F: Scalar>(
        model: &FusionModel<F>,
        config: &RunConfig,
        vocab: &LabelVocab,
    ) -> Self {
        let mut tensors = BTreeMap::new();
        for (name, tensor) in model.params.named_tensors() {
            let (shape, data) = match tensor {
                TensorRef::Mat(m) => (
                    vec![m.nrows(), m.ncols()],
                    m.iter().map(|x| x.into_f64()).collect(),
                ),
                TensorRef::Vec1(v) => (vec![v.len()], v.iter().map(|x| x.into_f64()).collect()),
            };
            tensors.insert(name, TensorData { shape, data });
        }
        Self {
            config: config.clone(),
            vocab: vocab.names().to_vec(),
            variant: model.variant,
            keep_stage1: model.keep_stage1,
            dims: model.dims,
            tensors,
        }
    }

    pub fn to_model<F: Scalar>(&self) -> Result<FusionModel<F>, CheckpointError> {
        if self.dims.classes != self.vocab.len() {
            return Err(CheckpointError::Mismatch(format!(
                "dims.classes {} != vocab size {}",
                self.dims.classes,
                self.vocab.len()
            )));
        }
        let mut model = FusionModel::<F>::new(self.variant, self.keep_stage1, self.dims, 0)
            .map_err(|e| CheckpointError::Format(e.to_string()))?;
        let mut seen = 0usize;
        for (name, slice) in model.params.named_slices_mut() {
            let tensor = self.tensors.get(&name).ok_or_else(|| {
                CheckpointError::Mismatch(format!("missing tensor `{name}`"))
            })?;
            let expected: usize = tensor.shape.iter().product();
            if expected != slice.len() || tensor.data.len() != slice.len() {
                return Err(CheckpointError::Mismatch(format!(
                    "tensor `{name}` has {} values, model expects {}",
                    tensor.data.len(),
                    slice.len()
                )));
            }
            for (dst, &src) in slice.iter_mut().zip(tensor.data.iter()) {
                *dst = F::from_f64(src);
            }
            seen += 1;
        }
        if seen != self.tensors.len() {
            let known: Vec<&String> = self.tensors.keys().collect();
            return Err(CheckpointError::Mismatch(format!(
                "checkpoint carries {} tensors, model uses {seen} ({known:?})",
                self.tensors.len()
            )));
        }
        Ok(model)
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<(), CheckpointError> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| CheckpointError::Io {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?;
            }
        }
        let json = serde_json::to_string(self).expect("checkpoint serializes");
        std::fs::write(path, json).map_err(|e| CheckpointError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self, CheckpointError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| CheckpointError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        serde_json::from_str(&raw).map_err(|e| CheckpointError::Format(e.to_string()))
    }

    pub fn vocab(&self) -> Result<LabelVocab, CheckpointError> {
        LabelVocab::new(self.vocab.clone())
            .map_err(|e| CheckpointError::Format(e.to_string()))
    }
}
