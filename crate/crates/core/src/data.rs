//! Dataset manifests, label vocabularies and image loading.
//!
//! A manifest is UTF-8 JSON Lines. Line 1 is a header record declaring the
//! dataset name and the ordered label vocabulary; every following line is a
//! meme record. Labels are stored by name and resolved to indices via the
//! header.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("manifest {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Parse { line: usize, message: String },
    #[error("line 1: manifest must start with a header record")]
    MissingHeader,
    #[error("invalid label vocabulary: {0}")]
    InvalidVocab(String),
    #[error("line {line}: duplicate meme id `{id}` (first declared on line {first_line})")]
    DuplicateId {
        id: String,
        line: usize,
        first_line: usize,
    },
    #[error("line {line}: label `{label}` is not declared in the header")]
    UnknownLabel { label: String, line: usize },
    #[error("meme `{id}`: cannot read image {path}: {message}")]
    ImageRead {
        id: String,
        path: String,
        message: String,
    },
    #[error("meme `{id}`: cannot decode image: {message}")]
    ImageDecode { id: String, message: String },
    #[error("{0}")]
    Validation(String),
}

/// Train/val/test partition tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}` (expected train|val|test)")),
        }
    }
}

/// Ordered emotion-class vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVocab {
    names: Vec<String>,
}

impl LabelVocab {
    pub fn new(names: Vec<String>) -> Result<Self, DataError> {
        if names.len() < 2 {
            return Err(DataError::InvalidVocab(format!(
                "need at least 2 label names, got {}",
                names.len()
            )));
        }
        let mut seen = HashMap::new();
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() {
                return Err(DataError::InvalidVocab(format!("label {i} is empty")));
            }
            if let Some(prev) = seen.insert(name.clone(), i) {
                return Err(DataError::InvalidVocab(format!(
                    "label `{name}` declared twice (positions {prev} and {i})"
                )));
            }
        }
        Ok(Self { names })
    }

    pub fn size(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Image payload: a path as declared in the manifest, or in-memory encoded bytes.
#[derive(Debug, Clone)]
pub enum ImageRef {
    Path(String),
    Bytes(Vec<u8>),
}

/// One meme: image, overlaid text, emotion label, split and language tag.
#[derive(Debug, Clone)]
pub struct MemeInstance {
    pub id: String,
    pub image: ImageRef,
    pub text: String,
    /// Index into the manifest's [`LabelVocab`].
    pub label: usize,
    pub split: Option<Split>,
    pub language: Option<String>,
}

/// A loaded dataset: instances in declaration order plus the label vocabulary.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub name: String,
    pub vocab: LabelVocab,
    pub instances: Vec<MemeInstance>,
    /// Directory image paths are resolved against (the manifest's parent).
    pub base_dir: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum ManifestLine {
    Header {
        name: String,
        labels: Vec<String>,
    },
    Meme {
        id: String,
        image: String,
        text: String,
        label: String,
        #[serde(skip_serializing_if = "Option::is_none")]
        split: Option<Split>,
        #[serde(skip_serializing_if = "Option::is_none")]
        language: Option<String>,
    },
}

impl DatasetManifest {
    pub fn new(name: String, vocab: LabelVocab) -> Self {
        Self {
            name,
            vocab,
            instances: Vec::new(),
            base_dir: None,
        }
    }

    pub fn instance(&self, id: &str) -> Option<&MemeInstance> {
        self.instances.iter().find(|m| m.id == id)
    }
}

/// Parse a manifest from a reader. `path` is used for error messages and
/// image resolution only.
pub fn read_manifest<R: BufRead>(reader: R, base_dir: Option<PathBuf>) -> Result<DatasetManifest, DataError> {
    let mut manifest: Option<DatasetManifest> = None;
    let mut id_lines: HashMap<String, usize> = HashMap::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| DataError::Io {
            path: "<stream>".into(),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ManifestLine = serde_json::from_str(&line).map_err(|e| DataError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        match record {
            ManifestLine::Header { name, labels } => {
                if manifest.is_some() {
                    return Err(DataError::Parse {
                        line: line_no,
                        message: "second header record".into(),
                    });
                }
                if line_no != 1 {
                    return Err(DataError::MissingHeader);
                }
                let vocab = LabelVocab::new(labels)?;
                let mut m = DatasetManifest::new(name, vocab);
                m.base_dir = base_dir.clone();
                manifest = Some(m);
            }
            ManifestLine::Meme {
                id,
                image,
                text,
                label,
                split,
                language,
            } => {
                let manifest = manifest.as_mut().ok_or(DataError::MissingHeader)?;
                if let Some(&first_line) = id_lines.get(&id) {
                    return Err(DataError::DuplicateId {
                        id,
                        line: line_no,
                        first_line,
                    });
                }
                let label_idx = manifest
                    .vocab
                    .index(&label)
                    .ok_or(DataError::UnknownLabel {
                        label: label.clone(),
                        line: line_no,
                    })?;
                id_lines.insert(id.clone(), line_no);
                manifest.instances.push(MemeInstance {
                    id,
                    image: ImageRef::Path(image),
                    text,
                    label: label_idx,
                    split,
                    language,
                });
            }
        }
    }
    manifest.ok_or(DataError::MissingHeader)
}

pub fn load_manifest<P: AsRef<Path>>(path: P) -> Result<DatasetManifest, DataError> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let base = path.parent().map(|p| p.to_path_buf());
    read_manifest(BufReader::new(file), base)
}

/// Serialize a manifest in canonical field order, one JSON object per line.
pub fn write_manifest<W: Write>(manifest: &DatasetManifest, mut w: W) -> Result<(), DataError> {
    let io_err = |e: std::io::Error| DataError::Io {
        path: "<stream>".into(),
        source: e,
    };
    let header = ManifestLine::Header {
        name: manifest.name.clone(),
        labels: manifest.vocab.names().to_vec(),
    };
    writeln!(w, "{}", serde_json::to_string(&header).expect("header serializes")).map_err(io_err)?;
    for inst in &manifest.instances {
        let image = match &inst.image {
            ImageRef::Path(p) => p.clone(),
            ImageRef::Bytes(_) => {
                return Err(DataError::Validation(format!(
                    "meme `{}` holds in-memory image bytes; manifests store paths only",
                    inst.id
                )))
            }
        };
        let line = ManifestLine::Meme {
            id: inst.id.clone(),
            image,
            text: inst.text.clone(),
            label: manifest.vocab.name(inst.label).to_string(),
            split: inst.split,
            language: inst.language.clone(),
        };
        writeln!(w, "{}", serde_json::to_string(&line).expect("record serializes")).map_err(io_err)?;
    }
    Ok(())
}

pub fn save_manifest<P: AsRef<Path>>(manifest: &DatasetManifest, path: P) -> Result<(), DataError> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    write_manifest(manifest, std::io::BufWriter::new(file))
}

/// Instances whose split matches, in declaration order.
pub fn split_view(manifest: &DatasetManifest, split: Split) -> Vec<&MemeInstance> {
    manifest
        .instances
        .iter()
        .filter(|m| m.split == Some(split))
        .collect()
}

/// Assign split tags to instances that have none, with a seeded shuffle and
/// the given train:val:test ratio. Instances that already carry a tag keep it.
pub fn assign_splits(manifest: &mut DatasetManifest, seed: u64, ratio: (u32, u32, u32)) {
    let untagged: Vec<usize> = manifest
        .instances
        .iter()
        .enumerate()
        .filter(|(_, m)| m.split.is_none())
        .map(|(i, _)| i)
        .collect();
    if untagged.is_empty() {
        return;
    }
    let mut order = untagged.clone();
    let mut rng = crate::rng::SplitMix64::new(crate::rng::derive_seed(&[seed, 0x73_70_6c_69]));
    crate::rng::shuffle(&mut rng, &mut order);

    let total = (ratio.0 + ratio.1 + ratio.2) as usize;
    assert!(total > 0, "split ratio must be positive");
    let n = order.len();
    let n_train = n * ratio.0 as usize / total;
    let n_val = n * ratio.1 as usize / total;
    for (pos, &idx) in order.iter().enumerate() {
        let split = if pos < n_train {
            Split::Train
        } else if pos < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
        manifest.instances[idx].split = Some(split);
    }
}

/// Decoded RGB8 image.
#[derive(Debug, Clone)]
pub struct RgbData {
    pub width: u32,
    pub height: u32,
    /// Row-major RGB triples, length = width * height * 3.
    pub pixels: Vec<u8>,
}

/// Raw encoded bytes of an instance's image (for MLLM payloads).
pub fn image_bytes(manifest: &DatasetManifest, inst: &MemeInstance) -> Result<Vec<u8>, DataError> {
    match &inst.image {
        ImageRef::Bytes(b) => Ok(b.clone()),
        ImageRef::Path(p) => {
            let resolved = resolve_image_path(manifest.base_dir.as_deref(), p);
            fs::read(&resolved).map_err(|e| DataError::ImageRead {
                id: inst.id.clone(),
                path: resolved.display().to_string(),
                message: e.to_string(),
            })
        }
    }
}

/// Decode an instance's image to RGB8. Non-decodable images are an error,
/// never a silent skip.
pub fn load_rgb(manifest: &DatasetManifest, inst: &MemeInstance) -> Result<RgbData, DataError> {
    let bytes = image_bytes(manifest, inst)?;
    let img = image::load_from_memory(&bytes).map_err(|e| DataError::ImageDecode {
        id: inst.id.clone(),
        message: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    Ok(RgbData {
        width: rgb.width(),
        height: rgb.height(),
        pixels: rgb.into_raw(),
    })
}

fn resolve_image_path(base: Option<&Path>, declared: &str) -> PathBuf {
    let p = Path::new(declared);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        match base {
            Some(b) => b.join(p),
            None => p.to_path_buf(),
        }
    }
}
