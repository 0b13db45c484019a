//! Synthetic desk-scale dataset generator: tiny PNG memes with
//! label-correlated texts, plus a ready-made enhancement cache covering
//! the four chain steps and the direct variant. Everything is a pure
//! function of the seed.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::data::{save_manifest, DatasetManifest, ImageRef, LabelVocab, MemeInstance, Split};
use crate::enhance::{prompt_hash, CacheLine, CacheWriter, EnhancementStep};
use crate::rng::SplitMix64;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("io: {0}")]
    Io(String),
    #[error("image: {0}")]
    Image(String),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error(transparent)]
    Enhance(#[from] crate::enhance::EnhanceError),
}

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub classes: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: 7,
            train: 32,
            val: 8,
            test: 8,
            seed: 0,
        }
    }
}

pub struct SynthPaths {
    pub dir: PathBuf,
    pub manifest: PathBuf,
    pub cache: PathBuf,
}

const EMOTION_NAMES: [&str; 8] = [
    "joy", "anger", "sadness", "fear", "surprise", "disgust", "contempt", "love",
];

const PALETTE: [[u8; 3]; 8] = [
    [220, 180, 40],
    [200, 40, 40],
    [60, 80, 180],
    [90, 40, 120],
    [240, 140, 30],
    [60, 140, 60],
    [120, 120, 120],
    [220, 80, 140],
];

fn class_names(classes: usize) -> Vec<String> {
    (0..classes)
        .map(|i| {
            EMOTION_NAMES
                .get(i)
                .map(|s| s.to_string())
                .unwrap_or_else(|| format!("emotion{i}"))
        })
        .collect()
}

fn step_text(step: EnhancementStep, keyword: &str, index: usize) -> String {
    match step {
        EnhancementStep::Id => {
            format!("a {keyword} looking {keyword} face dominates the {keyword} picture frame{index}")
        }
        EnhancementStep::Tm => {
            format!("the {keyword} caption voices a {keyword} tone with {keyword} emphasis")
        }
        EnhancementStep::Cim => {
            format!("image and text together imply a {keyword} {keyword} message overall")
        }
        EnhancementStep::Ca => {
            format!("someone would post this {keyword} meme when feeling {keyword} online")
        }
        EnhancementStep::Direct => {
            format!("this {keyword} meme conveys {keyword} because the {keyword} cues dominate")
        }
    }
}

/// Generate a manifest, images and a complete enhancement cache under
/// `dir`. Splits are assigned by position: the first `train` instances,
/// then `val`, then `test`; labels cycle through the classes.
pub fn generate(dir: &Path, spec: &SynthSpec) -> Result<SynthPaths, SynthError> {
    let images_dir = dir.join("images");
    fs::create_dir_all(&images_dir).map_err(|e| SynthError::Io(e.to_string()))?;

    let names = class_names(spec.classes);
    let vocab = LabelVocab::new(names.clone())?;
    let mut manifest = DatasetManifest::new("synthetic".into(), vocab);
    manifest.base_dir = Some(dir.to_path_buf());

    let total = spec.train + spec.val + spec.test;
    let mut rng = SplitMix64::new(crate::rng::derive_seed(&[spec.seed, 0x73_79_6e_74]));
    for i in 0..total {
        let label = i % spec.classes;
        let keyword = &names[label];
        let id = format!("synth-{i:04}");
        let split = if i < spec.train {
            Split::Train
        } else if i < spec.train + spec.val {
            Split::Val
        } else {
            Split::Test
        };

        let palette = PALETTE[label % PALETTE.len()];
        let img = image::RgbImage::from_fn(8, 8, |_, _| {
            let mut noise = |base: u8| {
                let jitter = (rng.next_index(41) as i16) - 20;
                (base as i16 + jitter).clamp(0, 255) as u8
            };
            image::Rgb([noise(palette[0]), noise(palette[1]), noise(palette[2])])
        });
        let image_rel = format!("images/{id}.png");
        img.save(dir.join(&image_rel))
            .map_err(|e| SynthError::Image(e.to_string()))?;

        manifest.instances.push(MemeInstance {
            id,
            image: ImageRef::Path(image_rel),
            text: format!("{keyword} vibes caption m{i}"),
            label,
            split: Some(split),
            language: Some(if i % 4 == 3 { "zh" } else { "en" }.to_string()),
        });
    }

    let manifest_path = dir.join("manifest.jsonl");
    save_manifest(&manifest, &manifest_path)?;

    let cache_path = dir.join("cache.jsonl");
    let mut writer = CacheWriter::append_to(&cache_path)?;
    for (i, meme) in manifest.instances.iter().enumerate() {
        let keyword = &names[meme.label];
        let mut steps = EnhancementStep::CHAIN.to_vec();
        steps.push(EnhancementStep::Direct);
        for step in steps {
            writer.append(&CacheLine {
                meme_id: meme.id.clone(),
                step,
                model_id: "synth-mock".into(),
                prompt_hash: prompt_hash(step, &meme.text),
                temperature: 0.0,
                text: step_text(step, keyword, i),
                ts: "2025-01-01T00:00:00Z".into(),
            })?;
        }
    }

    Ok(SynthPaths {
        dir: dir.to_path_buf(),
        manifest: manifest_path,
        cache: cache_path,
    })
}
