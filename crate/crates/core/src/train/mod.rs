//! Training loop, evaluation and the cross-entropy objective.
//!
//! A run is fully determined by (config, seed, cache): parameter init,
//! epoch shuffling and iteration order are all seeded, and every logged
//! number is reproducible bit-for-bit.

pub mod optim;
pub mod sweep;

use ndarray::Array1;
use serde::Serialize;
use thiserror::Error;

use crate::config::{EncoderVariant, RunConfig};
use crate::data::{load_rgb, split_view, DatasetManifest, MemeInstance, Split};
use crate::encode::{
    archive::FeatureArchive, encode_bundle, toy::ToyEncoder, EncoderBackend, FeatureBundle,
    TokenLimits,
};
use crate::enhance::{EnhancementCache, EnhancementRecord, EnhancementStep};
use crate::fusion::backward::LOG_EPSILON;
use crate::fusion::checkpoint::Checkpoint;
use crate::fusion::{argmax, FusionDims, FusionModel};
use crate::metrics::{ConfusionMatrix, EvalMetrics};
use crate::rng::{derive_seed, shuffle, SplitMix64};
use crate::scalar::Scalar;

pub use optim::AdamW;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("enhancement cache is incomplete; missing (meme, step) pairs: {gaps:?}")]
    Coverage { gaps: Vec<(String, EnhancementStep)> },
    #[error("split `{0}` has no instances")]
    EmptySplit(Split),
    #[error("checkpoint vocab {checkpoint:?} does not match manifest vocab {manifest:?}")]
    VocabMismatch {
        checkpoint: Vec<String>,
        manifest: Vec<String>,
    },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error(transparent)]
    Encode(#[from] crate::encode::EncodeError),
    #[error(transparent)]
    Fusion(#[from] crate::fusion::FusionError),
    #[error(transparent)]
    Enhance(#[from] crate::enhance::EnhanceError),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
    #[error(transparent)]
    Checkpoint(#[from] crate::fusion::checkpoint::CheckpointError),
    #[error("io: {0}")]
    Io(String),
}

/// Cross-entropy of one prediction: `-ln p[label]`, clamped at 1e-12.
/// Batch and dataset objectives are means of this value.
pub fn cross_entropy<F: Scalar>(probabilities: &Array1<F>, label: usize) -> F {
    let eps = F::from_f64(LOG_EPSILON);
    -(probabilities[label].max(eps)).ln()
}

/// A meme encoded and ready for the fusion model.
pub struct EncodedInstance<F: Scalar> {
    pub id: String,
    pub label: usize,
    pub bundle: FeatureBundle<F>,
}

/// Instantiate the encoder backend named by the config.
pub fn build_backend<F: Scalar>(
    cfg: &RunConfig,
) -> Result<Box<dyn EncoderBackend<F>>, TrainError> {
    match cfg.encoder.variant {
        EncoderVariant::Toy => Ok(Box::new(ToyEncoder::new(
            cfg.encoder.seed,
            cfg.encoder.dim,
            cfg.encoder.patches,
        ))),
        EncoderVariant::Pretrained => {
            let dir = cfg
                .encoder
                .archive
                .as_ref()
                .ok_or_else(|| TrainError::Config("pretrained encoder needs an archive".into()))?;
            let archive = FeatureArchive::open(dir)?;
            for (declared, found, which) in [
                (&cfg.encoder.vision_id, &archive.meta.vision_id, "vision_id"),
                (&cfg.encoder.text_id, &archive.meta.text_id, "text_id"),
            ] {
                if let Some(declared) = declared {
                    if declared != found {
                        return Err(TrainError::Config(format!(
                            "config encoder.{which} `{declared}` does not match archive `{found}`"
                        )));
                    }
                }
            }
            Ok(Box::new(archive))
        }
    }
}

/// Apply the config's language filter to a split view.
pub fn filter_language<'a>(
    instances: Vec<&'a MemeInstance>,
    language: &Option<String>,
) -> Vec<&'a MemeInstance> {
    match language {
        None => instances,
        Some(lang) => instances
            .into_iter()
            .filter(|m| m.language.as_deref() == Some(lang.as_str()))
            .collect(),
    }
}

/// All (meme, step) pairs the cache lacks for these instances.
pub fn coverage_gaps(
    instances: &[&MemeInstance],
    cache: &EnhancementCache,
    steps: &[EnhancementStep],
) -> Vec<(String, EnhancementStep)> {
    let mut gaps = Vec::new();
    for meme in instances {
        for &step in steps {
            if cache.get(&meme.id, step).is_none() {
                gaps.push((meme.id.clone(), step));
            }
        }
    }
    gaps
}

/// Encode a set of instances into feature bundles (preflighting cache
/// coverage first).
pub fn encode_instances<F: Scalar>(
    backend: &dyn EncoderBackend<F>,
    manifest: &DatasetManifest,
    instances: &[&MemeInstance],
    cache: &EnhancementCache,
    cfg: &RunConfig,
) -> Result<Vec<EncodedInstance<F>>, TrainError> {
    let gaps = coverage_gaps(instances, cache, &cfg.enhance.steps);
    if !gaps.is_empty() {
        return Err(TrainError::Coverage { gaps });
    }
    let limits = TokenLimits {
        original_text: cfg.encoder.max_text_tokens,
        enhanced_text: cfg.encoder.max_enhanced_tokens,
    };
    let mut encoded = Vec::with_capacity(instances.len());
    for meme in instances {
        let image = load_rgb(manifest, meme)?;
        let record = EnhancementRecord::from_cache(cache, &meme.id, &cfg.enhance.steps)?;
        let bundle = encode_bundle(
            backend,
            &image,
            &meme.text,
            &record,
            &cfg.enhance.steps,
            limits,
        )?;
        encoded.push(EncodedInstance {
            id: meme.id.clone(),
            label: meme.label,
            bundle,
        });
    }
    Ok(encoded)
}

/// One epoch's log line. No wall-clock fields: logs must be bitwise
/// reproducible.
#[derive(Debug, Clone, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub val_macro_f1: f64,
}

#[derive(Debug)]
pub struct TrainOutcome<F: Scalar> {
    /// Snapshot with the best validation macro-F1.
    pub model: FusionModel<F>,
    pub best_epoch: usize,
    pub best_val_macro_f1: f64,
    pub epoch_logs: Vec<EpochLog>,
}

/// Build the fusion model described by the config for `classes` classes.
pub fn build_model<F: Scalar>(
    cfg: &RunConfig,
    backend: &dyn EncoderBackend<F>,
    classes: usize,
    seed: u64,
) -> Result<FusionModel<F>, TrainError> {
    let d = backend.dim();
    let dims = FusionDims {
        d,
        d_v: backend.vision_dim(),
        d_k: cfg.effective_d_k(d),
        heads: cfg.fusion.heads,
        classes,
    };
    Ok(FusionModel::new(
        cfg.fusion.variant,
        cfg.fusion.no_dualstage_keep_stage1,
        dims,
        seed,
    )?)
}

/// Train one seed: seeded init and shuffling, AdamW updates, per-epoch
/// train/val metrics, best-validation-macro-F1 snapshot, optional early
/// stop.
pub fn train_single_seed<F: Scalar>(
    cfg: &RunConfig,
    manifest: &DatasetManifest,
    cache: &EnhancementCache,
    seed: u64,
) -> Result<TrainOutcome<F>, TrainError> {
    let backend = build_backend::<F>(cfg)?;
    let train_set = filter_language(split_view(manifest, Split::Train), &cfg.language);
    let val_set = filter_language(split_view(manifest, Split::Val), &cfg.language);
    if train_set.is_empty() {
        return Err(TrainError::EmptySplit(Split::Train));
    }
    if val_set.is_empty() {
        return Err(TrainError::EmptySplit(Split::Val));
    }
    let train_enc = encode_instances(backend.as_ref(), manifest, &train_set, cache, cfg)?;
    let val_enc = encode_instances(backend.as_ref(), manifest, &val_set, cache, cfg)?;

    let mut model = build_model(cfg, backend.as_ref(), manifest.vocab.size(), seed)?;
    let mut optimizer = AdamW::new(&model.params, cfg.effective_lr(), cfg.train.weight_decay);

    let mut best_model = model.clone();
    let mut best_epoch = 0usize;
    let mut best_val_f1 = f64::NEG_INFINITY;
    let mut epochs_since_best = 0usize;
    let mut epoch_logs = Vec::with_capacity(cfg.train.epochs);

    let mut order: Vec<usize> = (0..train_enc.len()).collect();
    for epoch in 1..=cfg.train.epochs {
        let mut rng = SplitMix64::new(derive_seed(&[seed, epoch as u64, 0x7368_7566]));
        shuffle(&mut rng, &mut order);

        let mut loss_sum = 0.0f64;
        for (batch_idx, batch) in order.chunks(cfg.train.batch_size).enumerate() {
            let mut grads = model.params.zeros_like();
            for &i in batch {
                let sample = &train_enc[i];
                let (_, fwd_cache) = model.forward(&sample.bundle)?;
                let (loss, sample_grads) = model.backward(&fwd_cache, sample.label);
                let loss_f64 = loss.into_f64();
                if !loss_f64.is_finite() {
                    return Err(TrainError::NonFiniteLoss {
                        epoch,
                        batch: batch_idx,
                    });
                }
                loss_sum += loss_f64;
                grads.add_assign(&sample_grads);
            }
            grads.scale(F::from_f64(1.0 / batch.len() as f64));
            optimizer.step(&mut model.params, &grads);
        }
        if !model.params.all_finite() {
            return Err(TrainError::NonFiniteLoss { epoch, batch: 0 });
        }

        let train_metrics = evaluate_model(&model, &train_enc, manifest.vocab.size())?;
        let val_metrics = evaluate_model(&model, &val_enc, manifest.vocab.size())?;
        epoch_logs.push(EpochLog {
            epoch,
            train_loss: loss_sum / train_enc.len() as f64,
            train_accuracy: train_metrics.accuracy,
            val_accuracy: val_metrics.accuracy,
            val_macro_f1: val_metrics.macro_f1,
        });

        if val_metrics.macro_f1 > best_val_f1 {
            best_val_f1 = val_metrics.macro_f1;
            best_epoch = epoch;
            best_model = model.clone();
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if cfg.train.patience > 0 && epochs_since_best >= cfg.train.patience {
                break;
            }
        }
    }

    Ok(TrainOutcome {
        model: best_model,
        best_epoch,
        best_val_macro_f1: best_val_f1,
        epoch_logs,
    })
}

/// Deterministic evaluation of a model over encoded instances.
pub fn evaluate_model<F: Scalar>(
    model: &FusionModel<F>,
    encoded: &[EncodedInstance<F>],
    classes: usize,
) -> Result<EvalMetrics, TrainError> {
    let mut confusion = ConfusionMatrix::new(classes);
    for sample in encoded {
        let (output, _) = model.forward(&sample.bundle)?;
        let pred = argmax(&output.probabilities);
        confusion.record(sample.label, pred)?;
    }
    Ok(EvalMetrics::from_confusion(confusion)?)
}

/// Evaluate a checkpoint on one split of a manifest. The checkpoint's
/// vocabulary must match the manifest's exactly.
pub fn evaluate_checkpoint<F: Scalar>(
    checkpoint: &Checkpoint,
    manifest: &DatasetManifest,
    cache: &EnhancementCache,
    split: Split,
) -> Result<EvalMetrics, TrainError> {
    if checkpoint.vocab != manifest.vocab.names() {
        return Err(TrainError::VocabMismatch {
            checkpoint: checkpoint.vocab.clone(),
            manifest: manifest.vocab.names().to_vec(),
        });
    }
    let cfg = &checkpoint.config;
    let model: FusionModel<F> = checkpoint.to_model()?;
    let backend = build_backend::<F>(cfg)?;
    let instances = filter_language(split_view(manifest, split), &cfg.language);
    if instances.is_empty() {
        return Err(TrainError::EmptySplit(split));
    }
    let encoded = encode_instances(backend.as_ref(), manifest, &instances, cache, cfg)?;
    evaluate_model(&model, &encoded, manifest.vocab.size())
}
