//! Meme emotion understanding pipeline.
//!
//! The crate has three layers:
//!
//! * data + enhancement: JSONL dataset manifests ([`data`]), and a four-step
//!   MLLM prompting chain with a persistent idempotent cache ([`enhance`]).
//! * features + model: pluggable encoders producing per-meme feature bundles
//!   ([`encode`]), and the dual-stage fusion network with bidirectional
//!   cross-attention, pooling and a softmax classifier ([`fusion`]).
//! * harness: training/evaluation with multi-seed averaging ([`train`]),
//!   classification metrics ([`metrics`]), ablation/variant sweeps and
//!   report rendering ([`report`]).
//!
//! All numeric code is generic over the scalar type via [`Scalar`]
//! (implemented for `f32` and `f64`); concrete aliases live at the crate
//! root.

pub mod config;
pub mod data;
pub mod encode;
pub mod enhance;
pub mod fusion;
pub mod metrics;
pub mod report;
pub mod rng;
pub mod scalar;
pub mod synth;
pub mod train;

pub use config::RunConfig;
pub use data::{DatasetManifest, LabelVocab, MemeInstance, Split};
pub use encode::{EncoderBackend, FeatureBundle, FeatureSequence};
pub use enhance::{EnhancementRecord, EnhancementStep};
pub use fusion::{FusionModel, FusionOutput, FusionVariant};
pub use metrics::{ConfusionMatrix, EvalMetrics, MetricsReport};
pub use scalar::Scalar;

/// Default scalar for training runs; oracle and gradient tests always use f64.
pub type DefaultScalar = f64;

pub type FusionModel32 = fusion::FusionModel<f32>;
pub type FusionModel64 = fusion::FusionModel<f64>;
pub type FeatureSequence32 = encode::FeatureSequence<f32>;
pub type FeatureSequence64 = encode::FeatureSequence<f64>;
