//! Four-step textual enhancement against a multimodal-LLM endpoint.
//!
//! Each meme is enriched by a progressive prompt chain: image description
//! (ID), text meaning (TM), combined implicit meaning (CIM), context
//! analysis (CA). A single-step DIRECT variant is used only in
//! comparison runs. Results land in an append-only JSONL cache keyed by
//! (meme_id, step); reruns with identical provenance make zero endpoint
//! calls.

pub mod cache;
pub mod client;
pub mod prompts;

use std::collections::BTreeMap;
use std::collections::VecDeque;
use std::path::Path;
use std::sync::{mpsc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::MemeInstance;

pub use cache::{CacheLine, CacheWriter, EnhancementCache};
pub use client::{
    EchoMllm, FnMllm, GenerationSettings, HttpMllm, MllmApi, MllmClient, MllmRequest,
    RecordingMllm, RetryPolicy,
};
pub use prompts::build_prompt;

#[derive(Debug, Error)]
pub enum EnhanceError {
    #[error("endpoint error after {attempts} attempt(s): {message}")]
    Endpoint { attempts: u32, message: String },
    #[error("generation error: {0}")]
    Generation(String),
    #[error("image preprocessing error: {0}")]
    Preprocess(String),
    #[error("cache {path}: {message}")]
    Cache { path: String, message: String },
    #[error("invalid step set: {0}")]
    Steps(String),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
}

/// One link of the enhancement chain, or the single-step variant.
///
/// Ordering follows the chain: ID → TM → CIM → CA.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum EnhancementStep {
    #[serde(rename = "ID")]
    Id,
    #[serde(rename = "TM")]
    Tm,
    #[serde(rename = "CIM")]
    Cim,
    #[serde(rename = "CA")]
    Ca,
    #[serde(rename = "DIRECT")]
    Direct,
}

impl EnhancementStep {
    /// The four-step chain in execution order.
    pub const CHAIN: [EnhancementStep; 4] = [
        EnhancementStep::Id,
        EnhancementStep::Tm,
        EnhancementStep::Cim,
        EnhancementStep::Ca,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EnhancementStep::Id => "ID",
            EnhancementStep::Tm => "TM",
            EnhancementStep::Cim => "CIM",
            EnhancementStep::Ca => "CA",
            EnhancementStep::Direct => "DIRECT",
        }
    }

    /// Whether the request carries the meme image as message content.
    pub fn attaches_image(self) -> bool {
        !matches!(self, EnhancementStep::Tm)
    }

    /// Whether the request carries the meme text as message content
    /// (TM interpolates it into the prompt instead).
    pub fn attaches_text(self) -> bool {
        matches!(
            self,
            EnhancementStep::Cim | EnhancementStep::Ca | EnhancementStep::Direct
        )
    }
}

impl std::fmt::Display for EnhancementStep {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for EnhancementStep {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "ID" => Ok(EnhancementStep::Id),
            "TM" => Ok(EnhancementStep::Tm),
            "CIM" => Ok(EnhancementStep::Cim),
            "CA" => Ok(EnhancementStep::Ca),
            "DIRECT" => Ok(EnhancementStep::Direct),
            other => Err(format!("unknown enhancement step `{other}`")),
        }
    }
}

/// Validate a requested step set: a non-empty subset of the chain, or
/// exactly {DIRECT}. DIRECT never mixes with chain steps.
pub fn validate_steps(steps: &[EnhancementStep]) -> Result<Vec<EnhancementStep>, EnhanceError> {
    if steps.is_empty() {
        return Err(EnhanceError::Steps("no steps requested".into()));
    }
    let mut sorted: Vec<_> = steps.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let has_direct = sorted.contains(&EnhancementStep::Direct);
    if has_direct && sorted.len() > 1 {
        return Err(EnhanceError::Steps(
            "DIRECT cannot be mixed with chain steps".into(),
        ));
    }
    Ok(sorted)
}

/// The enhanced texts for one meme, with generation provenance.
#[derive(Debug, Clone)]
pub struct EnhancementRecord {
    pub meme_id: String,
    pub texts: BTreeMap<EnhancementStep, String>,
    pub model_id: String,
    pub prompt_hashes: BTreeMap<EnhancementStep, String>,
    pub temperature: f64,
    /// Known at generation time; the on-disk cache schema does not carry
    /// it, so records rebuilt from the cache hold `None`.
    pub max_tokens: Option<u32>,
}

impl EnhancementRecord {
    /// Assemble a record for `meme` from the cache. Every requested step
    /// must be present.
    pub fn from_cache(
        cache: &EnhancementCache,
        meme_id: &str,
        steps: &[EnhancementStep],
    ) -> Result<Self, EnhanceError> {
        let mut texts = BTreeMap::new();
        let mut hashes = BTreeMap::new();
        let mut model_id = String::new();
        let mut temperature = 0.0;
        for &step in steps {
            let line = cache.get(meme_id, step).ok_or_else(|| {
                EnhanceError::Generation(format!(
                    "cache has no {step} entry for meme `{meme_id}`"
                ))
            })?;
            texts.insert(step, line.text.clone());
            hashes.insert(step, line.prompt_hash.clone());
            model_id = line.model_id.clone();
            temperature = line.temperature;
        }
        Ok(Self {
            meme_id: meme_id.to_string(),
            texts,
            model_id,
            prompt_hashes: hashes,
            temperature,
            max_tokens: None,
        })
    }

    /// True when the record holds exactly the four chain steps, all
    /// non-empty.
    pub fn is_complete_chain(&self) -> bool {
        self.texts.len() == 4
            && EnhancementStep::CHAIN
                .iter()
                .all(|s| self.texts.get(s).is_some_and(|t| !t.is_empty()))
    }
}

/// Deterministic fingerprint of (step template, interpolated meme text).
pub fn prompt_hash(step: EnhancementStep, meme_text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(step.name().as_bytes());
    hasher.update([0u8]);
    hasher.update(build_prompt(step, meme_text).as_bytes());
    hasher.update([0u8]);
    if step.attaches_text() {
        hasher.update(meme_text.as_bytes());
    }
    hex::encode(hasher.finalize())
}

/// Build the endpoint request for one (meme, step) pair, attaching exactly
/// the modalities the step consumes.
pub fn build_request(
    manifest: &crate::data::DatasetManifest,
    meme: &MemeInstance,
    step: EnhancementStep,
) -> Result<MllmRequest, EnhanceError> {
    let image = if step.attaches_image() {
        let bytes = crate::data::image_bytes(manifest, meme)?;
        // fail fast on undecodable images before spending endpoint calls
        image::load_from_memory(&bytes).map_err(|e| {
            EnhanceError::Preprocess(format!("meme `{}`: undecodable image: {e}", meme.id))
        })?;
        Some(bytes)
    } else {
        None
    };
    let meme_text = step.attaches_text().then(|| meme.text.clone());
    Ok(MllmRequest {
        prompt: build_prompt(step, &meme.text),
        image,
        meme_text,
    })
}

/// Run one enhancement step for one meme. The response is stripped of
/// surrounding whitespace and guaranteed non-empty.
pub fn enhance_step(
    client: &MllmClient,
    manifest: &crate::data::DatasetManifest,
    meme: &MemeInstance,
    step: EnhancementStep,
) -> Result<String, EnhanceError> {
    let request = build_request(manifest, meme, step)?;
    client.generate(&request)
}

/// The single-step comparison variant.
pub fn enhance_direct(
    client: &MllmClient,
    manifest: &crate::data::DatasetManifest,
    meme: &MemeInstance,
) -> Result<String, EnhanceError> {
    enhance_step(client, manifest, meme, EnhancementStep::Direct)
}

/// Outcome of an [`enhance_all`] run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheSummary {
    /// (meme, step) pairs already cached with matching provenance.
    pub hits: usize,
    /// Pairs generated and cached by this run.
    pub misses: usize,
    /// Pairs that failed; the run continues past them.
    pub failures: usize,
    pub failed: Vec<(String, EnhancementStep)>,
}

impl std::fmt::Display for CacheSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "hits={} misses={} failures={}",
            self.hits, self.misses, self.failures
        )
    }
}

/// Options for [`enhance_all`].
#[derive(Debug, Clone)]
pub struct EnhanceOptions {
    pub steps: Vec<EnhancementStep>,
    pub workers: usize,
}

impl Default for EnhanceOptions {
    fn default() -> Self {
        Self {
            steps: EnhancementStep::CHAIN.to_vec(),
            workers: 4,
        }
    }
}

struct MemeJob<'a> {
    index: usize,
    meme: &'a MemeInstance,
    steps: Vec<EnhancementStep>,
}

enum WorkerMsg {
    Generated {
        index: usize,
        step: EnhancementStep,
        line: CacheLine,
    },
    Failed {
        index: usize,
        step: EnhancementStep,
        message: String,
    },
}

/// Ensure a cache entry exists for every (meme, requested step) pair.
///
/// Memes are processed with bounded parallelism; the steps of one meme run
/// sequentially in chain order. All results funnel through a single cache
/// appender. Partial failures are collected, not fatal.
pub fn enhance_all(
    client: &MllmClient,
    manifest: &crate::data::DatasetManifest,
    cache_path: &Path,
    options: &EnhanceOptions,
) -> Result<CacheSummary, EnhanceError> {
    let steps = validate_steps(&options.steps)?;
    let cache = EnhancementCache::load(cache_path)?;
    let mut writer = CacheWriter::append_to(cache_path)?;

    let mut hits = 0usize;
    let mut jobs: VecDeque<MemeJob> = VecDeque::new();
    for (index, meme) in manifest.instances.iter().enumerate() {
        let mut missing = Vec::new();
        for &step in &steps {
            let hash = prompt_hash(step, &meme.text);
            if cache
                .get_matching(&meme.id, step, &client.settings.model_id, &hash)
                .is_some()
            {
                hits += 1;
            } else {
                missing.push(step);
            }
        }
        if !missing.is_empty() {
            jobs.push_back(MemeJob {
                index,
                meme,
                steps: missing,
            });
        }
    }

    let mut outcomes: Vec<(usize, EnhancementStep, Result<(), String>)> = Vec::new();
    if !jobs.is_empty() {
        let workers = options.workers.max(1).min(jobs.len());
        let queue = Mutex::new(jobs);
        let (tx, rx) = mpsc::channel::<WorkerMsg>();

        std::thread::scope(|scope| {
            for _ in 0..workers {
                let tx = tx.clone();
                let queue = &queue;
                scope.spawn(move || loop {
                    let job = match queue.lock().unwrap().pop_front() {
                        Some(job) => job,
                        None => break,
                    };
                    for step in job.steps {
                        let msg = match enhance_step(client, manifest, job.meme, step) {
                            Ok(text) => WorkerMsg::Generated {
                                index: job.index,
                                step,
                                line: CacheLine {
                                    meme_id: job.meme.id.clone(),
                                    step,
                                    model_id: client.settings.model_id.clone(),
                                    prompt_hash: prompt_hash(step, &job.meme.text),
                                    temperature: client.settings.temperature,
                                    text,
                                    ts: chrono::Utc::now().to_rfc3339(),
                                },
                            },
                            Err(e) => WorkerMsg::Failed {
                                index: job.index,
                                step,
                                message: e.to_string(),
                            },
                        };
                        if tx.send(msg).is_err() {
                            return;
                        }
                    }
                });
            }
            drop(tx);
            // single writer: append results as they arrive
            for msg in rx.iter() {
                match msg {
                    WorkerMsg::Generated { index, step, line } => {
                        writer.append(&line)?;
                        outcomes.push((index, step, Ok(())));
                    }
                    WorkerMsg::Failed {
                        index,
                        step,
                        message,
                    } => {
                        log::warn!("enhance failed for meme #{index} step {step}: {message}");
                        outcomes.push((index, step, Err(message)));
                    }
                }
            }
            Ok::<(), EnhanceError>(())
        })?;
    }

    outcomes.sort_by_key(|(index, step, _)| (*index, *step));
    let misses = outcomes.iter().filter(|(_, _, r)| r.is_ok()).count();
    let failed: Vec<(String, EnhancementStep)> = outcomes
        .iter()
        .filter(|(_, _, r)| r.is_err())
        .map(|(index, step, _)| (manifest.instances[*index].id.clone(), *step))
        .collect();
    Ok(CacheSummary {
        hits,
        misses,
        failures: failed.len(),
        failed,
    })
}
