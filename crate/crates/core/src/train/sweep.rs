//! Experiment runner: named config sweeps over the seed list, with the
//! ablation table and the fusion/enhancement variant comparisons.
//!
//! Output layout under the experiment directory:
//!
//! ```text
//! out/
//!   run.json                      experiment summary (dataset, vocab, rows)
//!   metrics.csv                   one row per config × seed + mean/std rows
//!   confusion_matrix.csv          per config × seed confusion counts
//!   ablation_table.csv            (run_ablations)
//!   fusion_variants.csv           (run_variant_comparison)
//!   enhancement_variants.csv      (run_variant_comparison)
//!   <config>/seed_<s>/epoch_log.jsonl
//!   <config>/seed_<s>/checkpoint.json
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{split_view, DatasetManifest, Split};
use crate::enhance::{EnhancementCache, EnhancementStep};
use crate::fusion::checkpoint::Checkpoint;
use crate::fusion::FusionVariant;
use crate::metrics::MetricsReport;
use crate::scalar::Scalar;

use super::{
    encode_instances, evaluate_model, filter_language, train_single_seed, TrainError,
};

/// One named configuration's aggregated results.
pub struct ExperimentRow {
    pub name: String,
    pub config: RunConfig,
    pub param_count: usize,
    pub report: MetricsReport,
}

/// Summary persisted as run.json; the report command consumes these.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub dataset: String,
    pub vocab: Vec<String>,
    pub rows: Vec<RunSummaryRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummaryRow {
    pub name: String,
    pub variant: String,
    pub steps: Vec<String>,
    pub params: usize,
    pub seeds: Vec<u64>,
    /// [accuracy, precision, recall, macro_f1]
    pub mean: [f64; 4],
    pub std: [f64; 4],
}

/// Train and evaluate every (name, config) over the config's seed list,
/// writing checkpoints, epoch logs, metrics.csv, confusion_matrix.csv and
/// run.json under `out_dir`.
pub fn run_configs<F: Scalar>(
    configs: &[(String, RunConfig)],
    manifest: &DatasetManifest,
    cache: &EnhancementCache,
    out_dir: &Path,
) -> Result<Vec<ExperimentRow>, TrainError> {
    fs::create_dir_all(out_dir).map_err(|e| TrainError::Io(e.to_string()))?;
    let mut rows = Vec::with_capacity(configs.len());
    for (name, cfg) in configs {
        let mut per_seed = Vec::with_capacity(cfg.seeds.len());
        let mut param_count = 0usize;
        for &seed in &cfg.seeds {
            let outcome = train_single_seed::<F>(cfg, manifest, cache, seed)?;
            param_count = outcome.model.param_count();

            let seed_dir = out_dir.join(name).join(format!("seed_{seed}"));
            fs::create_dir_all(&seed_dir).map_err(|e| TrainError::Io(e.to_string()))?;
            write_epoch_log(&seed_dir.join("epoch_log.jsonl"), &outcome.epoch_logs)?;
            Checkpoint::from_model(&outcome.model, cfg, &manifest.vocab)
                .save(seed_dir.join("checkpoint.json"))?;

            let backend = super::build_backend::<F>(cfg)?;
            let test_set = filter_language(split_view(manifest, Split::Test), &cfg.language);
            if test_set.is_empty() {
                return Err(TrainError::EmptySplit(Split::Test));
            }
            let encoded = encode_instances(backend.as_ref(), manifest, &test_set, cache, cfg)?;
            let metrics = evaluate_model(&outcome.model, &encoded, manifest.vocab.size())?;
            per_seed.push((seed, metrics));
        }
        let report = MetricsReport::aggregate(per_seed)?;
        rows.push(ExperimentRow {
            name: name.clone(),
            config: cfg.clone(),
            param_count,
            report,
        });
    }

    write_metrics_csv(&out_dir.join("metrics.csv"), &rows)?;
    write_confusion_csv(&out_dir.join("confusion_matrix.csv"), &rows)?;
    write_run_summary(&out_dir.join("run.json"), manifest, &rows)?;
    Ok(rows)
}

/// The six Table-2-shaped configurations: the full model plus the five
/// ablations (dual-stage fusion replaced by plain concatenation; each
/// enhancement step removed in turn).
pub fn ablation_configs(base: &RunConfig) -> Vec<(String, RunConfig)> {
    let mut configs = vec![("full".to_string(), base.clone())];

    let mut wo_df = base.clone();
    wo_df.fusion.variant = FusionVariant::NoDualstage;
    configs.push(("wo_DF".to_string(), wo_df));

    for step in EnhancementStep::CHAIN {
        let mut cfg = base.clone();
        cfg.enhance.steps = base
            .enhance
            .steps
            .iter()
            .copied()
            .filter(|s| *s != step)
            .collect();
        configs.push((format!("wo_{step}"), cfg));
    }
    configs
}

/// The four second-stage fusion strategies compared head to head.
pub fn fusion_variant_configs(base: &RunConfig) -> Vec<(String, RunConfig)> {
    [
        FusionVariant::BidirectionalXattn,
        FusionVariant::Add,
        FusionVariant::Concat,
        FusionVariant::OnewayXattn,
    ]
    .into_iter()
    .map(|variant| {
        let mut cfg = base.clone();
        cfg.fusion.variant = variant;
        (variant.as_str().to_string(), cfg)
    })
    .collect()
}

/// Four-step chain vs single-step direct enhancement.
pub fn enhancement_variant_configs(base: &RunConfig) -> Vec<(String, RunConfig)> {
    let mut four_step = base.clone();
    four_step.enhance.steps = EnhancementStep::CHAIN.to_vec();
    let mut direct = base.clone();
    direct.enhance.steps = vec![EnhancementStep::Direct];
    vec![
        ("four_step".to_string(), four_step),
        ("direct".to_string(), direct),
    ]
}

/// Run the six-row ablation study and emit ablation_table.csv.
pub fn run_ablations<F: Scalar>(
    base: &RunConfig,
    manifest: &DatasetManifest,
    cache: &EnhancementCache,
    out_dir: &Path,
) -> Result<Vec<ExperimentRow>, TrainError> {
    let configs = ablation_configs(base);
    let rows = run_configs::<F>(&configs, manifest, cache, out_dir)?;
    write_table_csv(&out_dir.join("ablation_table.csv"), &rows, false)?;
    Ok(rows)
}

/// Run the fusion-strategy and enhancement-strategy comparisons, emitting
/// fusion_variants.csv and enhancement_variants.csv.
pub fn run_variant_comparison<F: Scalar>(
    base: &RunConfig,
    manifest: &DatasetManifest,
    cache: &EnhancementCache,
    out_dir: &Path,
) -> Result<Vec<ExperimentRow>, TrainError> {
    let mut configs = fusion_variant_configs(base);
    let n_fusion = configs.len();
    configs.extend(enhancement_variant_configs(base));
    let rows = run_configs::<F>(&configs, manifest, cache, out_dir)?;
    write_table_csv(&out_dir.join("fusion_variants.csv"), &rows[..n_fusion], true)?;
    write_table_csv(&out_dir.join("enhancement_variants.csv"), &rows[n_fusion..], true)?;
    Ok(rows)
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn write_epoch_log(path: &Path, logs: &[super::EpochLog]) -> Result<(), TrainError> {
    let mut file = fs::File::create(path).map_err(|e| TrainError::Io(e.to_string()))?;
    for log in logs {
        let line = serde_json::to_string(log).expect("epoch log serializes");
        writeln!(file, "{line}").map_err(|e| TrainError::Io(e.to_string()))?;
    }
    Ok(())
}

/// metrics.csv: one row per config × seed plus mean/std aggregate rows.
fn write_metrics_csv(path: &Path, rows: &[ExperimentRow]) -> Result<(), TrainError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| TrainError::Io(e.to_string()))?;
    writer
        .write_record([
            "config",
            "seed",
            "accuracy",
            "precision",
            "recall",
            "macro_f1",
        ])
        .map_err(|e| TrainError::Io(e.to_string()))?;
    for row in rows {
        for (seed, metrics) in &row.report.per_seed {
            let h = metrics.headline();
            writer
                .write_record([
                    row.name.clone(),
                    seed.to_string(),
                    fmt(h[0]),
                    fmt(h[1]),
                    fmt(h[2]),
                    fmt(h[3]),
                ])
                .map_err(|e| TrainError::Io(e.to_string()))?;
        }
        for (tag, values) in [("mean", row.report.means()), ("std", row.report.stds())] {
            writer
                .write_record([
                    row.name.clone(),
                    tag.to_string(),
                    fmt(values[0]),
                    fmt(values[1]),
                    fmt(values[2]),
                    fmt(values[3]),
                ])
                .map_err(|e| TrainError::Io(e.to_string()))?;
        }
    }
    writer.flush().map_err(|e| TrainError::Io(e.to_string()))
}

/// Sweep-shaped table: one row per config, four mean columns + four std
/// columns, optionally a parameter-count column.
fn write_table_csv(
    path: &Path,
    rows: &[ExperimentRow],
    with_params: bool,
) -> Result<(), TrainError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| TrainError::Io(e.to_string()))?;
    let mut header = vec!["config".to_string()];
    if with_params {
        header.push("params".to_string());
    }
    for suffix in ["mean", "std"] {
        for metric in ["accuracy", "precision", "recall", "macro_f1"] {
            header.push(format!("{metric}_{suffix}"));
        }
    }
    writer
        .write_record(&header)
        .map_err(|e| TrainError::Io(e.to_string()))?;
    for row in rows {
        let mut record = vec![row.name.clone()];
        if with_params {
            record.push(row.param_count.to_string());
        }
        record.extend(row.report.means().iter().map(|v| fmt(*v)));
        record.extend(row.report.stds().iter().map(|v| fmt(*v)));
        writer
            .write_record(&record)
            .map_err(|e| TrainError::Io(e.to_string()))?;
    }
    writer.flush().map_err(|e| TrainError::Io(e.to_string()))
}

fn write_confusion_csv(path: &Path, rows: &[ExperimentRow]) -> Result<(), TrainError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| TrainError::Io(e.to_string()))?;
    writer
        .write_record(["config", "seed", "true", "pred", "count"])
        .map_err(|e| TrainError::Io(e.to_string()))?;
    for row in rows {
        for (seed, metrics) in &row.report.per_seed {
            let classes = metrics.confusion.classes();
            for t in 0..classes {
                for p in 0..classes {
                    let count = metrics.confusion.count(t, p);
                    if count > 0 {
                        writer
                            .write_record([
                                row.name.clone(),
                                seed.to_string(),
                                t.to_string(),
                                p.to_string(),
                                count.to_string(),
                            ])
                            .map_err(|e| TrainError::Io(e.to_string()))?;
                    }
                }
            }
        }
    }
    writer.flush().map_err(|e| TrainError::Io(e.to_string()))
}

fn write_run_summary(
    path: &Path,
    manifest: &DatasetManifest,
    rows: &[ExperimentRow],
) -> Result<(), TrainError> {
    let summary = RunSummary {
        dataset: manifest.name.clone(),
        vocab: manifest.vocab.names().to_vec(),
        rows: rows
            .iter()
            .map(|row| RunSummaryRow {
                name: row.name.clone(),
                variant: row.config.fusion.variant.as_str().to_string(),
                steps: row
                    .config
                    .enhance
                    .steps
                    .iter()
                    .map(|s| s.to_string())
                    .collect(),
                params: row.param_count,
                seeds: row.config.seeds.clone(),
                mean: row.report.means(),
                std: row.report.stds(),
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(path, json).map_err(|e| TrainError::Io(e.to_string()))
}
