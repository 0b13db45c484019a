//! Command implementations. Every command validates its inputs before any
//! side effect and writes outputs only under its --out directory.

use std::path::Path;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};

use memodetector::config::{EncoderVariant, Precision, RunConfig};
use memodetector::data::{assign_splits, load_manifest, DatasetManifest, Split};
use memodetector::enhance::{
    enhance_all, EchoMllm, EnhanceOptions, EnhancementCache, EnhancementStep, GenerationSettings,
    HttpMllm, MllmClient, RetryPolicy,
};
use memodetector::fusion::checkpoint::Checkpoint;
use memodetector::metrics::EvalMetrics;
use memodetector::report::render_report;
use memodetector::scalar::Scalar;
use memodetector::train::sweep::{
    run_ablations, run_configs, run_variant_comparison, ExperimentRow,
};
use memodetector::train::evaluate_checkpoint;

use crate::{
    ConfigArgs, EnhanceArgs, EvalArgs, ReportArgs, SweepArgs, TrainArgs, ValidateArgs,
};

const OK: ExitCode = ExitCode::SUCCESS;
const FAIL: ExitCode = ExitCode::FAILURE;

fn parse_steps(raw: &[String]) -> Result<Vec<EnhancementStep>> {
    raw.iter()
        .map(|s| s.parse::<EnhancementStep>().map_err(anyhow::Error::msg))
        .collect()
}

fn parse_ratio(raw: &str) -> Result<(u32, u32, u32)> {
    let parts: Vec<&str> = raw.split(':').collect();
    if parts.len() != 3 {
        bail!("split ratio must look like 8:1:1, got `{raw}`");
    }
    let nums: Vec<u32> = parts
        .iter()
        .map(|p| p.parse().context("split ratio parts must be integers"))
        .collect::<Result<_>>()?;
    Ok((nums[0], nums[1], nums[2]))
}

fn load_manifest_tagged(
    path: &Path,
    split_seed: Option<u64>,
    split_ratio: &str,
) -> Result<DatasetManifest> {
    let mut manifest = load_manifest(path)?;
    if let Some(seed) = split_seed {
        let ratio = parse_ratio(split_ratio)?;
        assign_splits(&mut manifest, seed, ratio);
    }
    Ok(manifest)
}

/// Build the run config: file (or defaults), then flag overrides.
fn resolve_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::from_path(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seeds) = &args.seeds {
        cfg.seeds = seeds.clone();
    }
    if let Some(seed) = args.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(precision) = &args.precision {
        cfg.precision = match precision.as_str() {
            "f32" => Precision::F32,
            "f64" => Precision::F64,
            other => bail!("unknown precision `{other}` (expected f32|f64)"),
        };
    }
    if let Some(language) = &args.language {
        cfg.language = Some(language.clone());
    }
    if let Some(encoder) = &args.encoder {
        cfg.encoder.variant = match encoder.as_str() {
            "toy" => EncoderVariant::Toy,
            "pretrained" => EncoderVariant::Pretrained,
            other => bail!("unknown encoder `{other}` (expected toy|pretrained)"),
        };
    }
    if let Some(archive) = &args.archive {
        cfg.encoder.archive = Some(archive.clone());
    }
    if let Some(steps) = &args.steps {
        cfg.enhance.steps = parse_steps(steps)?;
    }
    if let Some(variant) = &args.variant {
        cfg.fusion.variant = variant.parse().map_err(anyhow::Error::msg)?;
    }
    if let Some(epochs) = args.epochs {
        cfg.train.epochs = epochs;
    }
    if let Some(batch_size) = args.batch_size {
        cfg.train.batch_size = batch_size;
    }
    if let Some(lr) = args.lr {
        cfg.train.lr = Some(lr);
    }
    if let Some(patience) = args.patience {
        cfg.train.patience = patience;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn enhance(args: EnhanceArgs) -> Result<ExitCode> {
    let steps = parse_steps(&args.steps)?;
    let mut manifest = load_manifest(&args.manifest)?;
    if let Some(language) = &args.language {
        manifest
            .instances
            .retain(|m| m.language.as_deref() == Some(language.as_str()));
    }

    let settings = GenerationSettings {
        model_id: args
            .model
            .clone()
            .unwrap_or_else(|| "mock-echo".to_string()),
        temperature: args.temperature,
        max_tokens: args.max_tokens,
    };
    let retry = RetryPolicy {
        attempts: args.retry_attempts,
        base_delay: Duration::from_millis(args.retry_base_ms),
    };
    let client = if args.mock {
        MllmClient::new(Box::new(EchoMllm), settings, retry)
    } else {
        let endpoint = args.endpoint.as_deref().expect("clap requires endpoint");
        let api = HttpMllm::new(endpoint, settings.clone(), Duration::from_secs(args.timeout_secs))?;
        MllmClient::new(Box::new(api), settings, retry)
    };

    let options = EnhanceOptions {
        steps,
        workers: args.workers,
    };
    let summary = enhance_all(&client, &manifest, &args.cache, &options)?;
    println!("enhancement summary: {summary}");
    if summary.failures > 0 {
        println!("failed pairs:");
        for (meme_id, step) in &summary.failed {
            println!("  {meme_id}\t{step}");
        }
        return Ok(FAIL);
    }
    Ok(OK)
}

fn print_rows(rows: &[ExperimentRow]) {
    println!(
        "{:<22} {:>9} {:>19} {:>19} {:>19} {:>19}",
        "config", "params", "accuracy", "precision", "recall", "macro-F1"
    );
    for row in rows {
        let m = row.report.means();
        let s = row.report.stds();
        println!(
            "{:<22} {:>9} {:>12.4}±{:.4} {:>12.4}±{:.4} {:>12.4}±{:.4} {:>12.4}±{:.4}",
            row.name, row.param_count, m[0], s[0], m[1], s[1], m[2], s[2], m[3], s[3]
        );
    }
}

fn write_config_echo(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    let echo = serde_json::to_string_pretty(cfg)?;
    std::fs::write(cfg.out_dir.join("config.json"), echo)?;
    Ok(())
}

enum Sweep {
    Single,
    Ablations,
    Variants,
}

fn run_sweep_with<F: Scalar>(
    sweep: Sweep,
    cfg: &RunConfig,
    manifest: &DatasetManifest,
    cache: &EnhancementCache,
) -> Result<Vec<ExperimentRow>> {
    let out = cfg.out_dir.clone();
    let rows = match sweep {
        Sweep::Single => {
            let name = cfg.fusion.variant.as_str().to_string();
            run_configs::<F>(&[(name, cfg.clone())], manifest, cache, &out)?
        }
        Sweep::Ablations => run_ablations::<F>(cfg, manifest, cache, &out)?,
        Sweep::Variants => run_variant_comparison::<F>(cfg, manifest, cache, &out)?,
    };
    Ok(rows)
}

fn run_sweep(
    sweep: Sweep,
    manifest_path: &Path,
    cache_path: &Path,
    config_args: &ConfigArgs,
) -> Result<ExitCode> {
    let mut cfg = resolve_config(config_args)?;
    let manifest = load_manifest_tagged(
        manifest_path,
        config_args.split_seed,
        &config_args.split_ratio,
    )?;
    cfg.dataset = manifest.name.clone();
    let cache = EnhancementCache::load(cache_path)?;
    write_config_echo(&cfg)?;

    let rows = match cfg.precision {
        Precision::F32 => run_sweep_with::<f32>(sweep, &cfg, &manifest, &cache)?,
        Precision::F64 => run_sweep_with::<f64>(sweep, &cfg, &manifest, &cache)?,
    };
    print_rows(&rows);
    println!("outputs under {}", cfg.out_dir.display());
    Ok(OK)
}

pub fn train(args: TrainArgs) -> Result<ExitCode> {
    run_sweep(Sweep::Single, &args.manifest, &args.cache, &args.config)
}

pub fn ablate(args: SweepArgs) -> Result<ExitCode> {
    run_sweep(Sweep::Ablations, &args.manifest, &args.cache, &args.config)
}

pub fn compare(args: SweepArgs) -> Result<ExitCode> {
    run_sweep(Sweep::Variants, &args.manifest, &args.cache, &args.config)
}

fn print_metrics(metrics: &EvalMetrics, vocab: &[String]) {
    println!("accuracy        {:.4}", metrics.accuracy);
    println!("macro precision {:.4}", metrics.macro_precision);
    println!("macro recall    {:.4}", metrics.macro_recall);
    println!("macro F1        {:.4}", metrics.macro_f1);
    println!("{:<14} {:>9} {:>9} {:>9}", "class", "precision", "recall", "f1");
    for (name, m) in vocab.iter().zip(&metrics.per_class) {
        println!(
            "{:<14} {:>9.4} {:>9.4} {:>9.4}",
            name, m.precision, m.recall, m.f1
        );
    }
}

pub fn eval(args: EvalArgs) -> Result<ExitCode> {
    let split: Split = args.split.parse().map_err(anyhow::Error::msg)?;
    let checkpoint = Checkpoint::load(&args.checkpoint)?;
    let manifest = load_manifest_tagged(&args.manifest, args.split_seed, &args.split_ratio)?;
    let cache = EnhancementCache::load(&args.cache)?;

    let metrics = match checkpoint.config.precision {
        Precision::F32 => evaluate_checkpoint::<f32>(&checkpoint, &manifest, &cache, split)?,
        Precision::F64 => evaluate_checkpoint::<f64>(&checkpoint, &manifest, &cache, split)?,
    };
    println!("split {split} over {} instances", metrics.confusion.total());
    print_metrics(&metrics, manifest.vocab.names());

    if let Some(out) = &args.out {
        std::fs::create_dir_all(out)?;
        let path = out.join("eval_metrics.csv");
        let mut writer = csv_writer(&path)?;
        writer
            .write_record(["metric", "value"])
            .map_err(io_err)?;
        for (name, value) in [
            ("accuracy", metrics.accuracy),
            ("macro_precision", metrics.macro_precision),
            ("macro_recall", metrics.macro_recall),
            ("macro_f1", metrics.macro_f1),
        ] {
            writer
                .write_record([name.to_string(), format!("{value}")])
                .map_err(io_err)?;
        }
        writer.flush()?;
        println!("wrote {}", path.display());
    }
    Ok(OK)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}

fn io_err(e: csv::Error) -> anyhow::Error {
    anyhow::anyhow!("csv: {e}")
}

pub fn report(args: ReportArgs) -> Result<ExitCode> {
    let outcome = render_report(&args.inputs, &args.out)?;
    println!(
        "consolidated {} config rows into {}",
        outcome.row_count,
        outcome.consolidated_csv.display()
    );
    for chart in &outcome.charts {
        println!("chart: {}", chart.display());
    }
    for notice in &outcome.notices {
        println!("notice: {notice}");
    }
    Ok(OK)
}

pub fn validate(args: ValidateArgs) -> Result<ExitCode> {
    let steps = parse_steps(&args.steps)?;
    let mut failed = false;

    let manifest = match load_manifest(&args.manifest) {
        Ok(manifest) => {
            println!(
                "manifest ok: {} instances, {} labels",
                manifest.instances.len(),
                manifest.vocab.size()
            );
            Some(manifest)
        }
        Err(error) => {
            println!("manifest INVALID: {error}");
            failed = true;
            None
        }
    };

    if let Some(config_path) = &args.config {
        match RunConfig::from_path(config_path) {
            Ok(_) => println!("config ok: {}", config_path.display()),
            Err(error) => {
                println!("config INVALID: {error}");
                failed = true;
            }
        }
    }

    if let (Some(manifest), Some(cache_path)) = (&manifest, &args.cache) {
        let cache = EnhancementCache::load(cache_path)?;
        let total = manifest.instances.len() * steps.len();
        let mut covered = 0usize;
        let mut missing: Vec<(String, EnhancementStep)> = Vec::new();

        let headers: Vec<String> = steps.iter().map(|s| s.to_string()).collect();
        println!("{:<18} {}", "meme", headers.join("  "));
        for meme in &manifest.instances {
            let mut cells = Vec::new();
            for &step in &steps {
                if cache.get(&meme.id, step).is_some() {
                    covered += 1;
                    cells.push("ok".to_string());
                } else {
                    missing.push((meme.id.clone(), step));
                    cells.push("--".to_string());
                }
            }
            println!("{:<18} {}", meme.id, cells.join("  "));
        }
        let percent = if total == 0 {
            100.0
        } else {
            100.0 * covered as f64 / total as f64
        };
        if missing.is_empty() {
            println!("coverage 100% ({covered}/{total})");
        } else {
            println!("coverage {percent:.1}% ({covered}/{total})");
            println!("missing pairs:");
            for (meme_id, step) in &missing {
                println!("  {meme_id}\t{step}");
            }
            failed = true;
        }
    }

    Ok(if failed { FAIL } else { OK })
}
