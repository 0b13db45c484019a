//! Acceptance suite: one test per criterion, each printing a PASS line.
//! The whole suite is hermetic: toy encoders and the mock MLLM only.

#![allow(clippy::needless_range_loop)]

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use memodetector::config::RunConfig;
use memodetector::data::{load_manifest, split_view, RgbData, Split};
use memodetector::encode::{encode_bundle, toy::ToyEncoder, FeatureSequence, SequenceKind, TokenLimits};
use memodetector::enhance::{
    build_prompt, EnhancementCache, EnhancementRecord, EnhancementStep,
};
use memodetector::fusion::{
    bidirectional_xattn, pool_and_classify, AttnParams, FusionDims, FusionModel,
    FusionVariant, ParamSet,
};
use memodetector::metrics::{ConfusionMatrix, EvalMetrics};
use memodetector::rng::{shuffle, SplitMix64};
use memodetector::synth::{generate, SynthSpec};
use memodetector::train::{cross_entropy, train_single_seed};
use ndarray::{Array1, Array2};

fn pass(id: &str, what: &str) {
    println!("ACCEPTANCE {id}: PASS - {what}");
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_memodetector"))
}

fn random_rows(rng: &mut SplitMix64, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| rng.next_uniform(-2.0, 2.0))
}

fn dense(rows: Array2<f64>, kind: SequenceKind) -> FeatureSequence<f64> {
    FeatureSequence::dense(rows, kind).unwrap()
}

fn random_params(rng: &mut SplitMix64, d: usize) -> AttnParams<f64> {
    AttnParams {
        w_q: random_rows(rng, d, d),
        w_k: random_rows(rng, d, d),
        w_v: random_rows(rng, d, d),
        w_o: random_rows(rng, d, d),
    }
}

// ---------------------------------------------------------------- c01

fn oracle_matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (n, k, m) = (a.len(), a[0].len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            for l in 0..k {
                out[i][j] += a[i][l] * b[l][j];
            }
        }
    }
    out
}

fn oracle_direction(
    queries: &[Vec<f64>],
    keys: &[Vec<f64>],
    mats: &[Vec<Vec<f64>>; 4],
    d_k: usize,
) -> Vec<Vec<f64>> {
    let q = oracle_matmul(queries, &mats[0]);
    let k = oracle_matmul(keys, &mats[1]);
    let v = oracle_matmul(keys, &mats[2]);
    let (mq, nk) = (queries.len(), keys.len());
    let mut weights = vec![vec![0.0; nk]; mq];
    for i in 0..mq {
        let mut scores = vec![0.0; nk];
        for j in 0..nk {
            for l in 0..d_k {
                scores[j] += q[i][l] * k[j][l];
            }
            scores[j] /= (d_k as f64).sqrt();
        }
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for j in 0..nk {
            weights[i][j] = (scores[j] - max).exp();
            z += weights[i][j];
        }
        for j in 0..nk {
            weights[i][j] /= z;
        }
    }
    let projected = oracle_matmul(&oracle_matmul(&weights, &v), &mats[3]);
    let mut out = vec![vec![0.0; queries[0].len()]; mq];
    for i in 0..mq {
        for j in 0..queries[0].len() {
            out[i][j] = queries[i][j] + projected[i][j];
        }
    }
    out
}

#[test]
fn c01_attention_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = SplitMix64::new(0xacc1);
    let to_nd = |m: &[Vec<f64>]| {
        Array2::from_shape_fn((m.len(), m[0].len()), |(i, j)| m[i][j])
    };
    for case in 0..20 {
        let n = 1 + rng.next_index(6);
        let m = 1 + rng.next_index(6);
        let d = 1 + rng.next_index(6);
        let draw = |rng: &mut SplitMix64, r: usize, c: usize| -> Vec<Vec<f64>> {
            (0..r)
                .map(|_| (0..c).map(|_| rng.next_uniform(-2.0, 2.0)).collect())
                .collect()
        };
        let v_rows = draw(&mut rng, n, d);
        let t_rows = draw(&mut rng, m, d);
        let fwd_mats: [Vec<Vec<f64>>; 4] = std::array::from_fn(|_| draw(&mut rng, d, d));
        let bwd_mats: [Vec<Vec<f64>>; 4] = std::array::from_fn(|_| draw(&mut rng, d, d));

        let fwd = AttnParams {
            w_q: to_nd(&fwd_mats[0]),
            w_k: to_nd(&fwd_mats[1]),
            w_v: to_nd(&fwd_mats[2]),
            w_o: to_nd(&fwd_mats[3]),
        };
        let bwd = AttnParams {
            w_q: to_nd(&bwd_mats[0]),
            w_k: to_nd(&bwd_mats[1]),
            w_v: to_nd(&bwd_mats[2]),
            w_o: to_nd(&bwd_mats[3]),
        };
        let v_seq = dense(to_nd(&v_rows), SequenceKind::Visual);
        let t_seq = dense(to_nd(&t_rows), SequenceKind::Textual);
        let (v_tilde, tau_tilde) = bidirectional_xattn(&v_seq, &t_seq, &fwd, &bwd, 1, d).unwrap();

        let tau_expected = oracle_direction(&t_rows, &v_rows, &fwd_mats, d);
        let v_expected = oracle_direction(&v_rows, &t_rows, &bwd_mats, d);
        for i in 0..m {
            for j in 0..d {
                assert!(
                    (tau_tilde.rows[(i, j)] - tau_expected[i][j]).abs() < 1e-10,
                    "case {case} tau[{i},{j}]"
                );
            }
        }
        for i in 0..n {
            for j in 0..d {
                assert!(
                    (v_tilde.rows[(i, j)] - v_expected[i][j]).abs() < 1e-10,
                    "case {case} v[{i},{j}]"
                );
            }
        }
    }
    assert!(start.elapsed() < Duration::from_secs(5));
    pass("c01", "bidirectional attention matches the dense oracle within 1e-10 on 20 cases");
}

// ---------------------------------------------------------------- c02

fn toy_batch(d: usize) -> Vec<(memodetector::encode::FeatureBundle<f64>, usize)> {
    let encoder = ToyEncoder::new(5, d, 4);
    let limits = TokenLimits {
        original_text: 16,
        enhanced_text: 16,
    };
    let samples = [
        ("angry cat frowns", 0usize, 11u64),
        ("joyful dog beams", 2usize, 22u64),
    ];
    samples
        .iter()
        .map(|(text, label, img_seed)| {
            let mut rng = SplitMix64::new(*img_seed);
            let image = RgbData {
                width: 4,
                height: 4,
                pixels: (0..48).map(|_| (rng.next_u64() & 0xff) as u8).collect(),
            };
            let mut texts = std::collections::BTreeMap::new();
            let mut hashes = std::collections::BTreeMap::new();
            for step in EnhancementStep::CHAIN {
                texts.insert(step, format!("{text} analysed via {step} with detail"));
                hashes.insert(step, "h".to_string());
            }
            let record = EnhancementRecord {
                meme_id: "m".into(),
                texts,
                model_id: "mock".into(),
                prompt_hashes: hashes,
                temperature: 0.0,
                max_tokens: Some(16),
            };
            let bundle = encode_bundle(
                &encoder,
                &image,
                text,
                &record,
                &EnhancementStep::CHAIN,
                limits,
            )
            .unwrap();
            (bundle, *label)
        })
        .collect()
}

#[test]
fn c02_gradient_check_full_loss() {
    let start = Instant::now();
    let d = 6;
    let batch = toy_batch(d);
    let dims = FusionDims::single_head(d, 3);
    let mut model =
        FusionModel::<f64>::new(FusionVariant::BidirectionalXattn, false, dims, 17).unwrap();

    let batch_loss = |model: &FusionModel<f64>| -> f64 {
        batch
            .iter()
            .map(|(bundle, label)| {
                let (_, cache) = model.forward(bundle).unwrap();
                model.backward(&cache, *label).0
            })
            .sum::<f64>()
            / batch.len() as f64
    };
    let analytic: Vec<(String, Vec<f64>)> = {
        let mut grads: ParamSet<f64> = model.params.zeros_like();
        for (bundle, label) in &batch {
            let (_, cache) = model.forward(bundle).unwrap();
            let (_, g) = model.backward(&cache, *label);
            grads.add_assign(&g);
        }
        grads.scale(1.0 / batch.len() as f64);
        grads
            .named_slices_mut()
            .into_iter()
            .map(|(n, s)| (n, s.to_vec()))
            .collect()
    };

    let eps = 1e-5;
    let mut checked = 0usize;
    for (t_idx, (name, values)) in analytic.iter().enumerate() {
        for idx in 0..values.len() {
            let orig = model.params.named_slices_mut()[t_idx].1[idx];
            model.params.named_slices_mut()[t_idx].1[idx] = orig + eps;
            let plus = batch_loss(&model);
            model.params.named_slices_mut()[t_idx].1[idx] = orig - eps;
            let minus = batch_loss(&model);
            model.params.named_slices_mut()[t_idx].1[idx] = orig;
            let fd = (plus - minus) / (2.0 * eps);
            let a = values[idx];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
            assert!(rel < 1e-4, "{name}[{idx}]: {a} vs {fd} rel {rel:.2e}");
            checked += 1;
        }
    }
    assert!(checked > 300);
    assert!(start.elapsed() < Duration::from_secs(60));
    pass("c02", "analytic gradients of the composed loss match central differences (rel < 1e-4)");
}

// ---------------------------------------------------------------- c03

#[test]
fn c03_residual_identity() {
    let mut rng = SplitMix64::new(0xc3);
    for _ in 0..10 {
        let d = 1 + rng.next_index(6);
        let n = 1 + rng.next_index(6);
        let m = 1 + rng.next_index(6);
        let v = dense(random_rows(&mut rng, n, d), SequenceKind::Visual);
        let t = dense(random_rows(&mut rng, m, d), SequenceKind::Textual);
        let mut fwd = random_params(&mut rng, d);
        let mut bwd = random_params(&mut rng, d);
        fwd.w_o.fill(0.0);
        bwd.w_o.fill(0.0);
        let (v_tilde, tau_tilde) = bidirectional_xattn(&v, &t, &fwd, &bwd, 1, d).unwrap();
        assert_eq!(v_tilde.rows, v.rows);
        assert_eq!(tau_tilde.rows, t.rows);
    }
    pass("c03", "zeroed output projections make fusion the bit-exact identity");
}

// ---------------------------------------------------------------- c04

#[test]
fn c04_permutation_invariance() {
    let mut rng = SplitMix64::new(0xc4);
    let d = 4;
    let w = Array2::<f64>::zeros((3, 2 * d));
    let b = Array1::<f64>::zeros(3);
    for trial in 0..100 {
        let n = 2 + rng.next_index(5);
        let m = 2 + rng.next_index(5);
        let v = dense(random_rows(&mut rng, n, d), SequenceKind::Visual);
        let t = dense(random_rows(&mut rng, m, d), SequenceKind::Textual);
        let fwd = random_params(&mut rng, d);
        let bwd = random_params(&mut rng, d);
        let (v_tilde, tau_tilde) = bidirectional_xattn(&v, &t, &fwd, &bwd, 1, d).unwrap();
        let base = pool_and_classify(&v_tilde, &tau_tilde, &w, &b).unwrap();

        let mut perm: Vec<usize> = (0..n).collect();
        shuffle(&mut rng, &mut perm);
        let mut v_permuted = Array2::zeros((n, d));
        for (dst, &src) in perm.iter().enumerate() {
            v_permuted.row_mut(dst).assign(&v.rows.row(src));
        }
        let v_p = dense(v_permuted, SequenceKind::Visual);
        let (v_tilde_p, tau_tilde_p) = bidirectional_xattn(&v_p, &t, &fwd, &bwd, 1, d).unwrap();
        let permuted = pool_and_classify(&v_tilde_p, &tau_tilde_p, &w, &b).unwrap();
        for j in 0..2 * d {
            assert!(
                (permuted.meme_embedding[j] - base.meme_embedding[j]).abs() <= 1e-10,
                "trial {trial}: embedding moved under visual permutation"
            );
        }

        let mut perm_t: Vec<usize> = (0..m).collect();
        shuffle(&mut rng, &mut perm_t);
        let mut t_permuted = Array2::zeros((m, d));
        for (dst, &src) in perm_t.iter().enumerate() {
            t_permuted.row_mut(dst).assign(&t.rows.row(src));
        }
        let t_p = dense(t_permuted, SequenceKind::Textual);
        let (v_tilde_q, tau_tilde_q) = bidirectional_xattn(&v, &t_p, &fwd, &bwd, 1, d).unwrap();
        let permuted_t = pool_and_classify(&v_tilde_q, &tau_tilde_q, &w, &b).unwrap();
        for j in 0..2 * d {
            assert!((permuted_t.meme_embedding[j] - base.meme_embedding[j]).abs() <= 1e-10);
        }
    }
    pass("c04", "meme embedding invariant (≤1e-10) under row permutations, 100 trials");
}

// ---------------------------------------------------------------- c05

#[test]
fn c05_masking_soundness() {
    let mut rng = SplitMix64::new(0xc5);
    let d = 4;
    let w = Array2::<f64>::zeros((3, 2 * d));
    let b = Array1::<f64>::zeros(3);
    for _ in 0..50 {
        let n = 1 + rng.next_index(4);
        let m = 1 + rng.next_index(4);
        let v = dense(random_rows(&mut rng, n, d), SequenceKind::Visual);
        let t = dense(random_rows(&mut rng, m, d), SequenceKind::Textual);
        let fwd = random_params(&mut rng, d);
        let bwd = random_params(&mut rng, d);
        let (v_tilde, tau_tilde) = bidirectional_xattn(&v, &t, &fwd, &bwd, 1, d).unwrap();
        let base = pool_and_classify(&v_tilde, &tau_tilde, &w, &b).unwrap();

        let pad = |seq: &FeatureSequence<f64>, rng: &mut SplitMix64| {
            let extra = 1 + rng.next_index(3);
            let mut rows = Array2::zeros((seq.len() + extra, d));
            for i in 0..seq.len() {
                rows.row_mut(i).assign(&seq.rows.row(i));
            }
            for i in seq.len()..seq.len() + extra {
                for j in 0..d {
                    rows[(i, j)] = rng.next_uniform(-100.0, 100.0);
                }
            }
            let mut mask = seq.mask.clone();
            mask.extend(std::iter::repeat_n(false, extra));
            FeatureSequence {
                rows,
                mask,
                kind: seq.kind,
            }
        };
        let v_p = pad(&v, &mut rng);
        let t_p = pad(&t, &mut rng);
        let (v_tilde_p, tau_tilde_p) = bidirectional_xattn(&v_p, &t_p, &fwd, &bwd, 1, d).unwrap();
        let padded = pool_and_classify(&v_tilde_p, &tau_tilde_p, &w, &b).unwrap();
        for j in 0..2 * d {
            assert!(
                (padded.meme_embedding[j] - base.meme_embedding[j]).abs() <= 1e-10,
                "masked pad rows changed the embedding"
            );
        }
    }
    pass("c05", "appending masked pad rows changes the embedding by ≤1e-10");
}

// ---------------------------------------------------------------- c06

#[test]
fn c06_metrics_oracle() {
    let oracle = |labels: &[usize], preds: &[usize], classes: usize| -> (f64, f64, f64, f64) {
        let correct = labels
            .iter()
            .zip(preds)
            .filter(|(a, b)| a == b)
            .count();
        let acc = correct as f64 / labels.len() as f64;
        let (mut ps, mut rs, mut fs) = (0.0, 0.0, 0.0);
        for c in 0..classes {
            let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
            for i in 0..labels.len() {
                match (labels[i] == c, preds[i] == c) {
                    (true, true) => tp += 1,
                    (false, true) => fp += 1,
                    (true, false) => fn_ += 1,
                    _ => {}
                }
            }
            let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
            let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
            let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            ps += p;
            rs += r;
            fs += f;
        }
        let c = classes as f64;
        (acc, ps / c, rs / c, fs / c)
    };

    let mut rng = SplitMix64::new(0xc6);
    for _ in 0..100 {
        let classes = 2 + rng.next_index(7);
        let n = 1 + rng.next_index(50);
        let labels: Vec<usize> = (0..n).map(|_| rng.next_index(classes)).collect();
        let preds: Vec<usize> = (0..n).map(|_| rng.next_index(classes)).collect();
        let cm = ConfusionMatrix::from_pairs(&labels, &preds, classes).unwrap();
        let ours = EvalMetrics::from_confusion(cm).unwrap();
        let (acc, p, r, f) = oracle(&labels, &preds, classes);
        assert_eq!(ours.accuracy, acc);
        assert_eq!(ours.macro_precision, p);
        assert_eq!(ours.macro_recall, r);
        assert_eq!(ours.macro_f1, f);
    }

    let cm = ConfusionMatrix::from_pairs(&[0, 1, 0], &[0, 1, 1], 2).unwrap();
    let worked = EvalMetrics::from_confusion(cm).unwrap();
    assert!((worked.macro_f1 - 2.0 / 3.0).abs() < 1e-15);
    pass("c06", "metrics equal the loop oracle exactly on 100 sets incl. the worked example");
}

// ---------------------------------------------------------------- c07

#[test]
fn c07_loss_closed_forms() {
    let uniform = Array1::from_elem(7, 1.0 / 7.0);
    let loss: f64 = cross_entropy(&uniform, 3);
    assert!((loss - 7.0f64.ln()).abs() <= 1e-9);

    let mut one_hot = Array1::zeros(5);
    one_hot[1] = 1.0;
    assert_eq!(cross_entropy(&one_hot, 1), 0.0);
    pass("c07", "uniform-over-7 loss = ln 7 ± 1e-9; one-hot correct loss = 0");
}

// ---------------------------------------------------------------- c08

#[test]
fn c08_overfit_smoke_test() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let paths = generate(dir.path(), &SynthSpec::default()).unwrap();
    let manifest = load_manifest(&paths.manifest).unwrap();
    assert_eq!(split_view(&manifest, Split::Train).len(), 32);
    let cache = EnhancementCache::load(&paths.cache).unwrap();

    let mut cfg = RunConfig {
        dataset: "synthetic".into(),
        out_dir: dir.path().join("out"),
        seeds: vec![0],
        ..Default::default()
    };
    cfg.train.epochs = 200;
    cfg.train.patience = 0; // capacity test: early stopping disabled

    let outcome = train_single_seed::<f32>(&cfg, &manifest, &cache, 0).unwrap();
    let first_perfect = outcome
        .epoch_logs
        .iter()
        .find(|l| l.train_accuracy == 1.0)
        .map(|l| l.epoch);
    assert!(
        first_perfect.is_some(),
        "train accuracy never reached 1.0 within 200 epochs"
    );
    assert!(start.elapsed() < Duration::from_secs(120), "exceeded 2 minutes");
    pass(
        "c08",
        "32-sample overfit reaches train accuracy 1.0 within 200 epochs on one core",
    );
}

// ---------------------------------------------------------------- c09

fn sweep_config(dir: &Path) -> RunConfig {
    let mut cfg = RunConfig {
        dataset: "synthetic".into(),
        out_dir: dir.to_path_buf(),
        seeds: vec![0, 1],
        ..Default::default()
    };
    cfg.train.epochs = 12;
    cfg
}

#[test]
fn c09_ablation_harness() {
    let dir = tempfile::tempdir().unwrap();
    let paths = generate(dir.path(), &SynthSpec::default()).unwrap();
    let manifest = load_manifest(&paths.manifest).unwrap();
    let cache = EnhancementCache::load(&paths.cache).unwrap();
    let out = dir.path().join("ablation");
    let base = sweep_config(&out);

    // configs differ from base exactly as specified
    let configs = memodetector::train::sweep::ablation_configs(&base);
    assert_eq!(configs.len(), 6);
    assert_eq!(configs[0].1, base);
    for (name, cfg) in &configs[1..] {
        let mut reverted = cfg.clone();
        if name == "wo_DF" {
            assert_eq!(cfg.fusion.variant, FusionVariant::NoDualstage);
            reverted.fusion.variant = base.fusion.variant;
        } else {
            let removed: Vec<_> = EnhancementStep::CHAIN
                .iter()
                .filter(|s| !cfg.enhance.steps.contains(s))
                .collect();
            assert_eq!(removed.len(), 1, "{name} must drop exactly one step");
            assert_eq!(format!("wo_{}", removed[0]), *name);
            reverted.enhance.steps = base.enhance.steps.clone();
        }
        assert_eq!(&reverted, &base, "{name} deviates beyond its ablation");
    }

    let rows =
        memodetector::train::sweep::run_ablations::<f32>(&base, &manifest, &cache, &out).unwrap();
    assert_eq!(rows.len(), 6);
    for row in &rows {
        for v in row.report.means().iter().chain(row.report.stds().iter()) {
            assert!(v.is_finite());
        }
    }

    let table = fs::read_to_string(out.join("ablation_table.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 7, "header + 6 rows");
    assert_eq!(
        lines[0],
        "config,accuracy_mean,precision_mean,recall_mean,macro_f1_mean,accuracy_std,precision_std,recall_std,macro_f1_std"
    );
    let names: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["full", "wo_DF", "wo_ID", "wo_TM", "wo_CIM", "wo_CA"]);
    pass("c09", "six-row ablation table with finite metrics; configs differ exactly as specified");
}

// ---------------------------------------------------------------- c10

#[test]
fn c10_variant_harness_and_report() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let paths = generate(dir.path(), &SynthSpec::default()).unwrap();
    let manifest = load_manifest(&paths.manifest).unwrap();
    let cache = EnhancementCache::load(&paths.cache).unwrap();
    let out = dir.path().join("compare");
    let base = sweep_config(&out);

    let rows = memodetector::train::sweep::run_variant_comparison::<f32>(
        &base, &manifest, &cache, &out,
    )
    .unwrap();
    assert_eq!(rows.len(), 6, "4 fusion variants + 2 enhancement strategies");
    for row in &rows {
        assert!(row.param_count > 0);
        for v in row.report.means() {
            assert!(v.is_finite());
        }
    }

    let fusion_table = fs::read_to_string(out.join("fusion_variants.csv")).unwrap();
    assert_eq!(fusion_table.lines().count(), 5, "header + 4 variant rows");
    let enh_table = fs::read_to_string(out.join("enhancement_variants.csv")).unwrap();
    assert_eq!(enh_table.lines().count(), 3, "header + 2 strategy rows");
    // parameter counts recorded per row
    for line in fusion_table.lines().skip(1) {
        let params: usize = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!(params > 0);
    }
    // bidirectional strictly exceeds oneway in trainable parameters
    let count_of = |name: &str| {
        rows.iter()
            .find(|r| r.name == name)
            .map(|r| r.param_count)
            .unwrap()
    };
    assert!(count_of("bidirectional_xattn") > count_of("oneway_xattn"));

    // report command renders tables and charts from the sweep output
    let report_out = dir.path().join("report");
    let output = bin()
        .args([
            "report",
            "--inputs",
            out.to_str().unwrap(),
            "--out",
            report_out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(output.status.success(), "report failed: {output:?}");
    assert!(report_out.join("consolidated.csv").exists());
    let chart = report_out.join("chart_synthetic.svg");
    assert!(chart.exists(), "grouped bar chart missing");
    let svg = fs::read_to_string(chart).unwrap();
    assert!(svg.contains("<svg") && svg.contains("bidirectional_xattn"));
    assert!(start.elapsed() < Duration::from_secs(300), "sweep exceeded 5 minutes");
    pass("c10", "all fusion + enhancement variants train, evaluate and render via report");
}

// ---------------------------------------------------------------- c11

#[test]
fn c11_enhancement_pipeline_with_mock() {
    // prompt golden tests, byte-exact
    assert_eq!(
        build_prompt(EnhancementStep::Id, "x"),
        "Describe what is visually observable in this meme (ignore all text)."
    );
    assert_eq!(
        build_prompt(EnhancementStep::Tm, "lol ok"),
        "The meme text is {lol ok}. Analyze the meaning, tone, or rhetorical use of this textual content."
    );
    assert_eq!(
        build_prompt(EnhancementStep::Cim, ""),
        "State the likely intended message when image and text are viewed together."
    );
    assert_eq!(
        build_prompt(EnhancementStep::Ca, ""),
        "Suggest the possible context in which someone might use this meme."
    );

    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        classes: 2,
        train: 4,
        val: 3,
        test: 3,
        seed: 5,
    };
    let paths = generate(dir.path(), &spec).unwrap();
    let cache_path = dir.path().join("mock_cache.jsonl");

    let run = |expect_fragment: &str| {
        let output = bin()
            .args([
                "enhance",
                "--mock",
                "--manifest",
                paths.manifest.to_str().unwrap(),
                "--cache",
                cache_path.to_str().unwrap(),
            ])
            .output()
            .unwrap();
        let stdout = String::from_utf8_lossy(&output.stdout).to_string();
        assert!(output.status.success(), "enhance failed: {stdout}");
        assert!(stdout.contains(expect_fragment), "stdout: {stdout}");
    };

    run("hits=0 misses=40 failures=0");
    let bytes_after_first = fs::read(&cache_path).unwrap();
    let cache = EnhancementCache::load(&cache_path).unwrap();
    assert_eq!(cache.len(), 40, "10 memes × 4 steps");

    run("hits=40 misses=0 failures=0");
    assert_eq!(
        fs::read(&cache_path).unwrap(),
        bytes_after_first,
        "rerun must append nothing (zero endpoint calls)"
    );
    pass("c11", "mock enhancement: 40-entry cache, idempotent rerun, byte-exact prompts");
}

// ---------------------------------------------------------------- c12

#[test]
fn c12_bitwise_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let paths = generate(dir.path(), &SynthSpec::default()).unwrap();

    let run = |out: &Path| {
        let output = bin()
            .args([
                "train",
                "--manifest",
                paths.manifest.to_str().unwrap(),
                "--cache",
                paths.cache.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
                "--seeds",
                "0,1",
                "--epochs",
                "6",
            ])
            .output()
            .unwrap();
        assert!(
            output.status.success(),
            "train failed: {}",
            String::from_utf8_lossy(&output.stderr)
        );
    };
    let out_a = dir.path().join("run_a");
    let out_b = dir.path().join("run_b");
    run(&out_a);
    run(&out_b);

    let metrics_a = fs::read(out_a.join("metrics.csv")).unwrap();
    let metrics_b = fs::read(out_b.join("metrics.csv")).unwrap();
    assert_eq!(metrics_a, metrics_b, "metrics.csv must be bitwise identical");

    for seed in [0, 1] {
        let log_a = fs::read(
            out_a.join("bidirectional_xattn").join(format!("seed_{seed}")).join("epoch_log.jsonl"),
        )
        .unwrap();
        let log_b = fs::read(
            out_b.join("bidirectional_xattn").join(format!("seed_{seed}")).join("epoch_log.jsonl"),
        )
        .unwrap();
        assert_eq!(log_a, log_b, "epoch logs must be bitwise identical (seed {seed})");
    }
    pass("c12", "identical (config, seed, cache) give bitwise-identical logs and CSVs");
}
