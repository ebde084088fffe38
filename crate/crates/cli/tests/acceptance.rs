//! End-to-end acceptance checks. Runs as a plain binary so every criterion
//! prints one PASS/FAIL line; exits non-zero if any criterion fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use flowattn::attention::{attend_forward, AttentionParams};
use flowattn::detector::{
    check_loss_gradients, loss_detect, DetectLossConfig, DetectorModel, ModelConfig, SparsityMode,
};
use flowattn::ingest::{parse_csv, parse_reader, write_csv, DropReason, Label, Schema};
use flowattn::math::{finite_diff_check, row_softmax, Coordinates, Matrix, ParamTensor};
use flowattn::pipeline::{data_volume_curve, prepare, prepare_with_stats};
use flowattn::synth::generate;
use flowattn::transfer::{compare_adaptation, Sharing, TargetTask, TransferConfig};
use flowattn_cli::config::{DataSource, RunConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Check = Result<String, String>;

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn desk_config() -> PathBuf {
    repo_root().join("configs/desk.json")
}

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect(),
    )
    .unwrap()
}

fn random_model(rng: &mut ChaCha8Rng, n: usize) -> DetectorModel {
    let cfg = ModelConfig {
        d_k: rng.random_range(1..=4),
        bottleneck: rng.random_range(1..n),
        bypass_attention: false,
    };
    let mut model = DetectorModel::init(n, &cfg, rng.random()).unwrap();
    for m in model.tensors_mut() {
        let (r, c) = m.shape();
        *m = random(rng, r, c, 0.8);
    }
    model
}

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit_secs: u64) -> Result<(), String> {
    ensure(
        elapsed <= Duration::from_secs(limit_secs),
        format!("took {:.1}s, limit {limit_secs}s", elapsed.as_secs_f64()),
    )
}

fn flowattn(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_flowattn"))
        .args(args)
        .output()
        .expect("run flowattn binary");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn flowattn_ok(args: &[&str]) -> Result<String, String> {
    let (code, stdout, stderr) = flowattn(args);
    ensure(code == 0, format!("flowattn {args:?} exited {code}: {stderr}"))?;
    Ok(stdout)
}

fn read_json(path: &Path) -> Result<Value, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn f64_at(v: &Value, pointer: &str) -> Result<f64, String> {
    v.pointer(pointer)
        .and_then(Value::as_f64)
        .ok_or_else(|| format!("missing {pointer}"))
}

fn gradient_correctness() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let mut instances = 0;
    for mode in [SparsityMode::AsWrittenL1, SparsityMode::Entropy, SparsityMode::Off] {
        let cfg = DetectLossConfig {
            lambda: 0.1,
            sparsity_mode: mode,
        };
        for _ in 0..20 {
            let t = rng.random_range(2..=6);
            let n = rng.random_range(2..=5);
            let model = random_model(&mut rng, n);
            let x = random(&mut rng, t, n, 1.5);
            let reports = check_loss_gradients(&x, &model, &cfg, 1e-5, 1e-4).map_err(|e| e.to_string())?;
            for (name, r) in reports {
                worst = worst.max(r.max_rel_error);
                ensure(
                    r.passed(),
                    format!("{mode:?} T={t} n={n} {name}: rel error {:.2e}", r.max_rel_error),
                )?;
            }
            instances += 1;
        }
    }
    within(start.elapsed(), 10)?;
    Ok(format!("{instances} instances over 3 modes, max rel error {worst:.2e}"))
}

fn l1_degeneracy() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = DetectLossConfig {
        lambda: 1.0,
        sparsity_mode: SparsityMode::AsWrittenL1,
    };
    let (mut worst_value, mut worst_grad) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let t = rng.random_range(2..=16);
        let n = rng.random_range(2..=8);
        let model = random_model(&mut rng, n);
        let x = random(&mut rng, t, n, 3.0);
        let sparsity = |probe: &DetectorModel, input: &Matrix| loss_detect(input, probe, &cfg).unwrap().sparsity;
        worst_value = worst_value.max((sparsity(&model, &x) - t as f64).abs());
        for idx in 0..2 {
            let value = model.tensors()[idx].clone();
            let param = ParamTensor::new(value);
            let mut probe = model.clone();
            let r = finite_diff_check(
                |m| {
                    *probe.tensors_mut()[idx] = m.clone();
                    sparsity(&probe, &x)
                },
                &param,
                1e-5,
                1e-7,
                Coordinates::All,
            )
            .map_err(|e| e.to_string())?;
            worst_grad = worst_grad.max(r.max_rel_error);
        }
        let r = finite_diff_check(
            |m| sparsity(&model, m),
            &ParamTensor::new(x.clone()),
            1e-5,
            1e-7,
            Coordinates::All,
        )
        .map_err(|e| e.to_string())?;
        worst_grad = worst_grad.max(r.max_rel_error);
    }
    ensure(worst_value < 1e-9, format!("|sparsity - T| reached {worst_value:.2e}"))?;
    ensure(worst_grad < 1e-7, format!("numeric gradient reached {worst_grad:.2e}"))?;
    within(start.elapsed(), 5)?;
    Ok(format!(
        "100 windows: max |sparsity - T| {worst_value:.1e}, max |grad| {worst_grad:.1e}"
    ))
}

fn attention_invariants() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_sum = 0.0f64;
    for i in 0..1000 {
        let rows = rng.random_range(1..=12);
        let cols = rng.random_range(1..=12);
        let mut m = random(&mut rng, rows, cols, if i % 2 == 0 { 1e3 } else { 5.0 });
        if i % 3 == 0 {
            let r = rng.random_range(0..rows);
            m.row_mut(r)
                .iter_mut()
                .enumerate()
                .for_each(|(j, v)| *v = if j % 2 == 0 { 1e3 } else { -1e3 });
        }
        let s = row_softmax(&m);
        for r in 0..rows {
            worst_sum = worst_sum.max((s.row(r).iter().sum::<f64>() - 1.0).abs());
        }
    }
    ensure(worst_sum < 1e-9, format!("row sum off by {worst_sum:.2e}"))?;

    let mut worst_uniform = 0.0f64;
    for _ in 0..50 {
        let t = rng.random_range(1..=10);
        let n = rng.random_range(1..=6);
        let x = random(&mut rng, t, n, 10.0);
        let out = attend_forward(&x, &AttentionParams::zeros(n, 4)).map_err(|e| e.to_string())?;
        let means = x.col_means();
        for r in 0..t {
            for c in 0..t {
                worst_uniform = worst_uniform.max((out.a.get(r, c) - 1.0 / t as f64).abs());
            }
            for j in 0..n {
                worst_uniform = worst_uniform.max((out.z.get(r, j) - means.get(0, j)).abs());
            }
        }
    }
    ensure(
        worst_uniform < 1e-12,
        format!("zero-weight attention off by {worst_uniform:.2e}"),
    )?;
    within(start.elapsed(), 5)?;
    Ok(format!(
        "1000 matrices, max row-sum error {worst_sum:.1e}; zero weights exact to {worst_uniform:.1e}"
    ))
}

struct DeskRun {
    dir: PathBuf,
    report: Value,
}

fn desk_run(work: &Path) -> Result<DeskRun, String> {
    let dir = work.join("desk");
    let cfg = desk_config();
    let (cfg, out) = (cfg.to_str().unwrap(), dir.to_str().unwrap());
    flowattn_ok(&["train", "--config", cfg, "--out", out])?;
    flowattn_ok(&["eval", "--config", cfg, "--out", out])?;
    let report = read_json(&dir.join("report.json"))?;
    Ok(DeskRun { dir, report })
}

fn end_to_end(run: &Result<DeskRun, String>, elapsed: Duration) -> Check {
    let run = run.as_ref().map_err(Clone::clone)?;
    let val = f64_at(&run.report, "/best_f1_point/f1")?;
    let test = f64_at(&run.report, "/test_point/f1")?;
    ensure(test >= 0.90, format!("test F1 {test:.4} < 0.90"))?;
    ensure(
        (test - val).abs() <= 0.1,
        format!("|test - val| = {:.4} > 0.1", (test - val).abs()),
    )?;
    within(elapsed, 120)?;
    Ok(format!(
        "validation F1 {val:.4}, test F1 {test:.4} at the validation threshold ({:.1}s)",
        elapsed.as_secs_f64()
    ))
}

fn volume_trend() -> Check {
    let start = Instant::now();
    let cfg = RunConfig::load(&desk_config(), None).map_err(|e| e.to_string())?;
    let DataSource::Synth(spec) = &cfg.data else {
        return Err("desk config must use synthetic data".into());
    };
    let data = generate(spec).map_err(|e| e.to_string())?;
    let prepared = prepare(&data.records, &cfg.split, &cfg.train).map_err(|e| e.to_string())?;
    let curve = data_volume_curve(&[0.1, 1.0], &prepared, &cfg.pipeline()).map_err(|e| e.to_string())?;
    ensure(
        curve.len() == 2,
        format!("expected 2 curve points, got {}", curve.len()),
    )?;
    let (low, high) = (curve[0].test_point.f1, curve[1].test_point.f1);
    ensure(high >= low, format!("F1(1.0) = {high:.4} < F1(0.1) = {low:.4}"))?;
    within(start.elapsed(), 240)?;
    Ok(format!(
        "F1(0.1) = {low:.4} on {} windows, F1(1.0) = {high:.4} on {} windows",
        curve[0].train_windows, curve[1].train_windows
    ))
}

fn sweep_shape(run: &Result<DeskRun, String>) -> Check {
    let run = run.as_ref().map_err(Clone::clone)?;
    let sweep = run.report["sweep"].as_array().ok_or("report has no sweep")?;
    let f1 = |p: &Value| p["f1"].as_f64().unwrap_or(f64::NAN);
    let best = f64_at(&run.report, "/best_f1_point/f1")?;
    let (first, last) = (f1(&sweep[0]), f1(&sweep[sweep.len() - 1]));
    ensure(
        best > first && best > last,
        format!("best {best:.4}, endpoints {first:.4} / {last:.4}"),
    )?;
    Ok(format!(
        "best F1 {best:.4} vs endpoints {first:.4} (all flagged) / {last:.4} (none flagged)"
    ))
}

fn transfer_benefit() -> Check {
    let start = Instant::now();
    let mut wins = 0;
    let mut notes = Vec::new();
    for seed in [42u64, 43, 44] {
        let cfg = RunConfig::load(&desk_config(), Some(seed)).map_err(|e| e.to_string())?;
        let DataSource::Synth(spec) = &cfg.data else {
            return Err("desk config must use synthetic data".into());
        };
        let source = generate(spec).map_err(|e| e.to_string())?;
        let target = generate(&spec.with_mean_scale(1.5)).map_err(|e| e.to_string())?;
        let src = prepare(&source.records, &cfg.split, &cfg.train).map_err(|e| e.to_string())?;
        let tgt = prepare_with_stats(&target.records, src.stats.clone(), &cfg.split, &cfg.train)
            .map_err(|e| e.to_string())?;
        let pretrained = flowattn::detector::train(&src.train, &cfg.model, &cfg.train, &cfg.loss)
            .map_err(|e| e.to_string())?
            .model;
        let fresh = DetectorModel::init(8, &cfg.model, seed).map_err(|e| e.to_string())?;
        let tc = TransferConfig::new(
            vec![TargetTask {
                windows: tgt.train,
                lambda: 1.0,
            }],
            cfg.train.clone(),
            Sharing::PerTaskDecoder,
        );
        let cmp =
            compare_adaptation(&pretrained, &fresh, &src.train, &tc, &cfg.loss, 0, 1.2).map_err(|e| e.to_string())?;
        let show = |e: Option<usize>| e.map_or("never".to_string(), |e| e.to_string());
        notes.push(format!(
            "seed {seed}: fine-tune {} vs scratch {}",
            show(cmp.fine_tune_epochs),
            show(cmp.scratch_epochs)
        ));
        if cmp.fine_tune_is_faster() {
            wins += 1;
        }
    }
    ensure(
        wins >= 2,
        format!("fine-tuning faster on {wins}/3 seeds ({})", notes.join("; ")),
    )?;
    within(start.elapsed(), 300)?;
    Ok(format!(
        "{wins}/3 seeds faster; epochs to reach 1.2x converged loss: {}",
        notes.join("; ")
    ))
}

fn determinism(work: &Path, run: &Result<DeskRun, String>) -> Check {
    let run = run.as_ref().map_err(Clone::clone)?;
    let again = work.join("desk-again");
    let cfg = desk_config();
    let (cfg, out) = (cfg.to_str().unwrap(), again.to_str().unwrap());
    flowattn_ok(&["train", "--config", cfg, "--out", out])?;
    flowattn_ok(&["eval", "--config", cfg, "--out", out])?;
    for file in ["checkpoint.json", "curve.csv", "report.json", "sweep.csv"] {
        let a = fs::read(run.dir.join(file)).map_err(|e| e.to_string())?;
        let b = fs::read(again.join(file)).map_err(|e| e.to_string())?;
        ensure(a == b, format!("{file} differs between identical runs"))?;
    }
    Ok("checkpoint.json, curve.csv, report.json and sweep.csv byte-identical across reruns".into())
}

fn ingestion_robustness() -> Check {
    let fixture = repo_root().join("crates/core/tests/fixtures/dirty_flows.csv");
    let parsed = parse_csv(&fixture, &Schema::default()).map_err(|e| e.to_string())?;
    let s = &parsed.summary;
    let count = |r: DropReason| s.reasons.get(&r).copied().unwrap_or(0);
    ensure(
        s.rows_read == 14 && s.rows_dropped == 7,
        format!("read {} dropped {}", s.rows_read, s.rows_dropped),
    )?;
    ensure(
        count(DropReason::NonFinite) == 4
            && count(DropReason::MalformedRow) == 2
            && count(DropReason::Unparseable) == 1,
        format!("reasons {:?}", s.reasons),
    )?;
    let mut buf = Vec::new();
    write_csv(&mut buf, &parsed.feature_names, "Label", &parsed.records, |r| {
        if r.label == Label::Benign { "BENIGN" } else { "DDoS" }.to_string()
    })
    .map_err(|e| e.to_string())?;
    let again = parse_reader(buf.as_slice(), &Schema::default()).map_err(|e| e.to_string())?;
    ensure(
        again.summary.rows_dropped == 0,
        format!("round trip dropped {}", again.summary.rows_dropped),
    )?;
    let same = again
        .records
        .iter()
        .zip(&parsed.records)
        .all(|(a, b)| a.features == b.features && a.label == b.label);
    ensure(
        same && again.records.len() == parsed.records.len(),
        "round trip changed records",
    )?;
    Ok("14 rows: 4 non-finite, 2 malformed, 1 unparseable dropped; clean output re-parses with 0 drops".into())
}

fn timing_protocol(run: &Result<DeskRun, String>) -> Check {
    let run = run.as_ref().map_err(Clone::clone)?;
    let cfg = desk_config();
    flowattn_ok(&[
        "bench",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        run.dir.to_str().unwrap(),
    ])?;
    let timing = read_json(&run.dir.join("timing.json"))?;
    for arm in ["attention", "autoencoder_ablation"] {
        let reps = timing[arm]["per_repetition_seconds"]
            .as_array()
            .ok_or(format!("{arm}: no samples"))?;
        ensure(reps.len() == 10, format!("{arm}: {} repetitions", reps.len()))?;
        let samples: Vec<f64> = reps.iter().filter_map(Value::as_f64).collect();
        let mean = samples.iter().sum::<f64>() / 10.0;
        let std = (samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / 10.0).sqrt();
        let (m, s) = (
            f64_at(&timing, &format!("/{arm}/mean_seconds"))?,
            f64_at(&timing, &format!("/{arm}/std_seconds"))?,
        );
        ensure(
            (m - mean).abs() <= 1e-12 * mean.max(1.0),
            format!("{arm}: mean {m} vs samples {mean}"),
        )?;
        ensure(
            (s - std).abs() <= 1e-9 * mean.max(1.0),
            format!("{arm}: std {s} vs samples {std}"),
        )?;
    }
    ensure(
        timing["repetitions"].as_u64() == Some(10),
        "repetitions field is not 10",
    )?;
    Ok(format!(
        "10 scoring passes over {} windows: mean {:.3e}s, std {:.3e}s",
        timing["windows"],
        f64_at(&timing, "/attention/mean_seconds")?,
        f64_at(&timing, "/attention/std_seconds")?
    ))
}

fn main() {
    let work = std::env::temp_dir().join(format!("flowattn-acceptance-{}", std::process::id()));
    let _ = fs::remove_dir_all(&work);
    fs::create_dir_all(&work).expect("create work dir");

    let started = Instant::now();
    let run = desk_run(&work);
    let desk_elapsed = started.elapsed();

    let results: Vec<(u32, &str, Check)> = vec![
        (1, "gradient correctness", gradient_correctness()),
        (2, "L1 sparsity degeneracy", l1_degeneracy()),
        (3, "attention invariants", attention_invariants()),
        (4, "end-to-end detection", end_to_end(&run, desk_elapsed)),
        (5, "data-volume trend", volume_trend()),
        (6, "threshold sweep shape", sweep_shape(&run)),
        (7, "transfer benefit", transfer_benefit()),
        (8, "determinism", determinism(&work, &run)),
        (9, "ingestion robustness", ingestion_robustness()),
        (10, "timing protocol", timing_protocol(&run)),
    ];
    let _ = fs::remove_dir_all(&work);

    let mut failed = 0;
    for (id, name, result) in &results {
        match result {
            Ok(detail) => println!("criterion {id:>2} PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
