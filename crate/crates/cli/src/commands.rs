use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use flowattn::checkpoint::Checkpoint;
use flowattn::detector::train;
use flowattn::eval::{benchmark, ThresholdPoint, TimingSummary};
use flowattn::ingest::{parse_csv, FlowRecord, Schema};
use flowattn::pipeline::{
    calibrate, data_volume_curve, prepare, prepare_with_stats, DatasetSummary, PreparedData, VolumePoint,
};
use flowattn::synth::generate;
use flowattn::transfer::{fine_tune, TargetTask, TransferConfig};
use flowattn::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::{DataSource, RunConfig};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const CURVE_FILE: &str = "curve.csv";
pub const REPORT_FILE: &str = "report.json";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const TIMING_FILE: &str = "timing.json";
pub const DATA_FILE: &str = "data.csv";

pub struct Dataset {
    pub feature_names: Vec<String>,
    pub records: Vec<FlowRecord>,
}

pub fn load_source(source: &DataSource, schema: &Schema) -> Result<Dataset> {
    match source {
        DataSource::Csv(path) => {
            let parsed = parse_csv(path, schema)?;
            let s = &parsed.summary;
            log::info!(
                "{}: read {} rows, dropped {}",
                path.display(),
                s.rows_read,
                s.rows_dropped
            );
            if let Some(w) = &s.warning {
                log::warn!("{w}");
            }
            Ok(Dataset {
                feature_names: parsed.feature_names,
                records: parsed.records,
            })
        }
        DataSource::Synth(spec) => {
            let g = generate(spec)?;
            Ok(Dataset {
                feature_names: g.feature_names,
                records: g.records,
            })
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// Writes the configured synthetic scenario as CSV. `out` is either the CSV
/// path itself or a directory that receives `data.csv`.
pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<String> {
    let DataSource::Synth(spec) = &cfg.data else {
        return Err(Error::Config("synth needs a `synth` data source".into()));
    };
    let generated = generate(spec)?;
    let path = if out.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            create_dir(parent)?;
        }
        out.to_path_buf()
    } else {
        create_dir(out)?;
        out.join(DATA_FILE)
    };
    write(&path, &generated.to_csv_string()?)?;
    Ok(format!(
        "wrote {} records ({} anomalous, {} features) to {}",
        generated.records.len(),
        generated.anomalous_count(),
        generated.feature_names.len(),
        path.display()
    ))
}

fn curve_csv(header: &[String], rows: &[Vec<f64>]) -> String {
    let mut s = format!("epoch,{}\n", header.join(","));
    for (epoch, row) in rows.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "{epoch},{}", cells.join(","));
    }
    s
}

pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<String> {
    let data = load_source(&cfg.data, &cfg.schema)?;
    let prepared = prepare(&data.records, &cfg.split, &cfg.train)?;
    let start = Instant::now();
    let outcome = train(&prepared.train, &cfg.model, &cfg.train, &cfg.loss)?;
    let seconds = start.elapsed().as_secs_f64();

    create_dir(out)?;
    let curve = outcome.curve.clone();
    let ck = Checkpoint::new(
        data.feature_names,
        prepared.stats,
        cfg.train.clone(),
        cfg.loss,
        outcome.model,
        outcome.curve,
    );
    ck.save(&out.join(CHECKPOINT_FILE))?;
    let rows: Vec<Vec<f64>> = curve.iter().map(|&l| vec![l]).collect();
    write(&out.join(CURVE_FILE), &curve_csv(&["loss".to_string()], &rows))?;
    Ok(format!(
        "trained on {} windows for {} epochs in {seconds:.2}s: loss {:.6} -> {:.6}",
        prepared.train.len(),
        cfg.train.epochs,
        curve[0],
        curve[curve.len() - 1]
    ))
}

fn checkpoint_path(out: &Path, explicit: Option<&Path>) -> PathBuf {
    explicit.map_or_else(|| out.join(CHECKPOINT_FILE), Path::to_path_buf)
}

/// Loads the checkpoint and prepares `source` with its stored normalization,
/// after checking the columns match.
fn prepare_for_checkpoint(cfg: &RunConfig, ck: &Checkpoint, source: &DataSource) -> Result<PreparedData> {
    let data = load_source(source, &cfg.schema)?;
    ck.check_columns(&data.feature_names)?;
    prepare_with_stats(&data.records, ck.normalization.clone(), &cfg.split, &cfg.train)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportTiming {
    pub train_seconds: Option<f64>,
    pub inference_windows_per_second: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Validation sweep; the threshold is picked here.
    pub sweep: Vec<ThresholdPoint>,
    pub best_f1_point: ThresholdPoint,
    /// Test metrics at the validation threshold.
    pub test_point: ThresholdPoint,
    pub test_sweep: Vec<ThresholdPoint>,
    pub degenerate_class: bool,
    pub warnings: Vec<String>,
    pub timing: Option<ReportTiming>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub data_volume: Vec<VolumePoint>,
    pub dataset: DatasetSummary,
    pub config: RunConfig,
}

fn sweep_csv(points: &[ThresholdPoint]) -> String {
    let mut s = String::from("threshold,tp,fp,tn,fn,precision,recall,f1,accuracy\n");
    for p in points {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            p.threshold, p.tp, p.fp, p.tn, p.fn_, p.precision, p.recall, p.f1, p.accuracy
        );
    }
    s
}

pub fn cmd_eval(cfg: &RunConfig, out: &Path, checkpoint: Option<&Path>) -> Result<String> {
    let ck = Checkpoint::load(&checkpoint_path(out, checkpoint))?;
    let prepared = prepare_for_checkpoint(cfg, &ck, &cfg.data)?;
    let cal = calibrate(&ck.model, &prepared, cfg.eval.grid_points, &cfg.train)?;

    let mut warnings = Vec::new();
    if cal.val_sweep.degenerate_class {
        warnings.push("validation windows contain a single class".to_string());
    }
    if cal.test_sweep.degenerate_class {
        warnings.push("test windows contain a single class".to_string());
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    let timing = if cfg.eval.timing {
        let t = benchmark(&ck.model, &prepared.test, cfg.eval.repetitions)?;
        Some(ReportTiming {
            train_seconds: None,
            inference_windows_per_second: t.windows_per_second,
        })
    } else {
        None
    };
    let data_volume = if cfg.eval.data_volume_fractions.is_empty() {
        Vec::new()
    } else {
        data_volume_curve(&cfg.eval.data_volume_fractions, &prepared, &cfg.pipeline())?
    };

    let report = EvalReport {
        sweep: cal.val_sweep.points.clone(),
        best_f1_point: cal.operating_point,
        test_point: cal.test_point,
        test_sweep: cal.test_sweep.points.clone(),
        degenerate_class: cal.val_sweep.degenerate_class || cal.test_sweep.degenerate_class,
        warnings,
        timing,
        data_volume,
        dataset: prepared.summary,
        config: cfg.clone(),
    };
    create_dir(out)?;
    write(&out.join(REPORT_FILE), &to_json(&report)?)?;
    write(&out.join(SWEEP_FILE), &sweep_csv(&report.sweep))?;
    Ok(format!(
        "best validation F1 {:.4} at threshold {:.6}; test F1 {:.4} (precision {:.4}, recall {:.4})",
        report.best_f1_point.f1,
        report.best_f1_point.threshold,
        report.test_point.f1,
        report.test_point.precision,
        report.test_point.recall
    ))
}

pub fn cmd_transfer(cfg: &RunConfig, out: &Path, checkpoint: Option<&Path>) -> Result<String> {
    let settings = cfg
        .transfer
        .as_ref()
        .ok_or_else(|| Error::Config("transfer needs a `transfer` section".into()))?;
    let ck = Checkpoint::load(&checkpoint_path(out, checkpoint))?;
    let source = prepare_for_checkpoint(cfg, &ck, &cfg.data)?;
    let mut tasks = Vec::with_capacity(settings.targets.len());
    for (i, target) in settings.targets.iter().enumerate() {
        let data = load_source(&target.data, &cfg.schema)?;
        if data.feature_names.len() != ck.model.n_features() {
            return Err(Error::Mismatch(format!(
                "target {i} has {} features but the checkpoint expects {}; \
                 re-ingest the target data with the source schema so the feature columns match",
                data.feature_names.len(),
                ck.model.n_features()
            )));
        }
        ck.check_columns(&data.feature_names)?;
        let prepared = prepare_with_stats(&data.records, ck.normalization.clone(), &cfg.split, &cfg.train)?;
        tasks.push(TargetTask {
            windows: prepared.train,
            lambda: target.lambda,
        });
    }
    let tc = settings.train.clone().unwrap_or_else(|| cfg.train.clone());
    let mut config = TransferConfig::new(tasks, tc, settings.sharing);
    if let Some(m) = settings.m {
        config.m = m;
    }
    let outcome = fine_tune(&ck.model, &source.train, &config, &ck.loss)?;

    let mut header = vec!["source".to_string()];
    header.extend((0..config.m).map(|i| format!("target_{i}")));
    header.push("total".to_string());
    let rows: Vec<Vec<f64>> = (0..outcome.source_curve.len())
        .map(|e| {
            let mut row = vec![outcome.source_curve[e]];
            row.extend(outcome.target_curves.iter().map(|c| c[e]));
            row.push(outcome.total_curve[e]);
            row
        })
        .collect();

    create_dir(out)?;
    write(&out.join(CURVE_FILE), &curve_csv(&header, &rows))?;
    let last = rows.last().expect("curve has an initial entry").clone();
    let adapted = ck.with_transfer(
        outcome.model,
        config.lambdas(),
        outcome.source_curve,
        outcome.target_curves,
    );
    adapted.save(&out.join(CHECKPOINT_FILE))?;
    Ok(format!(
        "fine-tuned on {} source windows and {} target task(s) for {} epochs: final total loss {:.6}",
        source.train.len(),
        config.m,
        config.train.epochs,
        last[last.len() - 1]
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub repetitions: usize,
    pub windows: usize,
    pub execution: String,
    /// The checkpoint's model.
    pub attention: TimingSummary,
    /// Same model with attention bypassed (`Z := X`).
    pub autoencoder_ablation: TimingSummary,
}

pub fn cmd_bench(cfg: &RunConfig, out: &Path, checkpoint: Option<&Path>, repetitions: Option<usize>) -> Result<String> {
    let ck = Checkpoint::load(&checkpoint_path(out, checkpoint))?;
    let prepared = prepare_for_checkpoint(cfg, &ck, &cfg.data)?;
    let repetitions = repetitions.unwrap_or(cfg.eval.repetitions);
    let attention = benchmark(&ck.model, &prepared.test, repetitions)?;
    let mut plain = ck.model.clone();
    plain.bypass_attention = true;
    let autoencoder_ablation = benchmark(&plain, &prepared.test, repetitions)?;
    let report = BenchReport {
        repetitions,
        windows: prepared.test.len(),
        execution: "sequential".into(),
        attention,
        autoencoder_ablation,
    };
    create_dir(out)?;
    write(&out.join(TIMING_FILE), &to_json(&report)?)?;
    Ok(format!(
        "scored {} windows x{}: attention {:.6}s +/- {:.6}s, autoencoder {:.6}s +/- {:.6}s",
        report.windows,
        repetitions,
        report.attention.mean_seconds,
        report.attention.std_seconds,
        report.autoencoder_ablation.mean_seconds,
        report.autoencoder_ablation.std_seconds
    ))
}
