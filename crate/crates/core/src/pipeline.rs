//! End-to-end glue: records → split → normalized windows → trained model →
//! calibrated threshold.

use serde::{Deserialize, Serialize};

use crate::detector::{
    make_windows, score_batch, train, DetectLossConfig, DetectorModel, ModelConfig, TrainConfig, WindowBatch,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate_at, pick_operating_point, sweep_thresholds, Sweep, ThresholdPoint, DEFAULT_GRID_POINTS};
use crate::ingest::{fit_normalizer, normalize_all, split, FlowRecord, NormalizationStats, SplitSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub loss: DetectLossConfig,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
}

fn default_grid_points() -> usize {
    DEFAULT_GRID_POINTS
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            split: SplitSpec::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            loss: DetectLossConfig::default(),
            grid_points: DEFAULT_GRID_POINTS,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub records: usize,
    pub train_records: usize,
    pub val_records: usize,
    pub test_records: usize,
    /// Benign training windows actually used for fitting.
    pub train_windows: usize,
    /// Training windows excluded because they contain an anomalous record.
    pub train_windows_excluded: usize,
    pub val_windows: usize,
    pub val_anomalous_windows: usize,
    pub test_windows: usize,
    pub test_anomalous_windows: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreparedData {
    pub stats: NormalizationStats,
    pub train: WindowBatch,
    pub val: WindowBatch,
    pub test: WindowBatch,
    pub summary: DatasetSummary,
}

/// Splits, fits the normalizer on the training split and windows each split.
pub fn prepare(records: &[FlowRecord], split_spec: &SplitSpec, tc: &TrainConfig) -> Result<PreparedData> {
    let parts = split(records, split_spec)?;
    let stats = fit_normalizer(&parts.train)?;
    prepare_split(records.len(), parts, stats, tc)
}

/// Like [`prepare`] but with statistics fixed in advance (e.g. from a
/// checkpoint).
pub fn prepare_with_stats(
    records: &[FlowRecord],
    stats: NormalizationStats,
    split_spec: &SplitSpec,
    tc: &TrainConfig,
) -> Result<PreparedData> {
    let parts = split(records, split_spec)?;
    prepare_split(records.len(), parts, stats, tc)
}

fn prepare_split(
    total: usize,
    parts: crate::ingest::Splits,
    stats: NormalizationStats,
    tc: &TrainConfig,
) -> Result<PreparedData> {
    tc.validate()?;
    let windows = |records: &[FlowRecord], name: &str| -> Result<WindowBatch> {
        let normalized = normalize_all(records, &stats, tc.execution)?;
        make_windows(&normalized, tc.window_length, tc.window_stride).map_err(|e| match e {
            Error::EmptyInput(msg) => Error::EmptyInput(format!("{name} split: {msg}")),
            other => other,
        })
    };
    let all_train = windows(&parts.train, "train")?;
    let val = windows(&parts.val, "validation")?;
    let test = windows(&parts.test, "test")?;
    let train = all_train.benign_only();
    if train.is_empty() {
        return Err(Error::EmptyInput("training split has no benign windows".into()));
    }
    let anomalous = |b: &WindowBatch| b.windows.iter().filter(|w| w.label.is_anomalous()).count();
    let summary = DatasetSummary {
        records: total,
        train_records: parts.train.len(),
        val_records: parts.val.len(),
        test_records: parts.test.len(),
        train_windows: train.len(),
        train_windows_excluded: all_train.len() - train.len(),
        val_windows: val.len(),
        val_anomalous_windows: anomalous(&val),
        test_windows: test.len(),
        test_anomalous_windows: anomalous(&test),
    };
    Ok(PreparedData {
        stats,
        train,
        val,
        test,
        summary,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub val_sweep: Sweep,
    /// Max-F1 point of the validation sweep.
    pub operating_point: ThresholdPoint,
    /// Test metrics at the validation threshold.
    pub test_point: ThresholdPoint,
    pub test_sweep: Sweep,
}

/// Picks the threshold on validation windows and applies it to test windows.
pub fn calibrate(
    model: &DetectorModel,
    data: &PreparedData,
    grid_points: usize,
    tc: &TrainConfig,
) -> Result<Calibration> {
    let val_scores = score_batch(&data.val, model, tc.execution)?;
    let test_scores = score_batch(&data.test, model, tc.execution)?;
    let val_labels = data.val.labels();
    let test_labels = data.test.labels();
    let val_sweep = sweep_thresholds(&val_scores, &val_labels, grid_points)?;
    let operating_point = pick_operating_point(&val_sweep.points)?;
    let test_point = evaluate_at(&test_scores, &test_labels, operating_point.threshold)?;
    let test_sweep = sweep_thresholds(&test_scores, &test_labels, grid_points)?;
    Ok(Calibration {
        val_sweep,
        operating_point,
        test_point,
        test_sweep,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectionRun {
    pub model: DetectorModel,
    pub curve: Vec<f64>,
    pub calibration: Calibration,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumePoint {
    pub fraction: f64,
    pub train_windows: usize,
    /// Validation max-F1 point used to set the threshold.
    pub operating_point: ThresholdPoint,
    /// Test metrics at that threshold.
    pub test_point: ThresholdPoint,
}

/// Fewest training windows a data-volume point may use.
pub const MIN_VOLUME_WINDOWS: usize = 10;

/// Retrains on the leading `fraction` of the training windows for each
/// fraction and evaluates at the validation-calibrated threshold. Fractions
/// that leave fewer than [`MIN_VOLUME_WINDOWS`] windows are skipped with a
/// warning.
pub fn data_volume_curve(fractions: &[f64], data: &PreparedData, cfg: &PipelineConfig) -> Result<Vec<VolumePoint>> {
    for (i, &f) in fractions.iter().enumerate() {
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::Config(format!("data-volume fraction {f} is outside (0, 1]")));
        }
        if i > 0 && f <= fractions[i - 1] {
            return Err(Error::Config("data-volume fractions must be strictly ascending".into()));
        }
    }
    let mut points = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        let count = (fraction * data.train.len() as f64).floor() as usize;
        if count < MIN_VOLUME_WINDOWS {
            log::warn!(
                "skipping data-volume fraction {fraction}: {count} training windows (need {MIN_VOLUME_WINDOWS})"
            );
            continue;
        }
        let subset = PreparedData {
            train: data.train.prefix(count),
            ..data.clone()
        };
        let run = run_detection(&subset, cfg)?;
        points.push(VolumePoint {
            fraction,
            train_windows: count,
            operating_point: run.calibration.operating_point,
            test_point: run.calibration.test_point,
        });
    }
    Ok(points)
}

/// Trains on `data.train` and calibrates on validation/test.
pub fn run_detection(data: &PreparedData, cfg: &PipelineConfig) -> Result<DetectionRun> {
    let outcome = train(&data.train, &cfg.model, &cfg.train, &cfg.loss)?;
    let calibration = calibrate(&outcome.model, data, cfg.grid_points, &cfg.train)?;
    Ok(DetectionRun {
        model: outcome.model,
        curve: outcome.curve,
        calibration,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::SparsityMode;
    use crate::synth::{generate, AnomalyKind, AnomalySegment, ScenarioSpec};

    fn small() -> (PreparedData, PipelineConfig) {
        let spec = ScenarioSpec {
            n_features: 4,
            n_records: 600,
            seed: 3,
            baseline: Vec::new(),
            noise_sigma: 0.3,
            mean_scale: 1.0,
            segments: vec![
                AnomalySegment {
                    start: 460,
                    length: 12,
                    kind: AnomalyKind::VolumetricBurst,
                    intensity: 5.0,
                },
                AnomalySegment {
                    start: 540,
                    length: 12,
                    kind: AnomalyKind::ScanFanout,
                    intensity: 10.0,
                },
            ],
        };
        let data = generate(&spec).unwrap();
        let mut cfg = PipelineConfig::default();
        cfg.model.d_k = 4;
        cfg.model.bottleneck = 2;
        cfg.train.epochs = 3;
        cfg.train.window_length = 8;
        cfg.train.window_stride = 4;
        cfg.loss.sparsity_mode = SparsityMode::Entropy;
        let prepared = prepare(&data.records, &cfg.split, &cfg.train).unwrap();
        (prepared, cfg)
    }

    #[test]
    fn empty_fraction_list_gives_empty_curve() {
        let (data, cfg) = small();
        assert!(data_volume_curve(&[], &data, &cfg).unwrap().is_empty());
    }

    #[test]
    fn full_fraction_matches_standard_run() {
        let (data, cfg) = small();
        let curve = data_volume_curve(&[0.5, 1.0], &data, &cfg).unwrap();
        let full = run_detection(&data, &cfg).unwrap();
        let last = curve.last().unwrap();
        assert_eq!(last.fraction, 1.0);
        assert_eq!(last.train_windows, data.train.len());
        assert_eq!(last.test_point, full.calibration.test_point);
        assert_eq!(last.operating_point, full.calibration.operating_point);
    }

    #[test]
    fn tiny_fraction_is_skipped() {
        let (data, cfg) = small();
        let curve = data_volume_curve(&[0.01, 1.0], &data, &cfg).unwrap();
        assert_eq!(curve.len(), 1);
        assert_eq!(curve[0].fraction, 1.0);
    }

    #[test]
    fn bad_fractions_are_config_errors() {
        let (data, cfg) = small();
        for bad in [&[0.0][..], &[1.5], &[0.5, 0.5], &[0.8, 0.2]] {
            assert!(
                matches!(data_volume_curve(bad, &data, &cfg), Err(Error::Config(_))),
                "{bad:?}"
            );
        }
    }

    #[test]
    fn training_split_keeps_only_benign_windows() {
        let (data, _) = small();
        assert!(data.train.windows.iter().all(|w| !w.label.is_anomalous()));
        assert_eq!(data.summary.train_windows, data.train.len());
        assert!(data.summary.test_anomalous_windows > 0);
    }
}
