//! Deterministic synthetic flow traffic with labeled anomaly segments.
//!
//! Benign feature `j` at record `t` is
//! `scale·offset_j + amplitude_j·sin(2πt/period_j + phase_j) + N(0, σ²)`.
//! Feature 0 plays the role of a flow duration, the last feature a
//! fan-out count, and everything in between is a volume (bytes/packets)
//! feature.

use std::f64::consts::TAU;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{self, FlowRecord, Label};

pub const LABEL_COLUMN: &str = "Label";
pub const BENIGN_LABEL: &str = "BENIGN";

const CICIDS_NAMES: [&str; 8] = [
    "Flow Duration",
    "Total Fwd Packets",
    "Total Backward Packets",
    "Total Length of Fwd Packets",
    "Total Length of Bwd Packets",
    "Flow Bytes/s",
    "Flow Packets/s",
    "Destination Port Fan-out",
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureBaseline {
    pub offset: f64,
    pub amplitude: f64,
    pub period: f64,
    pub phase: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnomalyKind {
    /// Multiplies the volume features by `intensity`.
    VolumetricBurst,
    /// Multiplies the fan-out count by `intensity` and zeroes the duration.
    ScanFanout,
    /// Adds a ramp of slope `intensity / length` to every feature.
    SlowDrift,
}

impl AnomalyKind {
    pub fn label_text(self) -> &'static str {
        match self {
            AnomalyKind::VolumetricBurst => "DDoS",
            AnomalyKind::ScanFanout => "PortScan",
            AnomalyKind::SlowDrift => "Infiltration",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalySegment {
    pub start: usize,
    pub length: usize,
    pub kind: AnomalyKind,
    pub intensity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub n_features: usize,
    pub n_records: usize,
    #[serde(default)]
    pub seed: u64,
    /// One entry per feature; empty selects [`default_baselines`].
    #[serde(default)]
    pub baseline: Vec<FeatureBaseline>,
    pub noise_sigma: f64,
    /// Multiplies every baseline offset (domain shift knob).
    #[serde(default = "one")]
    pub mean_scale: f64,
    #[serde(default)]
    pub segments: Vec<AnomalySegment>,
}

fn one() -> f64 {
    1.0
}

/// Fixed per-feature baselines built from two periods so that benign
/// traffic spans a low-dimensional subspace.
pub fn default_baselines(n_features: usize) -> Vec<FeatureBaseline> {
    (0..n_features)
        .map(|j| {
            let jf = j as f64;
            FeatureBaseline {
                offset: 20.0 + 5.0 * jf,
                amplitude: 4.0 + 0.5 * jf,
                period: if j % 2 == 0 { 96.0 } else { 220.0 },
                phase: 0.7 * jf,
            }
        })
        .collect()
}

impl ScenarioSpec {
    /// Scenario used by the end-to-end checks: 8 features, 4000 records and
    /// twenty 20-record segments (10% coverage) cycling through all kinds.
    pub fn desk(seed: u64) -> Self {
        let kinds = [
            AnomalyKind::VolumetricBurst,
            AnomalyKind::ScanFanout,
            AnomalyKind::SlowDrift,
        ];
        let segments = (0..20)
            .map(|i| {
                let kind = kinds[i % 3];
                AnomalySegment {
                    start: 100 + 200 * i,
                    length: 20,
                    kind,
                    intensity: match kind {
                        AnomalyKind::VolumetricBurst => 5.0,
                        AnomalyKind::ScanFanout => 10.0,
                        AnomalyKind::SlowDrift => 80.0,
                    },
                }
            })
            .collect();
        ScenarioSpec {
            n_features: 8,
            n_records: 4000,
            seed,
            baseline: Vec::new(),
            noise_sigma: 0.5,
            mean_scale: 1.0,
            segments,
        }
    }

    /// Same generator with every baseline offset multiplied by `scale`: a
    /// shifted traffic domain.
    pub fn with_mean_scale(&self, scale: f64) -> Self {
        ScenarioSpec {
            mean_scale: self.mean_scale * scale,
            ..self.clone()
        }
    }

    pub fn baselines(&self) -> Vec<FeatureBaseline> {
        if self.baseline.is_empty() {
            default_baselines(self.n_features)
        } else {
            self.baseline.clone()
        }
    }

    pub fn feature_names(&self) -> Vec<String> {
        (0..self.n_features)
            .map(|j| {
                if self.n_features == CICIDS_NAMES.len() {
                    CICIDS_NAMES[j].to_string()
                } else {
                    format!("Feature {j}")
                }
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_features < 3 {
            return Err(Error::Config(format!(
                "synthetic traffic needs at least 3 features (duration, volume, fan-out), got {}",
                self.n_features
            )));
        }
        if self.n_records == 0 {
            return Err(Error::Config("n_records must be positive".into()));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::Config(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        if !self.mean_scale.is_finite() {
            return Err(Error::Config("mean_scale must be finite".into()));
        }
        if !self.baseline.is_empty() && self.baseline.len() != self.n_features {
            return Err(Error::Config(format!(
                "{} baselines for {} features",
                self.baseline.len(),
                self.n_features
            )));
        }
        for (j, b) in self.baselines().iter().enumerate() {
            if !(b.period > 0.0) || ![b.offset, b.amplitude, b.phase].iter().all(|v| v.is_finite()) {
                return Err(Error::Config(format!("feature {j} baseline is invalid: {b:?}")));
            }
        }
        for (i, s) in self.segments.iter().enumerate() {
            if s.length == 0 || s.start + s.length > self.n_records {
                return Err(Error::Config(format!(
                    "segment {i} [{}, {}) lies outside [0, {})",
                    s.start,
                    s.start + s.length,
                    self.n_records
                )));
            }
            if !s.intensity.is_finite() {
                return Err(Error::Config(format!("segment {i} has non-finite intensity")));
            }
        }
        let mut order: Vec<usize> = (0..self.segments.len()).collect();
        order.sort_by_key(|&i| self.segments[i].start);
        for pair in order.windows(2) {
            let (a, b) = (&self.segments[pair[0]], &self.segments[pair[1]]);
            if a.start + a.length > b.start {
                return Err(Error::Config(format!(
                    "segments {} [{}, {}) and {} [{}, {}) overlap",
                    pair[0],
                    a.start,
                    a.start + a.length,
                    pair[1],
                    b.start,
                    b.start + b.length
                )));
            }
        }
        Ok(())
    }

    pub fn anomalous_count(&self) -> usize {
        self.segments.iter().map(|s| s.length).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub feature_names: Vec<String>,
    pub records: Vec<FlowRecord>,
    /// Per-record label text as written to the CSV.
    pub label_texts: Vec<&'static str>,
}

impl Generated {
    pub fn anomalous_count(&self) -> usize {
        self.records.iter().filter(|r| r.label.is_anomalous()).count()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        ingest::write_csv(writer, &self.feature_names, LABEL_COLUMN, &self.records, |r| {
            self.label_texts[r.row_index].to_string()
        })
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}

pub fn generate(spec: &ScenarioSpec) -> Result<Generated> {
    spec.validate()?;
    let n = spec.n_features;
    let baselines = spec.baselines();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = (spec.noise_sigma > 0.0).then(|| Normal::new(0.0, spec.noise_sigma).expect("sigma validated"));

    let mut records = Vec::with_capacity(spec.n_records);
    let mut label_texts = vec![BENIGN_LABEL; spec.n_records];
    for t in 0..spec.n_records {
        let features = baselines
            .iter()
            .map(|b| {
                let clean = spec.mean_scale * b.offset + b.amplitude * (TAU * t as f64 / b.period + b.phase).sin();
                clean + noise.map_or(0.0, |d| d.sample(&mut rng))
            })
            .collect();
        records.push(FlowRecord {
            features,
            label: Label::Benign,
            row_index: t,
        });
    }

    let duration = 0;
    let fanout = n - 1;
    for seg in &spec.segments {
        for k in 0..seg.length {
            let r = &mut records[seg.start + k];
            r.label = Label::Anomalous;
            label_texts[seg.start + k] = seg.kind.label_text();
            match seg.kind {
                AnomalyKind::VolumetricBurst => {
                    for v in &mut r.features[duration + 1..fanout] {
                        *v *= seg.intensity;
                    }
                }
                AnomalyKind::ScanFanout => {
                    r.features[fanout] *= seg.intensity;
                    r.features[duration] = 0.0;
                }
                AnomalyKind::SlowDrift => {
                    let shift = seg.intensity * (k + 1) as f64 / seg.length as f64;
                    for v in &mut r.features {
                        *v += shift;
                    }
                }
            }
        }
    }

    Ok(Generated {
        feature_names: spec.feature_names(),
        records,
        label_texts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{parse_reader, Schema};

    fn plain(n_records: usize) -> ScenarioSpec {
        ScenarioSpec {
            n_features: 4,
            n_records,
            seed: 1,
            baseline: Vec::new(),
            noise_sigma: 0.0,
            mean_scale: 1.0,
            segments: Vec::new(),
        }
    }

    #[test]
    fn noiseless_is_exact_sinusoid() {
        let g = generate(&plain(50)).unwrap();
        let b = default_baselines(4);
        for r in &g.records {
            assert_eq!(r.label, Label::Benign);
            for (j, v) in r.features.iter().enumerate() {
                let t = r.row_index as f64;
                let want = b[j].offset + b[j].amplitude * (TAU * t / b[j].period + b[j].phase).sin();
                assert_eq!(*v, want);
            }
        }
    }

    #[test]
    fn same_spec_same_csv() {
        let spec = ScenarioSpec::desk(42);
        assert_eq!(
            generate(&spec).unwrap().to_csv_string().unwrap(),
            generate(&spec).unwrap().to_csv_string().unwrap()
        );
        let other = ScenarioSpec::desk(43);
        assert_ne!(generate(&spec).unwrap().records, generate(&other).unwrap().records);
    }

    #[test]
    fn anomalous_count_equals_segment_lengths() {
        let spec = ScenarioSpec::desk(42);
        let g = generate(&spec).unwrap();
        assert_eq!(spec.anomalous_count(), 400);
        assert_eq!(g.anomalous_count(), 400);
        assert_eq!(g.records.len(), 4000);
    }

    #[test]
    fn overlapping_segments_rejected_by_index() {
        let mut spec = plain(100);
        spec.segments = vec![
            AnomalySegment {
                start: 50,
                length: 10,
                kind: AnomalyKind::SlowDrift,
                intensity: 1.0,
            },
            AnomalySegment {
                start: 10,
                length: 45,
                kind: AnomalyKind::ScanFanout,
                intensity: 2.0,
            },
        ];
        let err = generate(&spec).unwrap_err().to_string();
        assert!(err.contains("segments 1 [10, 55) and 0 [50, 60) overlap"), "{err}");
    }

    #[test]
    fn anomaly_shapes() {
        let mut spec = plain(30);
        spec.segments = vec![
            AnomalySegment {
                start: 0,
                length: 5,
                kind: AnomalyKind::VolumetricBurst,
                intensity: 2.0,
            },
            AnomalySegment {
                start: 10,
                length: 5,
                kind: AnomalyKind::ScanFanout,
                intensity: 3.0,
            },
            AnomalySegment {
                start: 20,
                length: 4,
                kind: AnomalyKind::SlowDrift,
                intensity: 8.0,
            },
        ];
        let base = generate(&plain(30)).unwrap().records;
        let g = generate(&spec).unwrap();
        let r = &g.records;
        assert_eq!(r[2].features[0], base[2].features[0]);
        assert_eq!(r[2].features[1], 2.0 * base[2].features[1]);
        assert_eq!(r[2].features[3], base[2].features[3]);
        assert_eq!(r[11].features[0], 0.0);
        assert_eq!(r[11].features[3], 3.0 * base[11].features[3]);
        assert_eq!(r[20].features[1], base[20].features[1] + 2.0);
        assert_eq!(r[23].features[2], base[23].features[2] + 8.0);
        assert_eq!(g.label_texts[21], "Infiltration");
        assert_eq!(g.anomalous_count(), 14);
    }

    #[test]
    fn csv_round_trips_through_ingest_without_drops() {
        let g = generate(&ScenarioSpec::desk(7)).unwrap();
        let csv = g.to_csv_string().unwrap();
        let parsed = parse_reader(csv.as_bytes(), &Schema::default()).unwrap();
        assert_eq!(parsed.summary.rows_dropped, 0);
        assert_eq!(parsed.feature_names, g.feature_names);
        assert_eq!(parsed.records, g.records);
    }

    #[test]
    fn invalid_specs() {
        let mut s = plain(10);
        s.n_features = 2;
        assert!(generate(&s).is_err());
        let mut s = plain(10);
        s.segments.push(AnomalySegment {
            start: 8,
            length: 5,
            kind: AnomalyKind::SlowDrift,
            intensity: 1.0,
        });
        assert!(matches!(generate(&s), Err(Error::Config(_))));
    }
}
