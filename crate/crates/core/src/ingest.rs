//! Flow-record CSV ingestion: parsing, cleaning, splitting and z-score
//! normalization.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Execution};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Benign,
    Anomalous,
}

impl Label {
    pub fn is_anomalous(self) -> bool {
        self == Label::Anomalous
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowRecord {
    pub features: Vec<f64>,
    pub label: Label,
    /// Ordinal position of the data row in the source stream (header excluded).
    pub row_index: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeatureColumns {
    /// The literal string `"auto-numeric"`.
    Auto(AutoNumeric),
    Named(Vec<String>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AutoNumeric {
    #[serde(rename = "auto-numeric")]
    AutoNumeric,
}

impl Default for FeatureColumns {
    fn default() -> Self {
        FeatureColumns::Auto(AutoNumeric::AutoNumeric)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CleanPolicy {
    #[default]
    Drop,
    /// Replace ±Infinity by the column's largest/smallest finite value.
    /// NaN cells are still dropped.
    ClipToFiniteMax,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schema {
    pub label_column: String,
    pub benign_value: String,
    #[serde(default)]
    pub feature_columns: FeatureColumns,
    #[serde(default)]
    pub clean_policy: CleanPolicy,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            label_column: "Label".into(),
            benign_value: "BENIGN".into(),
            feature_columns: FeatureColumns::default(),
            clean_policy: CleanPolicy::Drop,
        }
    }
}

/// Why a row was dropped during cleaning.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    /// Field count differs from the header.
    MalformedRow,
    /// A feature cell is not a number.
    Unparseable,
    NonFinite,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CleaningSummary {
    pub rows_read: usize,
    pub rows_dropped: usize,
    pub reasons: BTreeMap<DropReason, usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub warning: Option<String>,
}

impl CleaningSummary {
    fn drop_row(&mut self, reason: DropReason) {
        self.rows_dropped += 1;
        *self.reasons.entry(reason).or_default() += 1;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParsedFlows {
    pub feature_names: Vec<String>,
    pub records: Vec<FlowRecord>,
    pub summary: CleaningSummary,
}

impl ParsedFlows {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }
}

pub fn parse_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<ParsedFlows> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_reader(file, schema)
}

enum Cell {
    Value(f64),
    Bad,
}

fn parse_cell(raw: &str) -> Cell {
    // Rust's float parser accepts "inf", "Infinity" and "NaN" in any case,
    // which covers the spellings found in CICIDS exports.
    match raw.trim().parse::<f64>() {
        Ok(v) => Cell::Value(v),
        Err(_) => Cell::Bad,
    }
}

pub fn parse_reader<R: Read>(reader: R, schema: &Schema) -> Result<ParsedFlows> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .has_headers(true)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let rows: Vec<csv::StringRecord> = rdr.records().collect::<std::result::Result<_, _>>()?;
    if headers.iter().all(|h| h.is_empty()) {
        return Err(Error::EmptyInput("CSV has no header row".into()));
    }

    let label_idx = headers
        .iter()
        .position(|h| *h == schema.label_column)
        .ok_or_else(|| Error::Schema(format!("label column '{}' not found", schema.label_column)))?;

    if rows.is_empty() {
        return Err(Error::EmptyInput("CSV has a header but no data rows".into()));
    }

    let width = headers.len();
    let feature_idx: Vec<usize> = match &schema.feature_columns {
        FeatureColumns::Named(names) => names
            .iter()
            .map(|name| {
                headers
                    .iter()
                    .position(|h| h == name)
                    .ok_or_else(|| Error::Schema(format!("feature column '{name}' not found")))
            })
            .collect::<Result<_>>()?,
        FeatureColumns::Auto(_) => auto_numeric_columns(&headers, &rows, label_idx),
    };
    if feature_idx.is_empty() {
        return Err(Error::Schema("no numeric feature columns".into()));
    }

    let mut summary = CleaningSummary {
        rows_read: rows.len(),
        ..Default::default()
    };

    // First pass: parse cells, classify rows.
    let mut parsed: Vec<(usize, Vec<f64>, Label)> = Vec::with_capacity(rows.len());
    'rows: for (row_index, row) in rows.iter().enumerate() {
        if row.len() != width {
            summary.drop_row(DropReason::MalformedRow);
            continue;
        }
        let mut features = Vec::with_capacity(feature_idx.len());
        for &j in &feature_idx {
            match parse_cell(&row[j]) {
                Cell::Value(v) => features.push(v),
                Cell::Bad => {
                    summary.drop_row(DropReason::Unparseable);
                    continue 'rows;
                }
            }
        }
        let label = if row[label_idx].trim() == schema.benign_value {
            Label::Benign
        } else {
            Label::Anomalous
        };
        parsed.push((row_index, features, label));
    }

    let clip_bounds = match schema.clean_policy {
        CleanPolicy::Drop => None,
        CleanPolicy::ClipToFiniteMax => Some(finite_bounds(&parsed, feature_idx.len())),
    };

    let mut records = Vec::with_capacity(parsed.len());
    for (row_index, mut features, label) in parsed {
        if features.iter().any(|v| v.is_nan()) {
            summary.drop_row(DropReason::NonFinite);
            continue;
        }
        if features.iter().any(|v| v.is_infinite()) {
            match &clip_bounds {
                None => {
                    summary.drop_row(DropReason::NonFinite);
                    continue;
                }
                Some(bounds) => {
                    let mut clipped_all = true;
                    for (v, &(lo, hi)) in features.iter_mut().zip(bounds) {
                        if *v == f64::INFINITY {
                            *v = hi;
                        } else if *v == f64::NEG_INFINITY {
                            *v = lo;
                        }
                        clipped_all &= v.is_finite();
                    }
                    // A column with no finite value at all cannot be clipped.
                    if !clipped_all {
                        summary.drop_row(DropReason::NonFinite);
                        continue;
                    }
                }
            }
        }
        records.push(FlowRecord {
            features,
            label,
            row_index,
        });
    }

    if summary.rows_dropped * 2 > summary.rows_read {
        let msg = format!(
            "{} of {} rows dropped during cleaning",
            summary.rows_dropped, summary.rows_read
        );
        log::warn!("{msg}");
        summary.warning = Some(msg);
    }

    Ok(ParsedFlows {
        feature_names: feature_idx.iter().map(|&j| headers[j].clone()).collect(),
        records,
        summary,
    })
}

/// A column counts as numeric when more than half of its cells (over rows
/// with the header's field count) parse as a float.
fn auto_numeric_columns(headers: &[String], rows: &[csv::StringRecord], label_idx: usize) -> Vec<usize> {
    let well_formed: Vec<&csv::StringRecord> = rows.iter().filter(|r| r.len() == headers.len()).collect();
    (0..headers.len())
        .filter(|&j| j != label_idx)
        .filter(|&j| {
            let ok = well_formed
                .iter()
                .filter(|r| matches!(parse_cell(&r[j]), Cell::Value(_)))
                .count();
            ok * 2 > well_formed.len()
        })
        .collect()
}

fn finite_bounds(parsed: &[(usize, Vec<f64>, Label)], n: usize) -> Vec<(f64, f64)> {
    let mut bounds = vec![(f64::INFINITY, f64::NEG_INFINITY); n];
    for (_, features, _) in parsed {
        for (b, &v) in bounds.iter_mut().zip(features) {
            if v.is_finite() {
                b.0 = b.0.min(v);
                b.1 = b.1.max(v);
            }
        }
    }
    bounds
}

/// Writes records back out in the same CSV layout the parser accepts.
pub fn write_csv<W: std::io::Write>(
    writer: W,
    feature_names: &[String],
    label_column: &str,
    records: &[FlowRecord],
    label_text: impl Fn(&FlowRecord) -> String,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = feature_names.iter().map(String::as_str).collect();
    header.push(label_column);
    w.write_record(&header)?;
    let mut fields: Vec<String> = Vec::with_capacity(header.len());
    for r in records {
        fields.clear();
        fields.extend(r.features.iter().map(|v| v.to_string()));
        fields.push(label_text(r));
        w.write_record(&fields)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    #[default]
    Chronological,
    StratifiedShuffle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode: SplitMode,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.70,
            val_fraction: 0.15,
            test_fraction: 0.15,
            seed: 0,
            mode: SplitMode::Chronological,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let f = [self.train_fraction, self.val_fraction, self.test_fraction];
        if f.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Config(format!("split fractions must be positive, got {f:?}")));
        }
        let total: f64 = f.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions sum to {total}, expected 1")));
        }
        Ok(())
    }

    /// `(train, val, test)` sizes for `n` records: ⌊n·f⌋ for val and test,
    /// remainder to train.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let val = (n as f64 * self.val_fraction).floor() as usize;
        let test = (n as f64 * self.test_fraction).floor() as usize;
        let val = val.min(n);
        let test = test.min(n - val);
        (n - val - test, val, test)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<FlowRecord>,
    pub val: Vec<FlowRecord>,
    pub test: Vec<FlowRecord>,
}

pub fn split(records: &[FlowRecord], spec: &SplitSpec) -> Result<Splits> {
    spec.validate()?;
    if records.is_empty() {
        return Err(Error::EmptyInput("cannot split zero records".into()));
    }
    let (n_train, n_val, n_test) = spec.sizes(records.len());
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::Config(format!(
            "split of {} records yields an empty partition ({n_train}/{n_val}/{n_test})",
            records.len()
        )));
    }

    match spec.mode {
        SplitMode::Chronological => Ok(Splits {
            train: records[..n_train].to_vec(),
            val: records[n_train..n_train + n_val].to_vec(),
            test: records[n_train + n_val..].to_vec(),
        }),
        SplitMode::StratifiedShuffle => Ok(stratified(records, n_val, n_test, spec.seed)),
    }
}

/// Largest-remainder apportionment of `total` slots over classes of the given
/// sizes, capped at each class's availability.
fn apportion(total: usize, class_sizes: &[usize], available: &[usize]) -> Vec<usize> {
    let n: usize = class_sizes.iter().sum();
    let mut alloc: Vec<usize> = Vec::with_capacity(class_sizes.len());
    let mut remainders: Vec<(f64, usize)> = Vec::new();
    for (c, &size) in class_sizes.iter().enumerate() {
        let quota = total as f64 * size as f64 / n as f64;
        let base = (quota.floor() as usize).min(available[c]);
        alloc.push(base);
        remainders.push((quota - quota.floor(), c));
    }
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut left = total - alloc.iter().sum::<usize>();
    while left > 0 {
        let before = left;
        for &(_, c) in &remainders {
            if left == 0 {
                break;
            }
            if alloc[c] < available[c] {
                alloc[c] += 1;
                left -= 1;
            }
        }
        if before == left {
            break;
        }
    }
    alloc
}

fn stratified(records: &[FlowRecord], n_val: usize, n_test: usize, seed: u64) -> Splits {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut classes: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, r) in records.iter().enumerate() {
        classes[r.label.is_anomalous() as usize].push(i);
    }
    for members in classes.iter_mut() {
        members.shuffle(&mut rng);
    }
    let sizes = [classes[0].len(), classes[1].len()];
    let val_alloc = apportion(n_val, &sizes, &sizes);
    let remaining = [sizes[0] - val_alloc[0], sizes[1] - val_alloc[1]];
    let test_alloc = apportion(n_test, &sizes, &remaining);

    let mut assignment = vec![0u8; records.len()];
    for (c, members) in classes.iter().enumerate() {
        for (k, &i) in members.iter().enumerate() {
            assignment[i] = if k < val_alloc[c] {
                1
            } else if k < val_alloc[c] + test_alloc[c] {
                2
            } else {
                0
            };
        }
    }
    let mut out = Splits::default();
    for (r, a) in records.iter().zip(assignment) {
        match a {
            1 => out.val.push(r.clone()),
            2 => out.test.push(r.clone()),
            _ => out.train.push(r.clone()),
        }
    }
    out
}

pub const DEFAULT_EPSILON: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub epsilon: f64,
}

impl NormalizationStats {
    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    fn divisor(&self, j: usize) -> f64 {
        self.std[j].max(self.epsilon)
    }

    fn check_dim(&self, len: usize, op: &'static str) -> Result<()> {
        if len != self.mean.len() {
            return Err(Error::shape(
                op,
                format!("record has {len} features, statistics have {}", self.mean.len()),
            ));
        }
        Ok(())
    }
}

/// Per-feature mean and population standard deviation over `train`.
pub fn fit_normalizer(train: &[FlowRecord]) -> Result<NormalizationStats> {
    let first = train
        .first()
        .ok_or_else(|| Error::EmptyInput("cannot fit normalizer on zero records".into()))?;
    let n = first.features.len();
    let count = train.len() as f64;
    let mut mean = vec![0.0; n];
    for r in train {
        if r.features.len() != n {
            return Err(Error::shape(
                "fit_normalizer",
                format!("record {} has {} features, expected {n}", r.row_index, r.features.len()),
            ));
        }
        for (m, v) in mean.iter_mut().zip(&r.features) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    // Two-pass variance.
    let mut var = vec![0.0; n];
    for r in train {
        for ((s, v), m) in var.iter_mut().zip(&r.features).zip(&mean) {
            let d = v - m;
            *s += d * d;
        }
    }
    let std = var.into_iter().map(|s| (s / count).sqrt()).collect();
    Ok(NormalizationStats {
        mean,
        std,
        epsilon: DEFAULT_EPSILON,
    })
}

pub fn normalize(record: &FlowRecord, stats: &NormalizationStats) -> Result<FlowRecord> {
    stats.check_dim(record.features.len(), "normalize")?;
    let features = record
        .features
        .iter()
        .enumerate()
        .map(|(j, v)| (v - stats.mean[j]) / stats.divisor(j))
        .collect();
    Ok(FlowRecord {
        features,
        label: record.label,
        row_index: record.row_index,
    })
}

/// Inverse affine map of [`normalize`].
pub fn denormalize(record: &FlowRecord, stats: &NormalizationStats) -> Result<FlowRecord> {
    stats.check_dim(record.features.len(), "denormalize")?;
    let features = record
        .features
        .iter()
        .enumerate()
        .map(|(j, v)| v * stats.divisor(j) + stats.mean[j])
        .collect();
    Ok(FlowRecord {
        features,
        label: record.label,
        row_index: record.row_index,
    })
}

pub fn normalize_all(records: &[FlowRecord], stats: &NormalizationStats, exec: Execution) -> Result<Vec<FlowRecord>> {
    par::try_map(exec, records, |r| normalize(r, stats))
}
