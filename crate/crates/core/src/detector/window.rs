use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{FlowRecord, Label};
use crate::math::Matrix;

/// `T` consecutive records stacked into a `T × n` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub x: Matrix,
    /// Anomalous iff at least one member record is anomalous.
    pub label: Label,
    /// Offset of the first member in the windowed sequence.
    pub start: usize,
    /// Source-stream `row_index` of the first member.
    pub first_row: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct WindowBatch {
    pub windows: Vec<Window>,
}

impl WindowBatch {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.windows.iter().map(|w| w.label).collect()
    }

    pub fn n_features(&self) -> Option<usize> {
        self.windows.first().map(|w| w.x.cols())
    }

    /// Windows whose label is benign, in order.
    pub fn benign_only(&self) -> WindowBatch {
        WindowBatch {
            windows: self
                .windows
                .iter()
                .filter(|w| !w.label.is_anomalous())
                .cloned()
                .collect(),
        }
    }

    pub fn prefix(&self, count: usize) -> WindowBatch {
        WindowBatch {
            windows: self.windows[..count.min(self.windows.len())].to_vec(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub length: usize,
    pub stride: usize,
}

impl WindowSpec {
    pub fn validate(&self) -> Result<()> {
        if self.length < 2 || self.stride == 0 || self.stride > self.length {
            return Err(Error::Config(format!(
                "window length must be >= 2 and stride in [1, length]; got T={}, s={}",
                self.length, self.stride
            )));
        }
        Ok(())
    }
}

/// Slices `records` into windows `[i, i + T)` for `i = 0, s, 2s, …`,
/// discarding any trailing partial window.
pub fn make_windows(records: &[FlowRecord], length: usize, stride: usize) -> Result<WindowBatch> {
    WindowSpec { length, stride }.validate()?;
    if records.len() < length {
        return Err(Error::EmptyInput(format!(
            "{} records cannot fill a window of length {length}",
            records.len()
        )));
    }
    let n = records[0].features.len();
    let mut windows = Vec::new();
    let mut start = 0;
    while start + length <= records.len() {
        let members = &records[start..start + length];
        let mut data = Vec::with_capacity(length * n);
        for r in members {
            if r.features.len() != n {
                return Err(Error::shape(
                    "make_windows",
                    format!("record {} has {} features, expected {n}", r.row_index, r.features.len()),
                ));
            }
            data.extend_from_slice(&r.features);
        }
        let label = if members.iter().any(|r| r.label.is_anomalous()) {
            Label::Anomalous
        } else {
            Label::Benign
        };
        windows.push(Window {
            x: Matrix::from_vec(length, n, data)?,
            label,
            start,
            first_row: members[0].row_index,
        });
        start += stride;
    }
    Ok(WindowBatch { windows })
}
