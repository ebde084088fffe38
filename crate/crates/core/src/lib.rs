//! Flow-record anomaly detection with a self-attention encoder and a
//! reconstruction head.
//!
//! The pipeline is: [`ingest`] (parse, clean, split, z-score) →
//! [`detector::make_windows`] → [`detector::train`] on benign windows →
//! [`detector::score`] → [`eval`] threshold calibration. [`transfer`] adapts a
//! trained model to new traffic domains and [`synth`] generates labeled test
//! traffic.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attention;
pub mod checkpoint;
pub mod detector;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod math;
pub mod par;
pub mod pipeline;
pub mod synth;
pub mod transfer;

pub use error::{Error, Result};
pub use par::Execution;
