use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{Optimizer, OptimizerConfig};
use super::window::{Window, WindowBatch, WindowSpec};
use super::{batch_loss_parts, window_loss, DetectLossConfig, DetectorModel, Gradients, ModelConfig, Parts};
use crate::error::{Error, Result};
use crate::par::{self, Execution};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    pub window_length: usize,
    pub window_stride: usize,
    #[serde(default)]
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 16,
            learning_rate: 1e-3,
            seed: 42,
            optimizer: OptimizerConfig::default(),
            window_length: 16,
            window_stride: 8,
            execution: Execution::default(),
        }
    }
}

impl TrainConfig {
    pub fn window_spec(&self) -> WindowSpec {
        WindowSpec {
            length: self.window_length,
            stride: self.window_stride,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.window_spec().validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning_rate must be a finite non-negative number, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub model: DetectorModel,
    /// Mean window loss over the whole training batch: entry 0 is before the
    /// first update, entry `e` after epoch `e`.
    pub curve: Vec<f64>,
}

/// Trains a freshly initialized model (seeded by `tc.seed`) on benign windows.
pub fn train(
    windows: &WindowBatch,
    model_cfg: &ModelConfig,
    tc: &TrainConfig,
    lc: &DetectLossConfig,
) -> Result<TrainOutcome> {
    let n = windows
        .n_features()
        .ok_or_else(|| Error::EmptyInput("no training windows".into()))?;
    let model = DetectorModel::init(n, model_cfg, tc.seed)?;
    train_from(model, windows, tc, lc)
}

pub(crate) fn check_training_windows(windows: &WindowBatch, n: usize, tc: &TrainConfig) -> Result<()> {
    if windows.is_empty() {
        return Err(Error::EmptyInput("no training windows".into()));
    }
    for w in &windows.windows {
        if w.label.is_anomalous() {
            return Err(Error::Contract(format!(
                "training window starting at row {} is labeled anomalous; training expects benign windows only",
                w.first_row
            )));
        }
        if w.x.cols() != n {
            return Err(Error::shape(
                "train",
                format!("window has {} features, model expects {n}", w.x.cols()),
            ));
        }
        if w.x.rows() != tc.window_length {
            return Err(Error::shape(
                "train",
                format!("window has {} steps, config says {}", w.x.rows(), tc.window_length),
            ));
        }
    }
    Ok(())
}

pub(crate) fn shuffle_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mean loss and mean gradient over `members`, reduced in input order.
pub(crate) fn minibatch_gradients(
    members: &[&Window],
    parts: Parts<'_>,
    template: &DetectorModel,
    lc: &DetectLossConfig,
    exec: Execution,
) -> Result<(f64, Gradients)> {
    let per_window = par::try_map(exec, members, |w| window_loss(&w.x, parts, lc, true))?;
    let mut total = 0.0;
    let mut grads = Gradients::zeros_like(template);
    for (loss, g) in &per_window {
        total += loss.total;
        grads.accumulate(g.as_ref().expect("requested"), 1.0)?;
    }
    let scale = 1.0 / members.len() as f64;
    for m in [
        &mut grads.w_q,
        &mut grads.w_k,
        &mut grads.enc_w,
        &mut grads.enc_b,
        &mut grads.dec_w,
        &mut grads.dec_b,
    ] {
        m.scale_in_place(scale);
    }
    Ok((total * scale, grads))
}

/// Continues training `model` on benign windows.
pub fn train_from(
    mut model: DetectorModel,
    windows: &WindowBatch,
    tc: &TrainConfig,
    lc: &DetectLossConfig,
) -> Result<TrainOutcome> {
    tc.validate()?;
    lc.validate()?;
    check_training_windows(windows, model.n_features(), tc)?;

    let shapes: Vec<_> = model.tensors().iter().map(|m| m.shape()).collect();
    let mut optimizer = Optimizer::new(tc.optimizer, tc.learning_rate, &shapes);
    let mut rng = shuffle_rng(tc.seed);
    let mut order: Vec<usize> = (0..windows.len()).collect();

    let mut curve = Vec::with_capacity(tc.epochs + 1);
    curve.push(epoch_loss(windows, &model, lc, tc.execution, 0)?);

    for epoch in 1..=tc.epochs {
        order.shuffle(&mut rng);
        for (batch_idx, chunk) in order.chunks(tc.batch_size).enumerate() {
            let members: Vec<&Window> = chunk.iter().map(|&i| &windows.windows[i]).collect();
            let (loss, grads) = minibatch_gradients(&members, model.parts(), &model, lc, tc.execution)?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: batch_idx,
                    detail: format!("minibatch loss is {loss}"),
                });
            }
            optimizer.step(&mut model.tensors_mut(), &grads.tensors())?;
            if !model.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: batch_idx,
                    detail: format!("non-finite parameters after update (loss before update {loss})"),
                });
            }
        }
        curve.push(epoch_loss(windows, &model, lc, tc.execution, epoch)?);
        log::debug!("epoch {epoch}: mean loss {:.6}", curve[epoch]);
    }
    Ok(TrainOutcome { model, curve })
}

fn epoch_loss(
    windows: &WindowBatch,
    model: &DetectorModel,
    lc: &DetectLossConfig,
    exec: Execution,
    epoch: usize,
) -> Result<f64> {
    epoch_loss_parts(windows, model.parts(), lc, exec, epoch)
}

pub(crate) fn epoch_loss_parts(
    windows: &WindowBatch,
    parts: Parts<'_>,
    lc: &DetectLossConfig,
    exec: Execution,
    epoch: usize,
) -> Result<f64> {
    let loss = batch_loss_parts(windows, parts, lc, exec)?.total;
    if !loss.is_finite() {
        return Err(Error::Divergence {
            epoch,
            batch: 0,
            detail: format!("mean epoch loss is {loss}"),
        });
    }
    Ok(loss)
}
