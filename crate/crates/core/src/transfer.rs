//! Multi-task fine-tuning: adapt a trained detector to new traffic domains by
//! minimizing `L_source + Σ_i λ_i·L_target,i`.
//!
//! Attention and encoder are always shared. By default each target task gets
//! its own decoder (initialized from the source decoder); [`Sharing::AllShared`]
//! routes every task through the source decoder instead.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detector::{
    batch_loss_parts, check_training_windows, epoch_loss_parts, minibatch_gradients, shuffle_rng, Dense,
    DetectLossConfig, DetectorModel, Gradients, LossBreakdown, Optimizer, Parts, TrainConfig, Window, WindowBatch,
};
use crate::error::{Error, Result};
use crate::math::Matrix;
use crate::par::Execution;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sharing {
    #[default]
    PerTaskDecoder,
    AllShared,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TargetTask {
    pub windows: WindowBatch,
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransferConfig {
    pub tasks: Vec<TargetTask>,
    /// Declared number of target tasks; must equal `tasks.len()`.
    pub m: usize,
    pub train: TrainConfig,
    pub sharing: Sharing,
}

impl TransferConfig {
    pub fn new(tasks: Vec<TargetTask>, train: TrainConfig, sharing: Sharing) -> Self {
        TransferConfig {
            m: tasks.len(),
            tasks,
            train,
            sharing,
        }
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.tasks.iter().map(|t| t.lambda).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.m != self.tasks.len() {
            return Err(Error::Config(format!(
                "m = {} but {} target tasks were given",
                self.m,
                self.tasks.len()
            )));
        }
        for (i, task) in self.tasks.iter().enumerate() {
            if !(task.lambda >= 0.0) || !task.lambda.is_finite() {
                return Err(Error::Config(format!(
                    "target task {i}: lambda must be finite and non-negative, got {}",
                    task.lambda
                )));
            }
            if task.windows.is_empty() {
                return Err(Error::EmptyInput(format!("target task {i} has no windows")));
            }
        }
        self.train.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferModel {
    pub shared: DetectorModel,
    pub sharing: Sharing,
    /// One decoder per target task under [`Sharing::PerTaskDecoder`], empty
    /// otherwise.
    pub target_decoders: Vec<Dense>,
}

impl TransferModel {
    pub fn from_pretrained(model: DetectorModel, sharing: Sharing, m: usize) -> Self {
        let target_decoders = match sharing {
            Sharing::PerTaskDecoder => vec![model.head.decoder.clone(); m],
            Sharing::AllShared => Vec::new(),
        };
        TransferModel {
            shared: model,
            sharing,
            target_decoders,
        }
    }

    pub fn n_tasks_supported(&self) -> Option<usize> {
        match self.sharing {
            Sharing::PerTaskDecoder => Some(self.target_decoders.len()),
            Sharing::AllShared => None,
        }
    }

    /// Standalone detector for target task `i`.
    pub fn task_model(&self, i: usize) -> Result<DetectorModel> {
        let mut model = self.shared.clone();
        if self.sharing == Sharing::PerTaskDecoder {
            model.head.decoder = self
                .target_decoders
                .get(i)
                .ok_or_else(|| Error::Config(format!("no decoder for target task {i}")))?
                .clone();
        }
        Ok(model)
    }

    fn task_parts(&self, i: usize) -> Parts<'_> {
        let mut parts = self.shared.parts();
        if self.sharing == Sharing::PerTaskDecoder {
            parts.decoder = &self.target_decoders[i];
        }
        parts
    }

    /// Shared tensors in [`DetectorModel::tensors`] order, then weight and
    /// bias of each target decoder.
    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut v: Vec<&Matrix> = self.shared.tensors().into_iter().collect();
        for d in &self.target_decoders {
            v.push(&d.weight);
            v.push(&d.bias);
        }
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v: Vec<&mut Matrix> = self.shared.tensors_mut().into_iter().collect();
        for d in &mut self.target_decoders {
            v.push(&mut d.weight);
            v.push(&mut d.bias);
        }
        v
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|m| m.is_finite())
    }

    fn check(&self, config: &TransferConfig) -> Result<()> {
        if let Some(k) = self.n_tasks_supported() {
            if k != config.m {
                return Err(Error::Config(format!(
                    "model has {k} target decoders but the config declares m = {}",
                    config.m
                )));
            }
        }
        let n = self.shared.n_features();
        for (i, task) in config.tasks.iter().enumerate() {
            if let Some(got) = task.windows.n_features() {
                if got != n {
                    return Err(Error::shape(
                        "transfer",
                        format!(
                            "target task {i} has {got} features but the pretrained model expects {n}; \
                             re-ingest the target data with the source schema so the feature columns match"
                        ),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Composition of the transfer loss at fixed parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferLoss {
    pub source: LossBreakdown,
    pub targets: Vec<LossBreakdown>,
    pub lambdas: Vec<f64>,
    pub total: f64,
}

/// Mean source loss plus the λ-weighted mean loss of every target task.
pub fn loss_transfer(
    model: &TransferModel,
    source: &WindowBatch,
    config: &TransferConfig,
    lc: &DetectLossConfig,
) -> Result<TransferLoss> {
    config.validate()?;
    lc.validate()?;
    model.check(config)?;
    if source.is_empty() {
        return Err(Error::EmptyInput("source batch is empty".into()));
    }
    let exec = config.train.execution;
    let source_loss = batch_loss_parts(source, model.shared.parts(), lc, exec)?;
    let mut total = source_loss.total;
    let mut targets = Vec::with_capacity(config.m);
    for (i, task) in config.tasks.iter().enumerate() {
        let l = batch_loss_parts(&task.windows, model.task_parts(i), lc, exec)?;
        total += task.lambda * l.total;
        targets.push(l);
    }
    Ok(TransferLoss {
        source: source_loss,
        targets,
        lambdas: config.lambdas(),
        total,
    })
}

/// [`loss_transfer`] plus its gradient in [`TransferModel::tensors`] order.
pub fn loss_transfer_with_grad(
    model: &TransferModel,
    source: &WindowBatch,
    config: &TransferConfig,
    lc: &DetectLossConfig,
) -> Result<(TransferLoss, Vec<Matrix>)> {
    let loss = loss_transfer(model, source, config, lc)?;
    let source_members: Vec<&Window> = source.windows.iter().collect();
    let target_members: Vec<Vec<&Window>> = config
        .tasks
        .iter()
        .map(|t| t.windows.windows.iter().collect())
        .collect();
    let (_, grads) = joint_gradients(
        model,
        &source_members,
        &target_members,
        &config.lambdas(),
        lc,
        config.train.execution,
    )?;
    Ok((loss, grads))
}

/// Minibatch loss and gradient of the transfer objective. Tasks with λ = 0
/// are skipped entirely, so the shared gradient is then exactly the source
/// gradient.
fn joint_gradients(
    model: &TransferModel,
    source: &[&Window],
    targets: &[Vec<&Window>],
    lambdas: &[f64],
    lc: &DetectLossConfig,
    exec: Execution,
) -> Result<(f64, Vec<Matrix>)> {
    let (mut total, mut shared) = minibatch_gradients(source, model.shared.parts(), &model.shared, lc, exec)?;
    let mut decoders: Vec<(Matrix, Matrix)> = model
        .target_decoders
        .iter()
        .map(|d| {
            (
                Matrix::zeros(d.weight.rows(), d.weight.cols()),
                Matrix::zeros(d.bias.rows(), d.bias.cols()),
            )
        })
        .collect();
    for (i, (members, &lambda)) in targets.iter().zip(lambdas).enumerate() {
        if lambda == 0.0 {
            continue;
        }
        let (loss, g) = minibatch_gradients(members, model.task_parts(i), &model.shared, lc, exec)?;
        total += lambda * loss;
        match model.sharing {
            Sharing::PerTaskDecoder => {
                accumulate_encoder(&mut shared, &g, lambda)?;
                decoders[i].0.axpy(lambda, &g.dec_w)?;
                decoders[i].1.axpy(lambda, &g.dec_b)?;
            }
            Sharing::AllShared => shared.accumulate(&g, lambda)?,
        }
    }
    let mut out: Vec<Matrix> = vec![
        shared.w_q,
        shared.w_k,
        shared.enc_w,
        shared.enc_b,
        shared.dec_w,
        shared.dec_b,
    ];
    for (w, b) in decoders {
        out.push(w);
        out.push(b);
    }
    Ok((total, out))
}

fn accumulate_encoder(into: &mut Gradients, g: &Gradients, weight: f64) -> Result<()> {
    into.w_q.axpy(weight, &g.w_q)?;
    into.w_k.axpy(weight, &g.w_k)?;
    into.enc_w.axpy(weight, &g.enc_w)?;
    into.enc_b.axpy(weight, &g.enc_b)
}

/// Endless reshuffled stream over one task's windows.
struct TaskCursor {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl TaskCursor {
    fn new(len: usize, seed: u64, task: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(2 + task as u64);
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng);
        TaskCursor { order, pos: 0, rng }
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let size = size.min(self.order.len());
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FineTuneOutcome {
    pub model: TransferModel,
    /// Mean source loss per epoch (entry 0 before any update).
    pub source_curve: Vec<f64>,
    /// Mean loss of each target task per epoch.
    pub target_curves: Vec<Vec<f64>>,
    /// `source + Σ λ_i·target_i` per epoch.
    pub total_curve: Vec<f64>,
}

/// Jointly optimizes source and target losses starting from `pretrained`.
///
/// The source minibatch schedule is the one [`crate::detector::train_from`]
/// uses for the same seed; each target task draws its own minibatches from a
/// separate seeded stream, one per source step.
pub fn fine_tune(
    pretrained: &DetectorModel,
    source: &WindowBatch,
    config: &TransferConfig,
    lc: &DetectLossConfig,
) -> Result<FineTuneOutcome> {
    let model = TransferModel::from_pretrained(pretrained.clone(), config.sharing, config.m);
    fine_tune_from(model, source, config, lc)
}

pub fn fine_tune_from(
    mut model: TransferModel,
    source: &WindowBatch,
    config: &TransferConfig,
    lc: &DetectLossConfig,
) -> Result<FineTuneOutcome> {
    config.validate()?;
    lc.validate()?;
    model.check(config)?;
    let tc = &config.train;
    check_training_windows(source, model.shared.n_features(), tc)?;
    for task in &config.tasks {
        check_training_windows(&task.windows, model.shared.n_features(), tc)?;
    }

    let shapes: Vec<_> = model.tensors().iter().map(|m| m.shape()).collect();
    let mut optimizer = Optimizer::new(tc.optimizer, tc.learning_rate, &shapes);
    let mut rng = shuffle_rng(tc.seed);
    let mut order: Vec<usize> = (0..source.len()).collect();
    let mut cursors: Vec<TaskCursor> = config
        .tasks
        .iter()
        .enumerate()
        .map(|(i, t)| TaskCursor::new(t.windows.len(), tc.seed, i))
        .collect();
    let lambdas = config.lambdas();

    let mut outcome = FineTuneOutcome {
        model: model.clone(),
        source_curve: Vec::with_capacity(tc.epochs + 1),
        target_curves: vec![Vec::with_capacity(tc.epochs + 1); config.m],
        total_curve: Vec::with_capacity(tc.epochs + 1),
    };
    record_epoch(&mut outcome, &model, source, config, lc, 0)?;

    for epoch in 1..=tc.epochs {
        order.shuffle(&mut rng);
        for (batch_idx, chunk) in order.chunks(tc.batch_size).enumerate() {
            let members: Vec<&Window> = chunk.iter().map(|&i| &source.windows[i]).collect();
            let target_members: Vec<Vec<&Window>> = config
                .tasks
                .iter()
                .zip(&mut cursors)
                .map(|(task, cursor)| {
                    if task.lambda == 0.0 {
                        Vec::new()
                    } else {
                        cursor
                            .next_batch(tc.batch_size)
                            .into_iter()
                            .map(|i| &task.windows.windows[i])
                            .collect()
                    }
                })
                .collect();
            let (loss, grads) = joint_gradients(&model, &members, &target_members, &lambdas, lc, tc.execution)?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: batch_idx,
                    detail: format!("transfer minibatch loss is {loss}"),
                });
            }
            let grad_refs: Vec<&Matrix> = grads.iter().collect();
            optimizer.step(&mut model.tensors_mut(), &grad_refs)?;
            if !model.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: batch_idx,
                    detail: format!("non-finite parameters after transfer update (loss before update {loss})"),
                });
            }
        }
        record_epoch(&mut outcome, &model, source, config, lc, epoch)?;
    }
    outcome.model = model;
    Ok(outcome)
}

fn record_epoch(
    outcome: &mut FineTuneOutcome,
    model: &TransferModel,
    source: &WindowBatch,
    config: &TransferConfig,
    lc: &DetectLossConfig,
    epoch: usize,
) -> Result<()> {
    let exec = config.train.execution;
    let s = epoch_loss_parts(source, model.shared.parts(), lc, exec, epoch)?;
    let mut total = s;
    for (i, task) in config.tasks.iter().enumerate() {
        let t = epoch_loss_parts(&task.windows, model.task_parts(i), lc, exec, epoch)?;
        total += task.lambda * t;
        outcome.target_curves[i].push(t);
    }
    outcome.source_curve.push(s);
    outcome.total_curve.push(total);
    log::debug!("transfer epoch {epoch}: source {s:.6}, total {total:.6}");
    Ok(())
}

/// First epoch whose loss is at or below `epsilon`.
pub fn epochs_to_reach(curve: &[f64], epsilon: f64) -> Option<usize> {
    curve.iter().position(|&l| l <= epsilon)
}

/// Epochs each arm needs to bring the target loss down to `epsilon`, taken
/// as `factor` times the converged (final) fine-tuned target loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptationComparison {
    pub epsilon: f64,
    pub fine_tune_epochs: Option<usize>,
    pub scratch_epochs: Option<usize>,
    pub fine_tune_curve: Vec<f64>,
    pub scratch_curve: Vec<f64>,
}

impl AdaptationComparison {
    /// True when fine-tuning reaches `epsilon` strictly earlier. An arm that
    /// never gets there counts as slower than any arm that does.
    pub fn fine_tune_is_faster(&self) -> bool {
        match (self.fine_tune_epochs, self.scratch_epochs) {
            (Some(f), Some(s)) => f < s,
            (Some(_), None) => true,
            _ => false,
        }
    }
}

/// Runs the same transfer schedule from `pretrained` and from `fresh` and
/// compares how fast target task `task` converges.
pub fn compare_adaptation(
    pretrained: &DetectorModel,
    fresh: &DetectorModel,
    source: &WindowBatch,
    config: &TransferConfig,
    lc: &DetectLossConfig,
    task: usize,
    factor: f64,
) -> Result<AdaptationComparison> {
    if task >= config.m {
        return Err(Error::Config(format!(
            "target task {task} out of range (m = {})",
            config.m
        )));
    }
    let tuned = fine_tune(pretrained, source, config, lc)?;
    let scratch = fine_tune(fresh, source, config, lc)?;
    let fine_tune_curve = tuned.target_curves[task].clone();
    let scratch_curve = scratch.target_curves[task].clone();
    let converged = *fine_tune_curve.last().expect("curve has an initial entry");
    let epsilon = factor * converged;
    Ok(AdaptationComparison {
        epsilon,
        fine_tune_epochs: epochs_to_reach(&fine_tune_curve, epsilon),
        scratch_epochs: epochs_to_reach(&scratch_curve, epsilon),
        fine_tune_curve,
        scratch_curve,
    })
}
