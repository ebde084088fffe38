//! Attention encoder + bottleneck reconstruction head, the joint detection
//! loss, training and per-window scoring.
//!
//! For a window `X` (`T × n`) the model computes the attention context `Z`,
//! then reconstructs it row-wise through a tanh bottleneck:
//! `Ẑ = tanh(Z·W_enc + b_enc)·W_dec + b_dec`. The loss is
//! `Σ_t ‖Z_t − Ẑ_t‖² + λ·sparsity(A)`.

mod optim;
mod train;
mod window;

pub use optim::{Optimizer, OptimizerConfig};
pub use train::{train, train_from, TrainConfig, TrainOutcome};
pub use window::{make_windows, Window, WindowBatch, WindowSpec};

pub(crate) use train::{check_training_windows, epoch_loss_parts, minibatch_gradients, shuffle_rng};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{attend_backward, attend_forward, AttentionParams};
use crate::error::{Error, Result};
use crate::math::{finite_diff_check, CheckReport, Coordinates, Matrix, ParamTensor};
use crate::par::{self, Execution};

/// Affine layer `y = x·W + b` applied to each row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense {
            weight: Matrix::zeros(fan_in, fan_out),
            bias: Matrix::zeros(1, fan_out),
        }
    }

    fn xavier(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut d = Dense::zeros(fan_in, fan_out);
        d.weight = xavier_uniform(fan_in, fan_out, rng);
        d
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        x.matmul(&self.weight)?.add_row_broadcast(&self.bias)
    }

    pub fn fan_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.cols()
    }
}

fn xavier_uniform(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)).collect();
    Matrix::from_vec(fan_in, fan_out, data).expect("length matches shape")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionHead {
    pub encoder: Dense,
    pub decoder: Dense,
}

impl ReconstructionHead {
    pub fn bottleneck(&self) -> usize {
        self.encoder.fan_out()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_k: usize,
    /// Bottleneck width `b`; must satisfy `1 <= b < n`.
    pub bottleneck: usize,
    /// Plain-autoencoder ablation: skip attention and use `Z := X`.
    #[serde(default)]
    pub bypass_attention: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_k: 16,
            bottleneck: 4,
            bypass_attention: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self, n_features: usize) -> Result<()> {
        if self.d_k == 0 {
            return Err(Error::Config("d_k must be positive".into()));
        }
        if self.bottleneck == 0 || self.bottleneck >= n_features {
            return Err(Error::Config(format!(
                "bottleneck width must be in [1, {}), got {}",
                n_features, self.bottleneck
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub attention: AttentionParams,
    pub head: ReconstructionHead,
    #[serde(default)]
    pub bypass_attention: bool,
}

impl DetectorModel {
    /// Xavier-uniform weights, zero biases, drawn from a seeded stream.
    pub fn init(n_features: usize, config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate(n_features)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let w_q = xavier_uniform(n_features, config.d_k, &mut rng);
        let w_k = xavier_uniform(n_features, config.d_k, &mut rng);
        let encoder = Dense::xavier(n_features, config.bottleneck, &mut rng);
        let decoder = Dense::xavier(config.bottleneck, n_features, &mut rng);
        Ok(DetectorModel {
            attention: AttentionParams::new(w_q, w_k)?,
            head: ReconstructionHead { encoder, decoder },
            bypass_attention: config.bypass_attention,
        })
    }

    pub fn n_features(&self) -> usize {
        self.attention.n_features()
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            d_k: self.attention.d_k,
            bottleneck: self.head.bottleneck(),
            bypass_attention: self.bypass_attention,
        }
    }

    pub(crate) fn parts(&self) -> Parts<'_> {
        Parts {
            attention: &self.attention,
            encoder: &self.head.encoder,
            decoder: &self.head.decoder,
            bypass: self.bypass_attention,
        }
    }

    /// Parameter matrices in a fixed order: W_q, W_k, W_enc, b_enc, W_dec, b_dec.
    pub fn tensors(&self) -> [&Matrix; 6] {
        [
            &self.attention.w_q,
            &self.attention.w_k,
            &self.head.encoder.weight,
            &self.head.encoder.bias,
            &self.head.decoder.weight,
            &self.head.decoder.bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Matrix; 6] {
        [
            &mut self.attention.w_q,
            &mut self.attention.w_k,
            &mut self.head.encoder.weight,
            &mut self.head.encoder.bias,
            &mut self.head.decoder.weight,
            &mut self.head.decoder.bias,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|m| m.is_finite())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SparsityMode {
    /// `Σ_t ‖A_t‖₁`. Constant (= T) for a row-stochastic `A`.
    #[default]
    #[serde(rename = "as-written-l1")]
    AsWrittenL1,
    /// `Σ_t −Σ_t' a log(a + 1e-12)`: rewards concentrated attention rows.
    Entropy,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectLossConfig {
    pub lambda: f64,
    pub sparsity_mode: SparsityMode,
}

impl Default for DetectLossConfig {
    fn default() -> Self {
        DetectLossConfig {
            lambda: 0.1,
            sparsity_mode: SparsityMode::default(),
        }
    }
}

impl DetectLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }
}

const ENTROPY_GUARD: f64 = 1e-12;

/// Attention sparsity penalty for a row-stochastic `a`, and its gradient.
pub fn sparsity(a: &Matrix, mode: SparsityMode) -> (f64, Matrix) {
    match mode {
        SparsityMode::Off => (0.0, Matrix::zeros(a.rows(), a.cols())),
        SparsityMode::AsWrittenL1 => {
            let value = a.data().iter().map(|v| v.abs()).sum();
            let grad = a.map(|v| {
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            });
            (value, grad)
        }
        SparsityMode::Entropy => {
            let value = -a.data().iter().map(|&v| v * (v + ENTROPY_GUARD).ln()).sum::<f64>();
            let grad = a.map(|v| -((v + ENTROPY_GUARD).ln() + v / (v + ENTROPY_GUARD)));
            (value, grad)
        }
    }
}

/// Loss terms for one window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowLoss {
    pub recon: f64,
    pub sparsity: f64,
    pub total: f64,
    /// Number of time steps in the window.
    pub steps: usize,
}

impl WindowLoss {
    /// Mean squared reconstruction error per time step.
    pub fn score(&self) -> f64 {
        self.recon / self.steps as f64
    }
}

/// Batch-mean loss terms plus per-window totals.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recon: f64,
    pub sparsity: f64,
    pub total: f64,
    pub per_window: Vec<f64>,
}

impl LossBreakdown {
    pub fn from_windows(losses: &[WindowLoss]) -> Self {
        let n = losses.len().max(1) as f64;
        LossBreakdown {
            recon: losses.iter().map(|l| l.recon).sum::<f64>() / n,
            sparsity: losses.iter().map(|l| l.sparsity).sum::<f64>() / n,
            total: losses.iter().map(|l| l.total).sum::<f64>() / n,
            per_window: losses.iter().map(|l| l.total).collect(),
        }
    }
}

/// Borrowed view of the pieces that make up one detector: shared by the
/// plain model and by each task of a transfer model.
#[derive(Clone, Copy)]
pub(crate) struct Parts<'a> {
    pub attention: &'a AttentionParams,
    pub encoder: &'a Dense,
    pub decoder: &'a Dense,
    pub bypass: bool,
}

/// Gradients in the order of [`DetectorModel::tensors`], plus the input.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub enc_w: Matrix,
    pub enc_b: Matrix,
    pub dec_w: Matrix,
    pub dec_b: Matrix,
    pub x: Matrix,
}

impl Gradients {
    pub fn tensors(&self) -> [&Matrix; 6] {
        [&self.w_q, &self.w_k, &self.enc_w, &self.enc_b, &self.dec_w, &self.dec_b]
    }

    pub(crate) fn accumulate(&mut self, other: &Gradients, weight: f64) -> Result<()> {
        self.w_q.axpy(weight, &other.w_q)?;
        self.w_k.axpy(weight, &other.w_k)?;
        self.enc_w.axpy(weight, &other.enc_w)?;
        self.enc_b.axpy(weight, &other.enc_b)?;
        self.dec_w.axpy(weight, &other.dec_w)?;
        self.dec_b.axpy(weight, &other.dec_b)?;
        Ok(())
    }

    pub(crate) fn zeros_like(model: &DetectorModel) -> Self {
        let z = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        Gradients {
            w_q: z(&model.attention.w_q),
            w_k: z(&model.attention.w_k),
            enc_w: z(&model.head.encoder.weight),
            enc_b: z(&model.head.encoder.bias),
            dec_w: z(&model.head.decoder.weight),
            dec_b: z(&model.head.decoder.bias),
            x: Matrix::zeros(0, 0),
        }
    }
}

fn check_window(x: &Matrix, parts: &Parts<'_>) -> Result<()> {
    let n = parts.attention.n_features();
    if x.cols() != n || parts.encoder.fan_in() != n || parts.decoder.fan_out() != n {
        return Err(Error::shape(
            "detector",
            format!(
                "window {:?}, attention n={}, encoder {:?}, decoder {:?}",
                x.shape(),
                n,
                parts.encoder.weight.shape(),
                parts.decoder.weight.shape()
            ),
        ));
    }
    if x.rows() == 0 {
        return Err(Error::shape("detector", "window has no time steps"));
    }
    Ok(())
}

pub(crate) fn window_loss(
    x: &Matrix,
    parts: Parts<'_>,
    cfg: &DetectLossConfig,
    want_grad: bool,
) -> Result<(WindowLoss, Option<Gradients>)> {
    check_window(x, &parts)?;
    let att = if parts.bypass {
        None
    } else {
        Some(attend_forward(x, parts.attention)?)
    };
    let z = att.as_ref().map_or(x, |o| &o.z);

    let hidden = parts.encoder.forward(z)?.map(f64::tanh);
    let recon_z = parts.decoder.forward(&hidden)?;
    let resid = recon_z.sub(z)?;
    let recon = resid.sum_squares();

    let (sparsity_value, sparsity_grad) = match &att {
        Some(o) => {
            let (v, g) = sparsity(&o.a, cfg.sparsity_mode);
            (v, Some(g))
        }
        None => (0.0, None),
    };
    let loss = WindowLoss {
        recon,
        sparsity: sparsity_value,
        total: recon + cfg.lambda * sparsity_value,
        steps: x.rows(),
    };
    if !want_grad {
        return Ok((loss, None));
    }

    // Ẑ = H·W_dec + b_dec, H = tanh(U), U = Z·W_enc + b_enc.
    let d_recon_z = resid.scale(2.0);
    let dec_w = hidden.t_matmul(&d_recon_z)?;
    let dec_b = d_recon_z.col_sums();
    let d_hidden = d_recon_z.matmul_t(&parts.decoder.weight)?;
    let d_pre = d_hidden.zip_map(&hidden, "tanh_backward", |g, h| g * (1.0 - h * h))?;
    let enc_w = z.t_matmul(&d_pre)?;
    let enc_b = d_pre.col_sums();
    let mut dz = d_pre.matmul_t(&parts.encoder.weight)?;
    dz.axpy(-1.0, &d_recon_z)?;

    let n = x.cols();
    let d_k = parts.attention.d_k;
    let grads = match (&att, sparsity_grad) {
        (Some(o), Some(sg)) => {
            let da = sg.scale(cfg.lambda);
            let ag = attend_backward(o, &dz, Some(&da), x, parts.attention)?;
            Gradients {
                w_q: ag.dw_q,
                w_k: ag.dw_k,
                enc_w,
                enc_b,
                dec_w,
                dec_b,
                x: ag.dx,
            }
        }
        _ => Gradients {
            w_q: Matrix::zeros(n, d_k),
            w_k: Matrix::zeros(n, d_k),
            enc_w,
            enc_b,
            dec_w,
            dec_b,
            x: dz,
        },
    };
    Ok((loss, Some(grads)))
}

/// Joint detection loss for one window.
pub fn loss_detect(x: &Matrix, model: &DetectorModel, cfg: &DetectLossConfig) -> Result<WindowLoss> {
    Ok(window_loss(x, model.parts(), cfg, false)?.0)
}

/// Loss and analytic gradients for one window.
pub fn loss_detect_with_grad(
    x: &Matrix,
    model: &DetectorModel,
    cfg: &DetectLossConfig,
) -> Result<(WindowLoss, Gradients)> {
    let (loss, grads) = window_loss(x, model.parts(), cfg, true)?;
    Ok((loss, grads.expect("requested")))
}

pub(crate) fn batch_loss_parts(
    batch: &WindowBatch,
    parts: Parts<'_>,
    cfg: &DetectLossConfig,
    exec: Execution,
) -> Result<LossBreakdown> {
    let losses = par::try_map(exec, &batch.windows, |w| {
        Ok::<_, Error>(window_loss(&w.x, parts, cfg, false)?.0)
    })?;
    Ok(LossBreakdown::from_windows(&losses))
}

/// Mean loss over a batch.
pub fn batch_loss(
    batch: &WindowBatch,
    model: &DetectorModel,
    cfg: &DetectLossConfig,
    exec: Execution,
) -> Result<LossBreakdown> {
    batch_loss_parts(batch, model.parts(), cfg, exec)
}

/// Per-window anomaly score: `(1/T)·Σ_t ‖Z_t − Ẑ_t‖²`. The sparsity term is
/// not part of the score.
pub fn score(x: &Matrix, model: &DetectorModel) -> Result<f64> {
    let cfg = DetectLossConfig {
        lambda: 0.0,
        sparsity_mode: SparsityMode::Off,
    };
    Ok(loss_detect(x, model, &cfg)?.score())
}

pub fn score_batch(batch: &WindowBatch, model: &DetectorModel, exec: Execution) -> Result<Vec<f64>> {
    par::try_map(exec, &batch.windows, |w| score(&w.x, model))
}

pub const TENSOR_NAMES: [&str; 6] = ["w_q", "w_k", "enc_w", "enc_b", "dec_w", "dec_b"];

/// Central-difference check of the full loss gradient for every parameter
/// tensor and the input window. Returns one report per tensor, the input
/// last (named `"x"`).
pub fn check_loss_gradients(
    x: &Matrix,
    model: &DetectorModel,
    cfg: &DetectLossConfig,
    h: f64,
    tol: f64,
) -> Result<Vec<(&'static str, CheckReport)>> {
    let (_, grads) = loss_detect_with_grad(x, model, cfg)?;
    let total = |probe: &DetectorModel, input: &Matrix| loss_detect(input, probe, cfg).map_or(f64::NAN, |l| l.total);
    let mut reports = Vec::with_capacity(7);
    for (idx, grad) in grads.tensors().into_iter().enumerate() {
        let param = ParamTensor::with_grad(model.tensors()[idx].clone(), grad.clone())?;
        let mut probe = model.clone();
        let report = finite_diff_check(
            |m| {
                *probe.tensors_mut()[idx] = m.clone();
                total(&probe, x)
            },
            &param,
            h,
            tol,
            Coordinates::All,
        )?;
        reports.push((TENSOR_NAMES[idx], report));
    }
    let param = ParamTensor::with_grad(x.clone(), grads.x)?;
    reports.push((
        "x",
        finite_diff_check(|m| total(model, m), &param, h, tol, Coordinates::All)?,
    ));
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::row_softmax;

    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.random_range(-1.5..1.5)).collect(),
        )
        .unwrap()
    }

    fn random_model(rng: &mut ChaCha8Rng, n: usize, d_k: usize, b: usize) -> DetectorModel {
        DetectorModel {
            attention: AttentionParams::new(random(rng, n, d_k), random(rng, n, d_k)).unwrap(),
            head: ReconstructionHead {
                encoder: Dense {
                    weight: random(rng, n, b),
                    bias: random(rng, 1, b),
                },
                decoder: Dense {
                    weight: random(rng, b, n),
                    bias: random(rng, 1, n),
                },
            },
            bypass_attention: false,
        }
    }

    #[test]
    fn perfect_reconstruction_scores_zero() {
        // Constant window, so Z is constant too; a zero encoder with the
        // decoder bias set to that row reproduces Z exactly (b = n here).
        let x = Matrix::from_rows(&[[0.5, -1.0, 2.0], [0.5, -1.0, 2.0]]).unwrap();
        let model = DetectorModel {
            attention: AttentionParams::zeros(3, 2),
            head: ReconstructionHead {
                encoder: Dense::zeros(3, 3),
                decoder: Dense {
                    weight: Matrix::zeros(3, 3),
                    bias: Matrix::from_rows(&[[0.5, -1.0, 2.0]]).unwrap(),
                },
            },
            bypass_attention: false,
        };
        let cfg = DetectLossConfig {
            lambda: 0.0,
            sparsity_mode: SparsityMode::AsWrittenL1,
        };
        let l = loss_detect(&x, &model, &cfg).unwrap();
        assert_eq!(l.total, 0.0);
        assert_eq!(score(&x, &model).unwrap(), 0.0);
    }

    #[test]
    fn as_written_l1_is_window_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for t in 2..8 {
            let model = random_model(&mut rng, 4, 3, 2);
            let x = random(&mut rng, t, 4).scale(5.0);
            let l = loss_detect(&x, &model, &DetectLossConfig::default()).unwrap();
            assert!((l.sparsity - t as f64).abs() < 1e-9);
            assert!((l.total - (l.recon + 0.1 * l.sparsity)).abs() < 1e-9);
        }
    }

    #[test]
    fn entropy_term_matches_definition() {
        let a = row_softmax(&Matrix::from_rows(&[[0.0, 1.0, 2.0], [3.0, 0.0, 0.0]]).unwrap());
        let (v, _) = sparsity(&a, SparsityMode::Entropy);
        let mut expected = 0.0;
        for &p in a.data() {
            expected -= p * (p + 1e-12).ln();
        }
        assert!((v - expected).abs() < 1e-15);
        assert!(v > 0.0);
        let (off, g) = sparsity(&a, SparsityMode::Off);
        assert_eq!(off, 0.0);
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn score_quadruples_when_residual_doubles() {
        // Zero encoder makes Ẑ = b_dec, so the residual is Z − b_dec.
        let x = Matrix::from_rows(&[[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]]).unwrap();
        let build = |bias: Vec<f64>| DetectorModel {
            attention: AttentionParams::zeros(3, 2),
            head: ReconstructionHead {
                encoder: Dense::zeros(3, 2),
                decoder: Dense {
                    weight: Matrix::zeros(2, 3),
                    bias: Matrix::from_vec(1, 3, bias).unwrap(),
                },
            },
            bypass_attention: false,
        };
        let s1 = score(&x, &build(vec![0.5, 2.25, 2.0])).unwrap();
        let s2 = score(&x, &build(vec![0.0, 2.5, 1.0])).unwrap();
        assert!(s1 > 0.0);
        assert!((s2 - 4.0 * s1).abs() < 1e-12);
    }

    #[test]
    fn scores_are_non_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..50 {
            let model = random_model(&mut rng, 5, 3, 2);
            let x = random(&mut rng, 6, 5);
            assert!(score(&x, &model).unwrap() >= 0.0);
        }
    }

    #[test]
    fn shape_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = random_model(&mut rng, 4, 2, 2);
        assert!(matches!(score(&Matrix::zeros(3, 5), &model), Err(Error::Shape { .. })));
    }

    #[test]
    fn init_rejects_non_compressing_bottleneck() {
        let cfg = ModelConfig {
            d_k: 4,
            bottleneck: 8,
            bypass_attention: false,
        };
        assert!(matches!(DetectorModel::init(8, &cfg, 0), Err(Error::Config(_))));
        let ok = DetectorModel::init(8, &ModelConfig::default(), 0).unwrap();
        assert_eq!(ok, DetectorModel::init(8, &ModelConfig::default(), 0).unwrap());
        assert_eq!(ok.head.encoder.bias.max_abs(), 0.0);
        let limit = (6.0f64 / (8.0 + 16.0)).sqrt();
        assert!(ok.attention.w_q.max_abs() <= limit);
    }

    fn max_fd_error(x: &Matrix, model: &DetectorModel, cfg: &DetectLossConfig) -> f64 {
        check_loss_gradients(x, model, cfg, 1e-5, 1e-4)
            .unwrap()
            .iter()
            .map(|(_, r)| r.max_rel_error)
            .fold(0.0, f64::max)
    }

    #[test]
    fn gradients_pass_finite_difference_in_every_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for mode in [SparsityMode::AsWrittenL1, SparsityMode::Entropy, SparsityMode::Off] {
            for _ in 0..8 {
                let t = rng.random_range(2..=6);
                let n = rng.random_range(2..=5);
                let b = rng.random_range(1..n);
                let d = rng.random_range(1..=4);
                let model = random_model(&mut rng, n, d, b);
                let x = random(&mut rng, t, n);
                let cfg = DetectLossConfig {
                    lambda: 0.3,
                    sparsity_mode: mode,
                };
                let err = max_fd_error(&x, &model, &cfg);
                assert!(err < 1e-4, "{mode:?} T={t} n={n} b={b}: {err}");
            }
        }
    }

    #[test]
    fn bypass_gradients_pass_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let mut model = random_model(&mut rng, 4, 2, 2);
        model.bypass_attention = true;
        let x = random(&mut rng, 5, 4);
        let err = max_fd_error(&x, &model, &DetectLossConfig::default());
        assert!(err < 1e-4);
        let (l, g) = loss_detect_with_grad(&x, &model, &DetectLossConfig::default()).unwrap();
        assert_eq!(l.sparsity, 0.0);
        assert_eq!(g.w_q.max_abs(), 0.0);
    }

    #[test]
    fn parallel_and_sequential_batch_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let model = random_model(&mut rng, 4, 3, 2);
        let batch = WindowBatch {
            windows: (0..40)
                .map(|i| Window {
                    x: random(&mut rng, 6, 4),
                    label: crate::ingest::Label::Benign,
                    start: i,
                    first_row: i,
                })
                .collect(),
        };
        let cfg = DetectLossConfig::default();
        assert_eq!(
            batch_loss(&batch, &model, &cfg, Execution::Sequential).unwrap(),
            batch_loss(&batch, &model, &cfg, Execution::Parallel).unwrap()
        );
        assert_eq!(
            score_batch(&batch, &model, Execution::Sequential).unwrap(),
            score_batch(&batch, &model, Execution::Parallel).unwrap()
        );
    }
}
