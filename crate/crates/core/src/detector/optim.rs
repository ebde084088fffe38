use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Sgd,
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_adam_eps")]
        epsilon: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adam {
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_adam_eps(),
        }
    }
}

/// Optimizer state for a fixed list of parameter matrices.
#[derive(Clone, Debug)]
pub struct Optimizer {
    config: OptimizerConfig,
    learning_rate: f64,
    step: i32,
    moments: Vec<(Matrix, Matrix)>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, learning_rate: f64, shapes: &[(usize, usize)]) -> Self {
        let moments = match config {
            OptimizerConfig::Sgd => Vec::new(),
            OptimizerConfig::Adam { .. } => shapes
                .iter()
                .map(|&(r, c)| (Matrix::zeros(r, c), Matrix::zeros(r, c)))
                .collect(),
        };
        Optimizer {
            config,
            learning_rate,
            step: 0,
            moments,
        }
    }

    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[&Matrix]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Contract(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let lr = self.learning_rate;
        match self.config {
            OptimizerConfig::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    p.axpy(-lr, g)?;
                }
            }
            OptimizerConfig::Adam { beta1, beta2, epsilon } => {
                if self.moments.len() != params.len() {
                    return Err(Error::Contract("optimizer state does not match parameter list".into()));
                }
                let bc1 = 1.0 - beta1.powi(self.step);
                let bc2 = 1.0 - beta2.powi(self.step);
                for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.moments.iter_mut()) {
                    if p.shape() != g.shape() || p.shape() != m.shape() {
                        return Err(Error::Contract(format!(
                            "parameter {:?} vs gradient {:?}",
                            p.shape(),
                            g.shape()
                        )));
                    }
                    let pd = p.data_mut();
                    let md = m.data_mut();
                    let vd = v.data_mut();
                    for (i, &gi) in g.data().iter().enumerate() {
                        md[i] = beta1 * md[i] + (1.0 - beta1) * gi;
                        vd[i] = beta2 * vd[i] + (1.0 - beta2) * gi * gi;
                        let m_hat = md[i] / bc1;
                        let v_hat = vd[i] / bc2;
                        pd[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_moves_against_gradient() {
        let mut p = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let g = Matrix::from_rows(&[[0.5, -1.0]]).unwrap();
        let mut opt = Optimizer::new(OptimizerConfig::Sgd, 0.1, &[(1, 2)]);
        opt.step(&mut [&mut p], &[&g]).unwrap();
        assert_eq!(p.data(), &[0.95, 2.1]);
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        let mut p = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let g = Matrix::from_rows(&[[3.0, -0.01]]).unwrap();
        let mut opt = Optimizer::new(OptimizerConfig::default(), 1e-3, &[(1, 2)]);
        opt.step(&mut [&mut p], &[&g]).unwrap();
        assert!((p.get(0, 0) - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((p.get(0, 1) - (2.0 + 1e-3)).abs() < 1e-6);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut p = Matrix::from_rows(&[[4.0, -3.0]]).unwrap();
        let mut opt = Optimizer::new(OptimizerConfig::default(), 0.05, &[(1, 2)]);
        for _ in 0..2000 {
            let g = p.scale(2.0);
            opt.step(&mut [&mut p], &[&g]).unwrap();
        }
        assert!(p.max_abs() < 1e-2, "{p:?}");
    }
}
