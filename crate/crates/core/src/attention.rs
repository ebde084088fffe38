//! Single-head self-attention over the time axis of a window.
//!
//! `A = softmax((X·W_q)(X·W_k)ᵀ / √d_k)` row-wise, then `Z = A·X`. The raw
//! window rows are the values; there is no value projection and no
//! positional encoding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{row_softmax, row_softmax_backward, Matrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub d_k: usize,
}

impl AttentionParams {
    pub fn new(w_q: Matrix, w_k: Matrix) -> Result<Self> {
        if w_q.shape() != w_k.shape() || w_q.cols() == 0 {
            return Err(Error::shape(
                "AttentionParams::new",
                format!(
                    "W_q {:?} and W_k {:?} must share a non-zero inner dimension",
                    w_q.shape(),
                    w_k.shape()
                ),
            ));
        }
        let d_k = w_q.cols();
        Ok(AttentionParams { w_q, w_k, d_k })
    }

    pub fn zeros(n_features: usize, d_k: usize) -> Self {
        AttentionParams {
            w_q: Matrix::zeros(n_features, d_k),
            w_k: Matrix::zeros(n_features, d_k),
            d_k,
        }
    }

    pub fn n_features(&self) -> usize {
        self.w_q.rows()
    }

    pub fn scale(&self) -> f64 {
        1.0 / (self.d_k as f64).sqrt()
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.d_k == 0 || self.w_q.shape() != (self.w_q.rows(), self.d_k) || self.w_k.shape() != self.w_q.shape() {
            return Err(Error::shape(
                "attention",
                format!(
                    "W_q {:?}, W_k {:?}, d_k {}",
                    self.w_q.shape(),
                    self.w_k.shape(),
                    self.d_k
                ),
            ));
        }
        Ok(())
    }
}

/// Forward results plus the intermediates the backward pass needs.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionOutput {
    /// `T × T`, row-stochastic.
    pub a: Matrix,
    /// `T × n`.
    pub z: Matrix,
    pub queries: Matrix,
    pub keys: Matrix,
    pub logits: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionGrads {
    pub dx: Matrix,
    pub dw_q: Matrix,
    pub dw_k: Matrix,
}

pub fn attend_forward(x: &Matrix, params: &AttentionParams) -> Result<AttentionOutput> {
    params.validate()?;
    if x.cols() != params.n_features() {
        return Err(Error::shape(
            "attend_forward",
            format!("window has {} features, W_q expects {}", x.cols(), params.n_features()),
        ));
    }
    let queries = x.matmul(&params.w_q)?;
    let keys = x.matmul(&params.w_k)?;
    let logits = queries.matmul_t(&keys)?.scale(params.scale());
    let a = row_softmax(&logits);
    let z = a.matmul(x)?;
    Ok(AttentionOutput {
        a,
        z,
        queries,
        keys,
        logits,
    })
}

/// Gradients of a scalar loss that depends on `Z` (through `dz`) and
/// optionally on `A` directly (through `da`).
pub fn attend_backward(
    output: &AttentionOutput,
    dz: &Matrix,
    da: Option<&Matrix>,
    x: &Matrix,
    params: &AttentionParams,
) -> Result<AttentionGrads> {
    let t = x.rows();
    let stale = output.z.shape() != x.shape()
        || output.a.shape() != (t, t)
        || output.queries.shape() != (t, params.d_k)
        || output.keys.shape() != (t, params.d_k)
        || dz.shape() != x.shape()
        || da.is_some_and(|d| d.shape() != (t, t));
    if stale {
        return Err(Error::Contract(format!(
            "attention cache does not match inputs: x {:?}, z {:?}, a {:?}, dz {:?}",
            x.shape(),
            output.z.shape(),
            output.a.shape(),
            dz.shape()
        )));
    }

    // Z = A·X
    let mut d_attn = dz.matmul_t(x)?;
    if let Some(da) = da {
        d_attn.add_assign(da)?;
    }
    let mut dx = output.a.t_matmul(dz)?;

    // A = softmax(S), S = Q·Kᵀ·scale
    let mut d_logits = row_softmax_backward(&output.a, &d_attn)?;
    d_logits.scale_in_place(params.scale());
    let dq = d_logits.matmul(&output.keys)?;
    let dk = d_logits.t_matmul(&output.queries)?;

    // Q = X·W_q, K = X·W_k
    let dw_q = x.t_matmul(&dq)?;
    let dw_k = x.t_matmul(&dk)?;
    dx.add_assign(&dq.matmul_t(&params.w_q)?)?;
    dx.add_assign(&dk.matmul_t(&params.w_k)?)?;

    Ok(AttentionGrads { dx, dw_q, dw_k })
}
