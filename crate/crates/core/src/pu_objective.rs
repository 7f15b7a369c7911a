//! Positive-unlabeled objective over latent norms.
//!
//! With positive norms `p`, unlabeled norms `u`, `μ = mean(p)` and margin `m`:
//!
//! ```text
//! L = mean((p − μ)²) + λ_var · Var(p) + mean(max(0, μ + m − u))
//! ```
//!
//! `μ` is not detached: gradients flow through it into every positive norm.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_nn::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PuLossConfig {
    pub lambda_var: f32,
}

impl Default for PuLossConfig {
    fn default() -> Self {
        PuLossConfig { lambda_var: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PuLossValue {
    pub total: f32,
    pub consistency: f32,
    pub variance: f32,
    pub hinge: f32,
    pub mu: f32,
}

/// Gradients of the total loss.
#[derive(Debug, Clone, PartialEq)]
pub struct PuLossGrad {
    pub pos: Vec<f32>,
    pub unl: Vec<f32>,
    /// `∂L/∂m`.
    pub margin: f32,
}

impl PuLossGrad {
    /// `∂L/∂m̃` for a learned margin `m = softplus(m̃)`.
    pub fn raw_margin(&self, raw: f32) -> f32 {
        self.margin * sigmoid(raw)
    }
}

pub fn compute_mu(pos_norms: &[f32]) -> Result<f32> {
    if pos_norms.is_empty() {
        return Err(Error::InvalidArgument("no positive norms".into()));
    }
    Ok(pos_norms.iter().sum::<f32>() / pos_norms.len() as f32)
}

pub fn pu_loss(
    pos_norms: &[f32],
    unl_norms: &[f32],
    margin: f32,
    config: &PuLossConfig,
) -> Result<(PuLossValue, PuLossGrad)> {
    if unl_norms.is_empty() {
        return Err(Error::InvalidArgument("no unlabeled norms".into()));
    }
    if config.lambda_var < 0.0 {
        return Err(Error::InvalidArgument("lambda_var must be non-negative".into()));
    }
    let mu = compute_mu(pos_norms)?;
    let p = pos_norms.len() as f32;
    let u = unl_norms.len() as f32;

    let consistency = pos_norms.iter().map(|&n| (n - mu) * (n - mu)).sum::<f32>() / p;
    // Population variance: numerically the same statistic as the consistency
    // term, reported separately so λ_var can be toggled on its own.
    let variance = consistency;

    let threshold = mu + margin;
    let mut hinge = 0.0f32;
    let mut active = 0usize;
    let mut unl_grad = vec![0.0f32; unl_norms.len()];
    for (g, &n) in unl_grad.iter_mut().zip(unl_norms) {
        let gap = threshold - n;
        if gap > 0.0 {
            hinge += gap;
            active += 1;
            *g = -1.0 / u;
        }
    }
    hinge /= u;

    // d(consistency)/dp_i = 2(p_i − μ)/P (the μ path cancels since Σ(p − μ) = 0);
    // d(hinge)/dp_i = (active/U) · dμ/dp_i = active / (U·P).
    let quad_scale = 2.0 * (1.0 + config.lambda_var) / p;
    let hinge_share = active as f32 / (u * p);
    let pos_grad = pos_norms
        .iter()
        .map(|&n| quad_scale * (n - mu) + hinge_share)
        .collect();

    let value = PuLossValue {
        total: consistency + config.lambda_var * variance + hinge,
        consistency,
        variance,
        hinge,
        mu,
    };
    let grad = PuLossGrad {
        pos: pos_grad,
        unl: unl_grad,
        margin: active as f32 / u,
    };
    Ok((value, grad))
}

/// Clone decision: `‖f(x)‖₂ ≤ τ`.
pub fn decision(norm: f32, tau: f32) -> bool {
    norm <= tau
}
