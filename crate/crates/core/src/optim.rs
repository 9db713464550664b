//! Momentum SGD for weights and projected Adam for probabilities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::ProbVector;
use crate::projection::{self, DEFAULT_TOL};
use crate::schedule::budget;

pub const ADAM_BETAS: (f64, f64) = (0.9, 0.999);
pub const ADAM_EPS: f64 = 1e-8;

/// Momentum buffer for one parameter tensor.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SgdState {
    pub buf: Vec<f64>,
}

impl SgdState {
    pub fn new(len: usize) -> Self {
        Self { buf: vec![0.0; len] }
    }
}

/// `buf ← momentum·buf + (grad + wd·w)`, then `w ← w − lr·buf`.
pub fn sgd_step(
    w: &mut [f64],
    grad: &[f64],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
    state: &mut SgdState,
) -> Result<()> {
    if w.len() != grad.len() || w.len() != state.buf.len() {
        return Err(Error::Dimension(format!(
            "sgd: {} weights, {} gradients, {} buffer entries",
            w.len(),
            grad.len(),
            state.buf.len()
        )));
    }
    if !(0.0..1.0).contains(&momentum) {
        return Err(Error::Parameter(format!("momentum must be in [0, 1), got {momentum}")));
    }
    for ((wi, &gi), bi) in w.iter_mut().zip(grad).zip(&mut state.buf) {
        let g = gi + weight_decay * *wi;
        *bi = momentum * *bi + g;
        *wi -= lr * *bi;
    }
    Ok(())
}

/// First/second moment estimates for the probability vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// Bias-corrected Adam step without weight decay. Returns the unprojected point
/// `z = s − lr·m̂/(√v̂ + eps)`.
pub fn adam_step(s: &[f64], grad: &[f64], lr: f64, state: &mut AdamState) -> Result<Vec<f64>> {
    if s.len() != grad.len() || s.len() != state.m.len() || s.len() != state.v.len() {
        return Err(Error::Dimension(format!(
            "adam: {} parameters, {} gradients, {} moments",
            s.len(),
            grad.len(),
            state.m.len()
        )));
    }
    let (b1, b2) = ADAM_BETAS;
    state.step += 1;
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    let mut z = Vec::with_capacity(s.len());
    for i in 0..s.len() {
        let g = grad[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        z.push(s[i] - lr * m_hat / (v_hat.sqrt() + ADAM_EPS));
    }
    Ok(z)
}

/// How the sparsity budget is imposed on the probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    /// One budget `k·n` over all layers jointly.
    #[default]
    Global,
    /// Budget `k·n_l` for each layer separately.
    Layerwise,
}

/// Projects `z` (laid out like `like`) onto the feasible set for remaining ratio `ratio`.
pub fn project_probs(like: &ProbVector, z: &[f64], ratio: f64, constraint: Constraint) -> Result<ProbVector> {
    match constraint {
        Constraint::Global => {
            let k = budget(ratio, like.len());
            let r = projection::project_global(z, k, DEFAULT_TOL)?;
            like.with_flat(&r.s)
        }
        Constraint::Layerwise => {
            let mut layers = Vec::with_capacity(like.segments().len());
            let mut offset = 0;
            for seg in like.segments() {
                layers.push(z[offset..offset + seg.len()].to_vec());
                offset += seg.len();
            }
            let out = projection::project_layerwise(&layers, ratio, DEFAULT_TOL)?;
            like.with_segments(out.into_iter().map(|r| r.s).collect())
        }
    }
}

/// One projected-Adam update of the probabilities.
pub fn prob_update(
    s: &ProbVector,
    grad: &[f64],
    lr: f64,
    state: &mut AdamState,
    ratio: f64,
    constraint: Constraint,
) -> Result<ProbVector> {
    let flat = s.to_flat();
    let z = adam_step(&flat, grad, lr, state)?;
    project_probs(s, &z, ratio, constraint)
}
