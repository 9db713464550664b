//! Euclidean projection onto `C = { s : 0 <= s_i <= 1, Σ s_i <= K }`.
//!
//! The projection has the closed form `s = clip(z - v*, 0, 1)` with
//! `v* = max(0, v1)`, where `v1` is a root of the piecewise-linear residual
//!
//! ```text
//! r(v) = Σ_i min(1, max(0, z_i - v)) - K
//! ```
//!
//! `r` is continuous and non-increasing, `r(min(z) - 1) = n - K >= 0` and
//! `r(max(z)) = -K < 0`, so bisection on that bracket always converges.

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const MAX_ITERATIONS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    pub s: Vec<f64>,
    /// Shift `v* = max(0, v1)` subtracted before clipping.
    pub v_star: f64,
    pub iterations: usize,
    /// `|r(v*)|` at termination; zero when the sum constraint is slack.
    pub residual: f64,
}

fn clip01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// `Σ_i min(1, max(0, z_i - v)) - K`.
pub fn residual(v: f64, z: &[f64], budget: f64) -> f64 {
    z.iter().map(|&zi| clip01(zi - v)).sum::<f64>() - budget
}

/// Projects `z` onto `C` with budget `K`.
pub fn project_global(z: &[f64], budget: f64, tol: f64) -> Result<ProjectionResult> {
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("projection input contains non-finite values".into()));
    }
    if !budget.is_finite() || budget <= 0.0 {
        return Err(Error::Parameter(format!("budget must be positive, got {budget}")));
    }
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::Parameter(format!("tolerance must be positive, got {tol}")));
    }

    let clipped: Vec<f64> = z.iter().map(|&zi| clip01(zi)).collect();
    if clipped.iter().sum::<f64>() <= budget {
        return Ok(ProjectionResult {
            s: clipped,
            v_star: 0.0,
            iterations: 0,
            residual: 0.0,
        });
    }

    // r(0) > 0 here, so the root is positive and 0 is a valid lower end.
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = z.iter().copied().fold(f64::INFINITY, f64::min);
    let mut lo = (min - 1.0).max(0.0);
    let mut hi = max;
    let mut iterations = 0;
    let mut v = hi;
    while iterations < MAX_ITERATIONS {
        if hi - lo <= tol {
            // r(hi) <= 0 keeps the sum within budget.
            v = hi;
            break;
        }
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            v = hi;
            break;
        }
        let r = residual(mid, z, budget);
        // Only accept from the feasible side, so the output is within budget
        // and projecting it again is a no-op.
        if (-tol..=0.0).contains(&r) {
            v = mid;
            break;
        }
        if r > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        v = hi;
    }

    let s = z.iter().map(|&zi| clip01(zi - v)).collect();
    Ok(ProjectionResult {
        s,
        v_star: v,
        iterations,
        residual: residual(v, z, budget).abs(),
    })
}

/// Projects each layer onto its own budget `K_l = k · n_l`.
pub fn project_layerwise(layers: &[Vec<f64>], ratio: f64, tol: f64) -> Result<Vec<ProjectionResult>> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Parameter(format!(
            "remaining ratio must be in (0, 1], got {ratio}"
        )));
    }
    layers
        .iter()
        .enumerate()
        .map(|(i, z)| {
            if z.is_empty() {
                return Err(Error::Input(format!("layer {i} is empty")));
            }
            project_global(z, ratio * z.len() as f64, tol)
        })
        .collect()
}
