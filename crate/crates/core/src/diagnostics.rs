//! Probability histograms, per-layer remaining ratios and the S-factor curve.
//!
//! Every record renders to CSV with a fixed header:
//! `bin_lo,bin_hi,count`, `layer,ratio` and `tau,S` respectively.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::mask::{sigmoid, Layout};

/// Distance from 0 or 1 under which a probability counts as converged.
pub const BINARY_BAND: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// `(bin_lo, bin_hi, count)` over equal-width bins of [0, 1].
    pub bins: Vec<(f64, f64, usize)>,
    pub frac_binary: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerRatios {
    pub rows: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SCurve {
    /// `(τ, S)` pairs in grid order.
    pub rows: Vec<(f64, f64)>,
    /// Positive root of `y − 2yσ(y) + 1 = 0`.
    pub stationary_root: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DiagRecord {
    Histogram(Histogram),
    LayerRatio(LayerRatios),
    SCurve(SCurve),
}

impl DiagRecord {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        match self {
            DiagRecord::Histogram(h) => {
                out.push_str("bin_lo,bin_hi,count\n");
                for (lo, hi, c) in &h.bins {
                    let _ = writeln!(out, "{lo},{hi},{c}");
                }
            }
            DiagRecord::LayerRatio(r) => {
                out.push_str("layer,ratio\n");
                for (name, ratio) in &r.rows {
                    let _ = writeln!(out, "{name},{ratio}");
                }
            }
            DiagRecord::SCurve(c) => {
                out.push_str("tau,S\n");
                for (tau, s) in &c.rows {
                    let _ = writeln!(out, "{tau},{s}");
                }
            }
        }
        out
    }
}

/// Fraction of entries within [`BINARY_BAND`] of 0 or 1.
pub fn frac_binary(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut near, mut total) = (0usize, 0usize);
    for v in values {
        total += 1;
        if v <= BINARY_BAND || v >= 1.0 - BINARY_BAND {
            near += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        near as f64 / total as f64
    }
}

pub fn prob_histogram(values: &[f64], bins: usize) -> Result<Histogram> {
    if bins < 2 {
        return Err(Error::Parameter(format!("need at least 2 bins, got {bins}")));
    }
    let mut counts = vec![0usize; bins];
    for &v in values {
        let idx = ((v * bins as f64).floor() as isize).clamp(0, bins as isize - 1) as usize;
        counts[idx] += 1;
    }
    let width = 1.0 / bins as f64;
    let bins = counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (i as f64 * width, if i + 1 == bins { 1.0 } else { (i + 1) as f64 * width }, c))
        .collect();
    Ok(Histogram {
        bins,
        frac_binary: frac_binary(values.iter().copied()),
    })
}

/// Mean of each segment: expected remaining ratio for probabilities, exact ratio
/// for hard masks.
pub fn layer_remaining(layout: &Layout, segments: &[Vec<f64>]) -> Result<LayerRatios> {
    if segments.len() != layout.names.len() {
        return Err(Error::Dimension(format!(
            "{} segments for {} layers",
            segments.len(),
            layout.names.len()
        )));
    }
    let rows = layout
        .names
        .iter()
        .zip(segments)
        .map(|(name, seg)| {
            let ratio = if seg.is_empty() {
                0.0
            } else {
                seg.iter().sum::<f64>() / seg.len() as f64
            };
            (name.clone(), ratio)
        })
        .collect();
    Ok(LayerRatios { rows })
}

/// `S = σ(rx)(1 − σ(rx)) x / (s(1 − s))` with `r = logit(s) + g` and `x = 1/τ`.
pub fn s_factor(s: f64, g: f64, tau: f64) -> f64 {
    let r = (s / (1.0 - s)).ln() + g;
    s_factor_r(r, s, 1.0 / tau)
}

/// S-factor as a function of `r` directly.
pub fn s_factor_r(r: f64, s: f64, x: f64) -> f64 {
    // σ(y)σ(−y) rather than σ(y)(1 − σ(y)): exact in both tails, and even in r.
    sigmoid(r * x) * sigmoid(-r * x) * x / (s * (1.0 - s))
}

/// Positive root of `y − 2yσ(y) + 1 = 0`, by bisection to `tol`.
pub fn stationary_root(tol: f64) -> f64 {
    let f = |y: f64| y - 2.0 * y * sigmoid(y) + 1.0;
    // f(0) = 1 > 0 and f(4) < 0.
    let (mut lo, mut hi) = (0.0f64, 4.0f64);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn s_factor_curve(s: f64, g: f64, taus: &[f64]) -> Result<SCurve> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::Parameter(format!("s must be in (0, 1), got {s}")));
    }
    if let Some(&bad) = taus.iter().find(|&&t| t.is_nan() || t <= 0.0) {
        return Err(Error::Parameter(format!("temperatures must be positive, got {bad}")));
    }
    Ok(SCurve {
        rows: taus.iter().map(|&tau| (tau, s_factor(s, g, tau))).collect(),
        stationary_root: stationary_root(1e-12),
    })
}

/// `count` temperatures evenly spaced from `hi` down to `lo`.
pub fn tau_grid(hi: f64, lo: f64, count: usize) -> Vec<f64> {
    if count < 2 {
        return vec![hi];
    }
    (0..count)
        .map(|i| hi + (lo - hi) * i as f64 / (count - 1) as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_of_binary_vector() {
        let h = prob_histogram(&[0.0, 0.0, 1.0, 1.0], 2).unwrap();
        assert_eq!(h.bins.iter().map(|b| b.2).collect::<Vec<_>>(), vec![2, 2]);
        assert_eq!(h.frac_binary, 1.0);
        assert_eq!(h.bins[1].1, 1.0);
    }

    #[test]
    fn histogram_of_halves() {
        let h = prob_histogram(&[0.5; 7], 10).unwrap();
        assert_eq!(h.frac_binary, 0.0);
        assert_eq!(h.bins.iter().map(|b| b.2).sum::<usize>(), 7);
        assert!(prob_histogram(&[0.5], 1).is_err());
    }

    #[test]
    fn layer_ratios_are_segment_means() {
        let layout = Layout {
            names: vec!["a".into(), "b".into()],
            shapes: vec![vec![2], vec![4]],
        };
        let r = layer_remaining(&layout, &[vec![1.0, 1.0], vec![0.1; 4]]).unwrap();
        assert_eq!(r.rows[0], ("a".to_string(), 1.0));
        assert!((r.rows[1].1 - 0.1).abs() < 1e-15);
        assert_eq!(
            DiagRecord::LayerRatio(r).to_csv().lines().next(),
            Some("layer,ratio")
        );
    }

    #[test]
    fn s_factor_at_half_is_one() {
        assert_eq!(s_factor(0.5, 0.0, 1.0), 1.0);
    }

    #[test]
    fn root_is_near_one_point_five_four() {
        let y = stationary_root(1e-12);
        assert!((y - 1.5434).abs() < 1e-4, "{y}");
        assert!((y - 2.0 * y * sigmoid(y) + 1.0).abs() < 1e-10);
    }

    #[test]
    fn curve_rejects_bad_arguments() {
        assert!(s_factor_curve(1.0, 0.0, &[1.0]).is_err());
        assert!(s_factor_curve(0.5, 0.0, &[0.0]).is_err());
    }
}
