//! Bernoulli mask reparameterization.
//!
//! A mask entry `m_i ~ Bernoulli(s_i)` is realized through two Gumbel(0, 1) draws:
//!
//! ```text
//! m_i = 1[ logit(s_i) + g1_i - g0_i >= 0 ]
//! ```
//!
//! which has `P(m_i = 1) = s_i` exactly. Replacing the indicator by
//! `σ((logit(s_i) + g1_i - g0_i) / τ)` gives a differentiable soft mask whose
//! derivative w.r.t. `s_i` is
//!
//! ```text
//! σ'(a_i) / (τ · s_i (1 - s_i)),   a_i = (logit(s_i) + g1_i - g0_i) / τ
//! ```

use rand::RngCore;

use crate::error::{Error, Result};
use crate::net::NetSpec;
use crate::rng;

/// Clamp applied to probabilities before taking their logit.
pub const PROB_EPS: f64 = 1e-6;

/// Names and shapes of the maskable tensors of a network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub names: Vec<String>,
    pub shapes: Vec<Vec<usize>>,
}

impl Layout {
    pub fn from_spec(spec: &NetSpec) -> Self {
        let (names, shapes) = spec.maskable().map(|p| (p.name.clone(), p.shape.clone())).unzip();
        Self { names, shapes }
    }

    pub fn lens(&self) -> Vec<usize> {
        self.shapes.iter().map(|s| s.iter().product()).collect()
    }

    pub fn total(&self) -> usize {
        self.lens().iter().sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// The probability vector `s ∈ [0,1]^n`, split into one segment per maskable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector {
    layout: Layout,
    segments: Vec<Vec<f64>>,
}

impl ProbVector {
    pub fn new(layout: Layout, segments: Vec<Vec<f64>>) -> Result<Self> {
        let lens: Vec<usize> = segments.iter().map(Vec::len).collect();
        if lens != layout.lens() {
            return Err(Error::Dimension(format!(
                "segment lengths {lens:?} do not match layout {:?}",
                layout.lens()
            )));
        }
        if segments
            .iter()
            .flatten()
            .any(|v| !v.is_finite() || !(0.0..=1.0).contains(v))
        {
            return Err(Error::Input("probabilities must lie in [0, 1]".into()));
        }
        Ok(Self { layout, segments })
    }

    /// All-ones vector: every weight kept with certainty.
    pub fn ones(layout: Layout) -> Self {
        let segments = layout.lens().into_iter().map(|n| vec![1.0; n]).collect();
        Self { layout, segments }
    }

    pub fn filled(layout: Layout, value: f64) -> Result<Self> {
        let segments = layout.lens().into_iter().map(|n| vec![value; n]).collect();
        Self::new(layout, segments)
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn segments(&self) -> &[Vec<f64>] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.layout.index_of(name).map(|i| self.segments[i].as_slice())
    }

    pub fn len(&self) -> usize {
        self.segments.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sum(&self) -> f64 {
        self.segments.iter().flatten().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.segments.iter().flatten().copied()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.iter().collect()
    }

    /// Rebuild from a flat vector with this vector's layout.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.len() {
            return Err(Error::Dimension(format!(
                "flat vector has {} entries, expected {}",
                flat.len(),
                self.len()
            )));
        }
        let mut segments = Vec::with_capacity(self.segments.len());
        let mut offset = 0;
        for seg in &self.segments {
            segments.push(flat[offset..offset + seg.len()].to_vec());
            offset += seg.len();
        }
        Self::new(self.layout.clone(), segments)
    }

    pub fn with_segments(&self, segments: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(self.layout.clone(), segments)
    }
}

/// Paired Gumbel(0, 1) noise `(g1, g0)`, shaped like a [`ProbVector`].
#[derive(Debug, Clone, PartialEq)]
pub struct GumbelDraw {
    pub g1: Vec<Vec<f64>>,
    pub g0: Vec<Vec<f64>>,
}

impl GumbelDraw {
    pub fn sample<R: RngCore + ?Sized>(layout: &Layout, rng: &mut R) -> Self {
        let lens = layout.lens();
        let g1 = lens.iter().map(|&n| sample_gumbel(n, rng)).collect();
        let g0 = lens.iter().map(|&n| sample_gumbel(n, rng)).collect();
        Self { g1, g0 }
    }

    /// Zero noise, for deterministic evaluation of the relaxation.
    pub fn zeros(layout: &Layout) -> Self {
        let z: Vec<Vec<f64>> = layout.lens().into_iter().map(|n| vec![0.0; n]).collect();
        Self { g1: z.clone(), g0: z }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    Soft,
    Hard,
}

/// A realized mask, one segment per maskable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSample {
    pub values: Vec<Vec<f64>>,
    pub kind: MaskKind,
}

impl MaskSample {
    pub fn filled(spec: &NetSpec, value: f64, kind: MaskKind) -> Self {
        let values = spec.maskable().map(|p| vec![value; p.numel()]).collect();
        Self { values, kind }
    }

    pub fn len(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `‖m‖₁ / n`.
    pub fn remaining_ratio(&self) -> f64 {
        let n = self.len();
        if n == 0 {
            return 0.0;
        }
        self.values.iter().flatten().sum::<f64>() / n as f64
    }
}

/// `n` draws of `-ln(-ln U)` with `U` uniform on the open interval (0, 1).
pub fn sample_gumbel<R: RngCore + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| gumbel_from_uniform(rng::open_unit(rng))).collect()
}

pub fn gumbel_from_uniform(u: f64) -> f64 {
    -(-u.ln()).ln()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn clamp_prob(s: f64) -> f64 {
    s.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

fn logit(s: f64) -> f64 {
    (s / (1.0 - s)).ln()
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!("temperature must be positive, got {tau}")))
    }
}

fn check_draw(s: &ProbVector, draw: &GumbelDraw) -> Result<()> {
    let lens = s.layout().lens();
    let g1: Vec<usize> = draw.g1.iter().map(Vec::len).collect();
    let g0: Vec<usize> = draw.g0.iter().map(Vec::len).collect();
    if g1 != lens || g0 != lens {
        return Err(Error::Dimension("Gumbel draw does not match probability layout".into()));
    }
    Ok(())
}

/// Pre-activation `(logit(s) + g1 - g0) / τ` of the relaxed mask entry.
fn pre_activation(s: f64, g1: f64, g0: f64, tau: f64) -> f64 {
    (logit(clamp_prob(s)) + g1 - g0) / tau
}

/// Relaxed mask `σ((logit(s) + g1 - g0) / τ)`.
pub fn soft_mask(s: &ProbVector, draw: &GumbelDraw, tau: f64) -> Result<MaskSample> {
    check_tau(tau)?;
    check_draw(s, draw)?;
    let values = s
        .segments()
        .iter()
        .zip(draw.g1.iter().zip(&draw.g0))
        .map(|(seg, (g1, g0))| {
            seg.iter()
                .zip(g1.iter().zip(g0))
                .map(|(&si, (&a, &b))| sigmoid(pre_activation(si, a, b, tau)))
                .collect()
        })
        .collect();
    Ok(MaskSample {
        values,
        kind: MaskKind::Soft,
    })
}

/// Exact Bernoulli sample `1[logit(s) + g1 - g0 >= 0]`. Probabilities within
/// [`PROB_EPS`] of 0 or 1 are treated as deterministic.
pub fn hard_mask(s: &ProbVector, draw: &GumbelDraw) -> Result<MaskSample> {
    check_draw(s, draw)?;
    let values = s
        .segments()
        .iter()
        .zip(draw.g1.iter().zip(&draw.g0))
        .map(|(seg, (g1, g0))| {
            seg.iter()
                .zip(g1.iter().zip(g0))
                .map(|(&si, (&a, &b))| hard_entry(si, a, b))
                .collect()
        })
        .collect();
    Ok(MaskSample {
        values,
        kind: MaskKind::Hard,
    })
}

fn hard_entry(s: f64, g1: f64, g0: f64) -> f64 {
    if s <= PROB_EPS {
        0.0
    } else if s >= 1.0 - PROB_EPS || logit(s) + g1 - g0 >= 0.0 {
        1.0
    } else {
        0.0
    }
}

/// `∂m_i/∂s_i` of the relaxed mask at a fixed draw.
pub fn soft_mask_derivative(s: f64, g1: f64, g0: f64, tau: f64) -> f64 {
    let sc = clamp_prob(s);
    let a = pre_activation(s, g1, g0, tau);
    sigmoid(a) * sigmoid(-a) / (tau * sc * (1.0 - sc))
}

/// Chains `∂L/∂m` through the relaxed mask to `∂L/∂s` for one draw.
pub fn chain_grad_to_prob(
    grad_mask: &[Vec<f64>],
    s: &ProbVector,
    draw: &GumbelDraw,
    tau: f64,
) -> Result<Vec<Vec<f64>>> {
    check_tau(tau)?;
    check_draw(s, draw)?;
    let lens: Vec<usize> = grad_mask.iter().map(Vec::len).collect();
    if lens != s.layout().lens() {
        return Err(Error::Dimension("mask gradient does not match probability layout".into()));
    }
    Ok(grad_mask
        .iter()
        .zip(s.segments())
        .zip(draw.g1.iter().zip(&draw.g0))
        .map(|((gm, seg), (g1, g0))| {
            gm.iter()
                .zip(seg)
                .zip(g1.iter().zip(g0))
                .map(|((&g, &si), (&a, &b))| {
                    if g == 0.0 {
                        0.0
                    } else {
                        g * soft_mask_derivative(si, a, b, tau)
                    }
                })
                .collect()
        })
        .collect())
}
