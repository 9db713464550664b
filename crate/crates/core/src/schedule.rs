//! Temperature annealing, remaining-ratio ramp and weight learning-rate schedules.
//!
//! All schedules are evaluated once per epoch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TAU_HI: f64 = 0.97;
pub const TAU_LO: f64 = 0.03;

/// Epochs of linear learning-rate warmup when warmup is enabled.
pub const WARMUP_EPOCHS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    /// Total epochs `T`.
    pub epochs: usize,
    /// Ramp start `t1`: the remaining ratio is 1 up to here.
    pub t1: usize,
    /// Ramp end `t2`: the remaining ratio is `k_final` from here on.
    pub t2: usize,
    pub k_final: f64,
}

impl ScheduleParams {
    pub fn new(epochs: usize, t1: usize, t2: usize, k_final: f64) -> Result<Self> {
        let p = Self {
            epochs,
            t1,
            t2,
            k_final,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t1 < self.t2 && self.t2 <= self.epochs) {
            return Err(Error::Parameter(format!(
                "schedule needs t1 < t2 <= T, got t1 = {}, t2 = {}, T = {}",
                self.t1, self.t2, self.epochs
            )));
        }
        if !(self.k_final > 0.0 && self.k_final <= 1.0) {
            return Err(Error::Parameter(format!(
                "final remaining ratio must be in (0, 1], got {}",
                self.k_final
            )));
        }
        Ok(())
    }

    /// `τ = 0.97 (1 - t/T) + 0.03`.
    pub fn temperature(&self, t: usize) -> Result<f64> {
        if t > self.epochs || self.epochs == 0 {
            return Err(Error::Parameter(format!(
                "epoch {t} outside 0..={}",
                self.epochs
            )));
        }
        Ok(TAU_HI * (1.0 - t as f64 / self.epochs as f64) + TAU_LO)
    }

    /// Cubic ramp from 1 at `t1` down to `k_final` at `t2`.
    pub fn remaining_ratio(&self, t: usize) -> f64 {
        if t <= self.t1 {
            1.0
        } else if t >= self.t2 {
            self.k_final
        } else {
            let progress = (t - self.t1) as f64 / (self.t2 - self.t1) as f64;
            self.k_final + (1.0 - self.k_final) * (1.0 - progress).powi(3)
        }
    }
}

/// Budget `K = k · n`; kept real-valued.
pub fn budget(ratio: f64, n: usize) -> f64 {
    ratio * n as f64
}

/// Cosine decay over `epochs` for 1-based `epoch`, with optional linear warmup.
pub fn weight_lr(base: f64, epoch: usize, epochs: usize, warmup: bool) -> f64 {
    let progress = epoch.saturating_sub(1) as f64 / epochs.max(1) as f64;
    let mut lr = 0.5 * base * (1.0 + (std::f64::consts::PI * progress).cos());
    if warmup && epoch <= WARMUP_EPOCHS {
        lr *= epoch as f64 / WARMUP_EPOCHS as f64;
    }
    lr
}
