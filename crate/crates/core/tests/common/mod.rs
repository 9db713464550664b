#![allow(dead_code)]

pub mod fd;

use std::path::PathBuf;

use probmask::config::{ConfigFile, DatasetConfig, ModelConfig};
use probmask::{Constraint, FinalizeMode};

pub fn mnist_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}

/// The desk-scale MNIST run: MLP 784-32-10 on a 2,000-sample subset,
/// 40 epochs, ramp over epochs 5..25 down to 10% remaining.
pub fn reference_config() -> ConfigFile {
    let mut cfg = ConfigFile {
        seed: 0,
        model: ModelConfig::Mlp {
            sizes: vec![784, 32, 10],
        },
        dataset: DatasetConfig::Mnist {
            dir: mnist_dir(),
            train_size: 2000,
            eval_size: 0,
            subset_seed: 0,
        },
        ..ConfigFile::default()
    };
    let t = &mut cfg.train;
    t.epochs = 40;
    t.t1 = 5;
    t.t2 = 25;
    t.k_final = 0.1;
    t.batch_size = 32;
    t.lr_s = 2e-2;
    t.grad_samples = 1;
    t.finalize = FinalizeMode::Round;
    t.constraint = Constraint::Global;
    cfg
}

/// Small blobs problem for fast trainer tests.
pub fn blobs_config(seed: u64) -> ConfigFile {
    let mut cfg = ConfigFile {
        seed,
        model: ModelConfig::Mlp {
            sizes: vec![8, 16, 4],
        },
        dataset: DatasetConfig::Blobs {
            seed: 7,
            n_per_class: 40,
            eval_per_class: 20,
            classes: 4,
            dim: Some(8),
            spread: 0.3,
        },
        ..ConfigFile::default()
    };
    let t = &mut cfg.train;
    t.epochs = 12;
    t.t1 = 2;
    t.t2 = 8;
    t.k_final = 0.3;
    t.batch_size = 32;
    t.lr_s = 2e-2;
    t.lr_w = 0.05;
    cfg
}

/// Exact Euclidean projection onto `{0 <= s <= 1, sum(s) <= k}` by active-set
/// enumeration. Every coordinate is clipped to 0, clipped to 1 or free; with
/// the sum constraint either inactive (free coordinates equal z) or active
/// (free coordinates shifted by a common multiplier). KKT-feasible candidates
/// are kept and the closest one to `z` wins.
pub fn oracle_project(z: &[f64], k: f64) -> Vec<f64> {
    let n = z.len();
    assert!(n <= 12, "oracle_project refuses n = {n} > 12");
    const FEAS: f64 = 1e-12;
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut state = vec![0u8; n];
    for code in 0..3usize.pow(n as u32) {
        let mut c = code;
        for st in state.iter_mut() {
            *st = (c % 3) as u8;
            c /= 3;
        }
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 2).collect();
        let ones = state.iter().filter(|&&st| st == 1).count() as f64;
        let mut candidates = vec![0.0];
        if !free.is_empty() {
            // Sum active: sum_F (z_i - v) + |U| = k.
            let sz: f64 = free.iter().map(|&i| z[i]).sum();
            candidates.push((sz + ones - k) / free.len() as f64);
        }
        for v in candidates {
            if v < -FEAS {
                continue;
            }
            let s: Vec<f64> = (0..n)
                .map(|i| match state[i] {
                    0 => 0.0,
                    1 => 1.0,
                    _ => z[i] - v,
                })
                .collect();
            let sum: f64 = s.iter().sum();
            if s.iter().any(|&x| !(-FEAS..=1.0 + FEAS).contains(&x)) || sum > k + 1e-9 {
                continue;
            }
            // Multipliers of the bound constraints must have the right sign.
            let kkt = (0..n).all(|i| match state[i] {
                0 => z[i] - v <= FEAS,
                1 => z[i] - v >= 1.0 - FEAS,
                _ => true,
            });
            if !kkt {
                continue;
            }
            let d: f64 = s.iter().zip(z).map(|(a, b)| (a - b).powi(2)).sum();
            if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                best = Some((d, s));
            }
        }
    }
    best.expect("projection set is non-empty").1
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}
