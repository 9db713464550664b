//! The ProbMask training loop.
//!
//! ```text
//! s ← 1
//! for epoch t = 1..=T:
//!     τ ← 0.97 (1 − t/T) + 0.03;   k ← cubic ramp(t)
//!     for each mini-batch:
//!         draw I Gumbel pairs; one forward/backward per draw with soft masks
//!         s ← proj_C(Adam(s, mean ∇_s L))          (budget k·n)
//!         w ← SGD(w, mean ∇_w L)                  (skipped for supermasks)
//! return w ∘ m with m ~ Bernoulli(s)
//! ```
//!
//! Both gradients of an iteration come from the same draws and the same backward
//! pass. Randomness is drawn from streams keyed by `(seed, epoch, iteration,
//! sample)`, so a run is reproducible regardless of thread count.

use std::fmt;
use std::fmt::Write as _;

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset};
use crate::diagnostics::frac_binary;
use crate::error::{Error, Result};
use crate::mask::{self, GumbelDraw, Layout, MaskKind, MaskSample, ProbVector};
use crate::net::{self, NetSpec, NetState};
use crate::optim::{self, AdamState, SgdState};
use crate::rng::{self, Purpose};
use crate::schedule::{self, ScheduleParams};
use crate::tensor::Tensor;

pub use crate::optim::Constraint;

/// Environment variable capping the threads used for parallel gradient samples.
pub const THREADS_ENV: &str = "PROBMASK_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Train weights and probabilities jointly.
    #[default]
    Prune,
    /// Keep weights at their Kaiming initialization; learn only the mask.
    Supermask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalizeMode {
    /// Draw `m ~ Bernoulli(s)`.
    #[default]
    Sample,
    /// `m_i = 1[s_i >= 0.5]`.
    Round,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub constraint: Constraint,
    pub schedule: ScheduleParams,
    pub batch_size: usize,
    /// Gumbel draws per iteration (`I`).
    pub grad_samples: usize,
    pub seed: u64,
    pub lr_w: f64,
    pub lr_s: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub warmup: bool,
    pub finalize: FinalizeMode,
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Prune,
            constraint: Constraint::Global,
            schedule: ScheduleParams {
                epochs: 300,
                t1: 48,
                t2: 180,
                k_final: 0.1,
            },
            batch_size: 256,
            grad_samples: 1,
            seed: 0,
            lr_w: 0.1,
            lr_s: 6e-3,
            momentum: 0.9,
            weight_decay: 0.0,
            warmup: false,
            finalize: FinalizeMode::Sample,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schedule.epochs > 0 {
            self.schedule.validate()?;
        }
        if self.grad_samples == 0 {
            return Err(Error::Parameter("grad_samples must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch_size must be at least 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Parameter("eval_every must be at least 1".into()));
        }
        if !(self.lr_w >= 0.0 && self.lr_s >= 0.0) {
            return Err(Error::Parameter("learning rates must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Parameter(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch's iterations.
    pub loss: f64,
    /// Eval accuracy of the finalized mask; NaN on epochs that were not evaluated.
    pub accuracy: f64,
    /// `Σs / n` at the end of the epoch.
    pub mean_s: f64,
    pub frac_binary: f64,
    pub tau: f64,
    pub k: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
    /// `‖m‖₁ / n` of the finalized mask.
    pub final_remaining: f64,
}

pub const REPORT_HEADER: &str = "epoch,loss,acc,mean_s,frac_binary,tau,k";

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.epoch, r.loss, r.accuracy, r.mean_s, r.frac_binary, r.tau, r.k
            );
        }
        out
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

/// State captured when the loss stops being finite.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceDump {
    pub epoch: usize,
    pub iteration: usize,
    pub loss: f64,
    pub tau: f64,
    pub k: f64,
    pub lr_w: f64,
    pub mean_s: f64,
    pub max_abs_weight: f64,
    pub non_finite_weights: usize,
    pub records: Vec<EpochRecord>,
}

impl fmt::Display for DivergenceDump {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "epoch = {}", self.epoch)?;
        writeln!(f, "iteration = {}", self.iteration)?;
        writeln!(f, "loss = {}", self.loss)?;
        writeln!(f, "tau = {}", self.tau)?;
        writeln!(f, "k = {}", self.k)?;
        writeln!(f, "lr_w = {}", self.lr_w)?;
        writeln!(f, "mean_s = {}", self.mean_s)?;
        writeln!(f, "max_abs_weight = {}", self.max_abs_weight)?;
        writeln!(f, "non_finite_weights = {}", self.non_finite_weights)?;
        writeln!(f, "completed_epochs = {}", self.records.len())
    }
}

/// Everything a training run produces.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub init: NetState,
    pub state: NetState,
    pub probs: ProbVector,
    pub mask: MaskSample,
    pub report: TrainReport,
}

/// Snapshot handed to an observer after every probability update.
#[derive(Debug)]
pub struct IterationEvent<'a> {
    pub epoch: usize,
    pub iteration: usize,
    pub loss: f64,
    pub budget: f64,
    pub probs: &'a ProbVector,
    pub state: &'a NetState,
}

fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// Hard mask from `s`: a fresh Bernoulli sample or a 0.5 threshold.
pub fn finalize_mask<R: RngCore + ?Sized>(s: &ProbVector, mode: FinalizeMode, rng: &mut R) -> MaskSample {
    match mode {
        FinalizeMode::Sample => {
            let draw = GumbelDraw::sample(s.layout(), rng);
            mask::hard_mask(s, &draw).expect("draw shaped from layout")
        }
        FinalizeMode::Round => MaskSample {
            values: s
                .segments()
                .iter()
                .map(|seg| seg.iter().map(|&v| if v >= 0.5 { 1.0 } else { 0.0 }).collect())
                .collect(),
            kind: MaskKind::Hard,
        },
    }
}

fn finalize_for_epoch(s: &ProbVector, config: &TrainConfig, epoch: usize) -> MaskSample {
    let mut rng = rng::stream(config.seed, Purpose::Finalize, epoch as u64, 0, 0);
    finalize_mask(s, config.finalize, &mut rng)
}

const EVAL_CHUNK: usize = 512;

/// Top-1 accuracy of `h(x; w ∘ m)` with a hard mask. Ties go to the lowest class.
pub fn evaluate(spec: &NetSpec, state: &NetState, mask: &MaskSample, dataset: &Dataset) -> Result<f64> {
    if mask.kind != MaskKind::Hard {
        return Err(Error::Input("evaluation needs a hard mask".into()));
    }
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0usize;
    let indices: Vec<usize> = (0..dataset.len()).collect();
    for chunk in indices.chunks(EVAL_CHUNK) {
        let (x, y) = dataset.batch(chunk)?;
        let (logits, _) = net::forward(spec, state, mask, &x)?;
        for (b, &label) in y.iter().enumerate() {
            if argmax(logits.row(b)) == label {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

struct SampleGrads {
    loss: f64,
    params: Vec<Tensor>,
    probs: Vec<Vec<f64>>,
}

fn sample_grads(
    spec: &NetSpec,
    state: &NetState,
    s: &ProbVector,
    x: &Tensor,
    y: &[usize],
    tau: f64,
    mut rng: rng::StreamRng,
) -> Result<SampleGrads> {
    let draw = GumbelDraw::sample(s.layout(), &mut rng);
    let soft = mask::soft_mask(s, &draw, tau)?;
    let g = net::loss_and_grads(spec, state, &soft, x, y)?;
    let probs = mask::chain_grad_to_prob(&g.mask, s, &draw, tau)?;
    Ok(SampleGrads {
        loss: g.loss,
        params: g.params,
        probs,
    })
}

/// Runs training. `eval` defaults to the training set when `None`.
pub fn train(spec: &NetSpec, config: &TrainConfig, train_set: &Dataset, eval: Option<&Dataset>) -> Result<TrainOutcome> {
    train_observed(spec, config, train_set, eval, |_| {})
}

/// [`train`] with weight updates disabled.
pub fn train_supermask(
    spec: &NetSpec,
    config: &TrainConfig,
    train_set: &Dataset,
    eval: Option<&Dataset>,
) -> Result<TrainOutcome> {
    let config = TrainConfig {
        mode: TrainMode::Supermask,
        ..config.clone()
    };
    train(spec, &config, train_set, eval)
}

/// [`train`], calling `observer` after every iteration.
pub fn train_observed<F>(
    spec: &NetSpec,
    config: &TrainConfig,
    train_set: &Dataset,
    eval: Option<&Dataset>,
    mut observer: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&IterationEvent<'_>),
{
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let eval_set = eval.unwrap_or(train_set);
    let layout = Layout::from_spec(spec);
    let mut state = net::kaiming_normal_init(spec, config.seed)?;
    let init = state.clone();
    let mut s = ProbVector::ones(layout);
    let n = s.len();
    let mut adam = AdamState::new(n);
    let mut sgd: Vec<SgdState> = state.params.iter().map(|p| SgdState::new(p.numel())).collect();
    let samples = config.grad_samples;
    let pool = if samples > 1 {
        let threads = thread_cap().unwrap_or_else(rayon::current_num_threads).min(samples);
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Error::Parameter(format!("thread pool: {e}")))?,
        )
    } else {
        None
    };

    let sched = config.schedule;
    let epochs = sched.epochs;
    let mut report = TrainReport::default();
    let mut final_mask = None;

    for epoch in 1..=epochs {
        let tau = sched.temperature(epoch)?;
        let k = sched.remaining_ratio(epoch);
        let lr_w = schedule::weight_lr(config.lr_w, epoch, epochs, config.warmup);
        let mut loss_sum = 0.0;
        let plan = data::batches(train_set.len(), config.batch_size, config.seed, epoch as u64);
        for (iteration, idx) in plan.iter().enumerate() {
            let (x, y) = train_set.batch(idx)?;
            let stream = |i: usize| rng::stream(config.seed, Purpose::Gumbel, epoch as u64, iteration as u64, i as u64);
            let per_sample: Vec<SampleGrads> = match &pool {
                Some(pool) => pool.install(|| {
                    (0..samples)
                        .into_par_iter()
                        .map(|i| sample_grads(spec, &state, &s, &x, &y, tau, stream(i)))
                        .collect::<Result<Vec<_>>>()
                })?,
                None => vec![sample_grads(spec, &state, &s, &x, &y, tau, stream(0))?],
            };

            // Fixed-order reduction keeps results independent of scheduling.
            let scale = 1.0 / samples as f64;
            let mut iter = per_sample.into_iter();
            let mut acc = iter.next().expect("at least one sample");
            for g in iter {
                acc.loss += g.loss;
                for (a, b) in acc.params.iter_mut().zip(&g.params) {
                    a.data_mut().iter_mut().zip(b.data()).for_each(|(x, y)| *x += y);
                }
                for (a, b) in acc.probs.iter_mut().zip(&g.probs) {
                    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                }
            }
            let loss = acc.loss * scale;
            if !loss.is_finite() {
                return Err(divergence(epoch, iteration, loss, tau, k, lr_w, &s, &state, report.records));
            }
            let grad_s: Vec<f64> = acc.probs.iter().flatten().map(|g| g * scale).collect();

            s = optim::prob_update(&s, &grad_s, config.lr_s, &mut adam, k, config.constraint)?;

            if config.mode == TrainMode::Prune {
                for ((param, grad), buf) in state.params.iter_mut().zip(&acc.params).zip(&mut sgd) {
                    let g: Vec<f64> = grad.data().iter().map(|v| v * scale).collect();
                    optim::sgd_step(param.data_mut(), &g, lr_w, config.momentum, config.weight_decay, buf)?;
                }
            }
            loss_sum += loss;
            observer(&IterationEvent {
                epoch,
                iteration,
                loss,
                budget: schedule::budget(k, n),
                probs: &s,
                state: &state,
            });
        }

        let last = epoch == epochs;
        let accuracy = if last || epoch % config.eval_every == 0 {
            let m = finalize_for_epoch(&s, config, epoch);
            let acc = evaluate(spec, &state, &m, eval_set)?;
            if last {
                final_mask = Some(m);
            }
            acc
        } else {
            f64::NAN
        };
        report.records.push(EpochRecord {
            epoch,
            loss: loss_sum / plan.len() as f64,
            accuracy,
            mean_s: s.sum() / n as f64,
            frac_binary: frac_binary(s.iter()),
            tau,
            k,
        });
    }

    let mask = final_mask.unwrap_or_else(|| finalize_for_epoch(&s, config, epochs));
    report.final_remaining = mask.remaining_ratio();
    Ok(TrainOutcome {
        init,
        state,
        probs: s,
        mask,
        report,
    })
}

#[allow(clippy::too_many_arguments)]
fn divergence(
    epoch: usize,
    iteration: usize,
    loss: f64,
    tau: f64,
    k: f64,
    lr_w: f64,
    s: &ProbVector,
    state: &NetState,
    records: Vec<EpochRecord>,
) -> Error {
    let weights = state.params.iter().flat_map(|p| p.data().iter().copied());
    let (mut max_abs, mut non_finite) = (0.0f64, 0usize);
    for w in weights {
        if w.is_finite() {
            max_abs = max_abs.max(w.abs());
        } else {
            non_finite += 1;
        }
    }
    Error::Diverged(Box::new(DivergenceDump {
        epoch,
        iteration,
        loss,
        tau,
        k,
        lr_w,
        mean_s: s.sum() / s.len() as f64,
        max_abs_weight: max_abs,
        non_finite_weights: non_finite,
        records,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs;

    fn quick_config(epochs: usize) -> TrainConfig {
        TrainConfig {
            schedule: ScheduleParams {
                epochs,
                t1: 1,
                t2: epochs.max(2),
                k_final: 0.5,
            },
            batch_size: 32,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initial_state() {
        let spec = NetSpec::mlp(&[4, 6, 3]).unwrap();
        let data = synth_blobs(0, 10, 3, 4, 0.1).unwrap();
        let out = train(&spec, &quick_config(0), &data, None).unwrap();
        assert!(out.report.records.is_empty());
        assert!(out.probs.iter().all(|v| v == 1.0));
        assert_eq!(out.state, out.init);
        assert_eq!(out.report.final_remaining, 1.0);
    }

    #[test]
    fn finalize_on_binary_probabilities_is_exact() {
        let layout = Layout {
            names: vec!["w".into()],
            shapes: vec![vec![6]],
        };
        let s = ProbVector::new(layout, vec![vec![0., 1., 1., 0., 1., 0.]]).unwrap();
        let mut rng = rng::stream(1, Purpose::Finalize, 0, 0, 0);
        let sampled = finalize_mask(&s, FinalizeMode::Sample, &mut rng);
        let rounded = finalize_mask(&s, FinalizeMode::Round, &mut rng);
        assert_eq!(sampled, rounded);
        assert_eq!(sampled.values[0], s.segments()[0]);
    }

    #[test]
    fn evaluate_requires_hard_mask() {
        let spec = NetSpec::mlp(&[4, 3]).unwrap();
        let state = net::kaiming_normal_init(&spec, 0).unwrap();
        let data = synth_blobs(0, 5, 3, 4, 0.1).unwrap();
        let soft = MaskSample::filled(&spec, 0.5, MaskKind::Soft);
        assert!(evaluate(&spec, &state, &soft, &data).is_err());
    }

    #[test]
    fn diverging_run_reports_state() {
        let spec = NetSpec::mlp(&[4, 16, 3]).unwrap();
        let data = synth_blobs(0, 20, 3, 4, 0.5).unwrap();
        let config = TrainConfig {
            lr_w: 1e300,
            ..quick_config(3)
        };
        match train(&spec, &config, &data, None) {
            Err(Error::Diverged(dump)) => {
                assert!(!dump.loss.is_finite());
                assert!(dump.to_string().contains("iteration"));
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let spec = NetSpec::mlp(&[4, 3]).unwrap();
        let data = synth_blobs(0, 5, 3, 4, 0.1).unwrap();
        let config = TrainConfig {
            grad_samples: 0,
            ..quick_config(2)
        };
        assert!(train(&spec, &config, &data, None).is_err());
    }
}
