//! Probabilistic masking for neural network sparsification.
//!
//! Every prunable weight `w_i` is gated by a Bernoulli mask `m_i ~ Bernoulli(s_i)`.
//! The probabilities `s` are trained jointly with the weights: a Gumbel-sigmoid
//! relaxation carries the loss gradient back to `s`, and after every Adam step the
//! probabilities are projected onto
//!
//! ```text
//! C = { s : 0 <= s_i <= 1, sum_i s_i <= K }
//! ```
//!
//! where `K = k * n` is the remaining-weight budget shared by all layers. The budget
//! ramps down with a cubic schedule while the relaxation temperature anneals
//! linearly, which drives almost every `s_i` to exactly 0 or 1 by the end of
//! training.
//!
//! Module map:
//! - [`tensor`], [`net`]: a small feed-forward engine with hand-written backward passes
//! - [`mask`]: Gumbel noise, soft/hard masks and the gradient chain back to `s`
//! - [`projection`]: exact projection onto `C` by bisection
//! - [`schedule`]: temperature, remaining-ratio and learning-rate schedules
//! - [`optim`]: momentum SGD for weights, projected Adam for probabilities
//! - [`trainer`]: the training loop, mask finalization and evaluation
//! - [`data`]: IDX ingestion, synthetic blobs, batching
//! - [`diagnostics`]: probability histograms, layer ratios, S-factor curves
//! - [`io`], [`config`]: checkpoint/mask file formats and run configuration

pub mod config;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod io;
pub mod mask;
pub mod net;
pub mod optim;
pub mod projection;
pub mod rng;
pub mod schedule;
pub mod tensor;
pub mod trainer;

pub use error::{Error, IdxError, Result};
pub use mask::{GumbelDraw, MaskKind, MaskSample, ProbVector};
pub use net::{Layer, NetSpec, NetState};
pub use projection::{project_global, project_layerwise, ProjectionResult};
pub use schedule::ScheduleParams;
pub use tensor::Tensor;
pub use trainer::{Constraint, FinalizeMode, TrainConfig, TrainMode, TrainReport};
