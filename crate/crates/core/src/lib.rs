//! Descriptive energy models built on filter banks, trained either with the
//! classical FRAME maximum-likelihood rule or with its Wasserstein (JKO)
//! variant, sampled by persistent Langevin chains.
//!
//! Modules:
//! - [`signal`], [`bank`]: signals, filters, the energy and its derivatives
//! - [`sampler`]: Langevin / Euler-Maruyama chains
//! - [`learner`]: weight updates and the persistent training loop
//! - [`metrics`]: response distance, energy traces, 1-D W2
//! - [`oracle`]: finite differences, 1-D Fokker-Planck, brute-force OT
//! - [`checks`]: the oracle suite comparing analytic paths to the oracles
//! - [`io`]: datasets, checkpoints, CSV and PGM export
//! - [`config`], [`harness`]: run configuration, presets and experiment drivers

// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bank;
pub mod checks;
pub mod config;
pub mod error;
pub mod harness;
pub mod io;
pub mod learner;
pub mod metrics;
pub mod oracle;
pub mod sampler;
pub mod signal;

pub use bank::{ActivationPattern, BankKind, FilterBank, GaborSpec};
pub use error::{FrameError, Result};
pub use learner::{
    clip_weights, frame_update, resume, sample_gamma, train, train_step, wframe_update, GammaSource,
    LearnerConfig, StepRecord, TrainRun, TrainState,
};
pub use metrics::{empirical_w2_1d, mean_energy, response_distance, MetricRow, MetricTrace, Mode};
pub use sampler::{
    euler_maruyama_modified, langevin_step, run_inner_loop, ChainRng, ChainState,
    DifferentiableEnergy, InitKind, QuadraticEnergy, SamplerConfig,
};
pub use signal::{convolve, Filter, GridSignal};
pub use config::{Preset, RunConfig};
