//! Weight updates for FRAME and Wasserstein-FRAME, and the persistent
//! learning loop that alternates Langevin sweeps with `theta` updates.
//!
//! Per iteration `t`:
//!
//! ```text
//! H_obs  = mean_i grad_theta Phi(y_i)            over an observed batch
//! x      <- L Langevin steps from the persistent chains
//! H_syn  = mean_i grad_theta Phi(x_i)
//! P_t    = mean_i grad_theta |grad_x Phi(x_i)|^2  on the fresh samples
//! P_prev = same, on the samples left by iteration t-1 (at the current theta)
//! theta  <- theta + lambda (H_obs - H_syn) - beta/2 ((1 - gamma) P_prev + gamma P_t)
//! ```
//!
//! FRAME is the same loop with the `beta` term dropped.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bank::FilterBank;
use crate::error::{FrameError, Result};
use crate::metrics::{empirical_w2_1d, mean_filter_responses, MetricRow, MetricTrace, Mode};
use crate::sampler::{run_inner_loop, ChainState, InitKind, SamplerConfig};
use crate::signal::GridSignal;

const THETA_HISTORY: usize = 8;
const BATCH_STREAM: u64 = u64::MAX;
const GAMMA_STREAM: u64 = u64::MAX - 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GammaSource {
    Uniform01,
    Fixed { gamma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub lambda: f64,
    pub beta: f64,
    pub gamma_source: GammaSource,
    pub iters: u64,
    pub clip_bounds: Option<(f64, f64)>,
    pub mode: Mode,
    pub batch_obs: usize,
    pub batch_syn: usize,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            beta: 60.0,
            gamma_source: GammaSource::Uniform01,
            iters: 100,
            clip_bounds: None,
            mode: Mode::Wframe,
            batch_obs: 9,
            batch_syn: 9,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(FrameError::Config(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(FrameError::Config(format!("beta must be >= 0, got {}", self.beta)));
        }
        if let GammaSource::Fixed { gamma } = self.gamma_source {
            check_gamma(gamma)?;
        }
        if let Some((lo, hi)) = self.clip_bounds {
            if !(lo < hi) {
                return Err(FrameError::Config(format!("clip bounds need lo < hi, got ({lo}, {hi})")));
            }
        }
        if self.iters == 0 {
            return Err(FrameError::Config("iters must be >= 1".into()));
        }
        if self.batch_obs == 0 || self.batch_syn == 0 {
            return Err(FrameError::Config("batch sizes must be >= 1".into()));
        }
        Ok(())
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if (0.0..=1.0).contains(&gamma) {
        Ok(())
    } else {
        Err(FrameError::Config(format!("gamma must lie in [0, 1], got {gamma}")))
    }
}

fn check_len(expected: usize, v: &[f64]) -> Result<()> {
    if v.len() == expected {
        Ok(())
    } else {
        Err(FrameError::LengthMismatch {
            expected,
            actual: v.len(),
        })
    }
}

/// `theta + lambda (H_obs - H_syn)`.
pub fn frame_update(theta: &[f64], h_obs: &[f64], h_syn: &[f64], lambda: f64) -> Result<Vec<f64>> {
    check_len(theta.len(), h_obs)?;
    check_len(theta.len(), h_syn)?;
    Ok(theta
        .iter()
        .zip(h_obs.iter().zip(h_syn))
        .map(|(t, (o, s))| t + lambda * (o - s))
        .collect())
}

/// `theta + lambda (H_obs - H_syn) - beta/2 ((1 - gamma) P_prev + gamma P_t)`.
///
/// With `beta == 0` the result is bit-identical to [`frame_update`].
#[allow(clippy::too_many_arguments)]
pub fn wframe_update(
    theta: &[f64],
    h_obs: &[f64],
    h_syn: &[f64],
    p_t: &[f64],
    p_prev: &[f64],
    gamma: f64,
    beta: f64,
    lambda: f64,
) -> Result<Vec<f64>> {
    check_len(theta.len(), p_t)?;
    check_len(theta.len(), p_prev)?;
    check_gamma(gamma)?;
    if !(beta >= 0.0) {
        return Err(FrameError::Config(format!("beta must be >= 0, got {beta}")));
    }
    let mut next = frame_update(theta, h_obs, h_syn, lambda)?;
    if beta != 0.0 {
        for (n, (pt, pp)) in next.iter_mut().zip(p_t.iter().zip(p_prev)) {
            *n -= 0.5 * beta * ((1.0 - gamma) * pp + gamma * pt);
        }
    }
    Ok(next)
}

pub fn clip_weights(theta: &[f64], bounds: Option<(f64, f64)>) -> Vec<f64> {
    match bounds {
        Some((lo, hi)) => theta.iter().map(|t| t.clamp(lo, hi)).collect(),
        None => theta.to_vec(),
    }
}

pub fn sample_gamma<R: Rng + ?Sized>(source: GammaSource, rng: &mut R) -> f64 {
    match source {
        GammaSource::Uniform01 => rng.random::<f64>(),
        GammaSource::Fixed { gamma } => gamma,
    }
}

/// Everything needed to continue training bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub bank: FilterBank,
    pub chains: ChainState,
    /// Chain samples at the end of the previous iteration.
    pub prev_snapshot: Option<Vec<GridSignal>>,
    pub trace: MetricTrace,
    pub batch_rng: ChaCha8Rng,
    pub gamma_rng: ChaCha8Rng,
    pub theta_history: VecDeque<Vec<f64>>,
}

impl TrainState {
    pub fn new(bank: FilterBank, chains: ChainState, seed: u64) -> Self {
        let stream = |s| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(s);
            rng
        };
        Self {
            bank,
            chains,
            prev_snapshot: None,
            trace: MetricTrace::new(),
            batch_rng: stream(BATCH_STREAM),
            gamma_rng: stream(GAMMA_STREAM),
            theta_history: VecDeque::new(),
        }
    }

    /// Completed iterations.
    pub fn iteration(&self) -> u64 {
        self.chains.iteration
    }
}

/// Intermediate quantities of one learning iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub iteration: u64,
    pub batch: Vec<usize>,
    pub h_obs: Vec<f64>,
    pub h_syn: Vec<f64>,
    pub p_t: Option<Vec<f64>>,
    pub p_prev: Option<Vec<f64>>,
    pub gamma: f64,
    pub theta_before: Vec<f64>,
    pub theta_after: Vec<f64>,
}

/// Result of a full run. A sampler divergence ends the run early but is a
/// legitimate outcome, reported in `divergence` with the trace intact.
#[derive(Debug)]
pub struct TrainRun {
    pub state: TrainState,
    pub divergence: Option<FrameError>,
}

fn select_batch(n_items: usize, size: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n_items).collect();
    order.shuffle(rng);
    order.iter().cycle().take(size).copied().collect()
}

fn mean_sq_grad_norm_gradient(bank: &FilterBank, xs: &[GridSignal]) -> Result<Vec<f64>> {
    let per: Vec<Vec<f64>> = xs
        .par_iter()
        .map(|x| bank.grad_theta_sq_grad_norm(x))
        .collect::<Result<_>>()?;
    let mut acc = vec![0.0; bank.len()];
    for p in &per {
        acc.iter_mut().zip(p).for_each(|(a, v)| *a += v);
    }
    acc.iter_mut().for_each(|a| *a /= xs.len() as f64);
    Ok(acc)
}

fn norm(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// One learning iteration. On sampler divergence a diverged row is appended
/// to the trace and the error is returned annotated with the iteration.
pub fn train_step(
    state: &mut TrainState,
    data: &[GridSignal],
    sampler: &SamplerConfig,
    learner: &LearnerConfig,
) -> Result<StepRecord> {
    if data.is_empty() {
        return Err(FrameError::Empty("dataset has no items".into()));
    }
    let t = state.iteration() + 1;
    let theta_before = state.bank.theta().to_vec();

    let batch = select_batch(data.len(), learner.batch_obs, &mut state.batch_rng);
    let observed: Vec<GridSignal> = batch.iter().map(|&i| data[i].clone()).collect();
    let h_obs = mean_filter_responses(&state.bank, &observed)?;

    if let Err(err) = run_inner_loop(&mut state.chains, &state.bank, sampler) {
        return Err(match err {
            FrameError::Diverged { chain, step, .. } => {
                state.trace.push(MetricRow {
                    iter: t,
                    mode: learner.mode,
                    energy_mean: f64::NAN,
                    response_distance: f64::NAN,
                    w2_1d: None,
                    theta_norm: norm(theta_before.iter().copied()),
                    update_norm: f64::NAN,
                    diverged: true,
                })?;
                FrameError::Diverged {
                    chain,
                    step,
                    iteration: Some(t),
                }
            }
            other => other,
        });
    }

    let samples = state.chains.chains();
    let h_syn = mean_filter_responses(&state.bank, samples)?;
    let energies: Vec<f64> = samples
        .par_iter()
        .map(|x| state.bank.energy(x))
        .collect::<Result<_>>()?;
    let energy_mean = energies.iter().sum::<f64>() / energies.len() as f64;

    // gamma is drawn in both modes so the random streams stay aligned
    let gamma = sample_gamma(learner.gamma_source, &mut state.gamma_rng);
    let (theta_raw, p_t, p_prev) = match learner.mode {
        Mode::Frame => (frame_update(&theta_before, &h_obs, &h_syn, learner.lambda)?, None, None),
        Mode::Wframe => {
            let p_t = mean_sq_grad_norm_gradient(&state.bank, samples)?;
            let p_prev = match &state.prev_snapshot {
                Some(prev) => mean_sq_grad_norm_gradient(&state.bank, prev)?,
                None => p_t.clone(),
            };
            let next = wframe_update(
                &theta_before,
                &h_obs,
                &h_syn,
                &p_t,
                &p_prev,
                gamma,
                learner.beta,
                learner.lambda,
            )?;
            (next, Some(p_t), Some(p_prev))
        }
    };
    let theta_after = clip_weights(&theta_raw, learner.clip_bounds);

    let response_distance = crate::metrics::l1_gap(&h_obs, &h_syn) / h_obs.len() as f64;
    let w2_1d = if observed.len() == samples.len() {
        let a: Vec<f64> = observed.iter().map(GridSignal::mean).collect();
        let b: Vec<f64> = samples.iter().map(GridSignal::mean).collect();
        Some(empirical_w2_1d(&a, &b)?)
    } else {
        None
    };
    let update_norm = norm(theta_after.iter().zip(&theta_before).map(|(a, b)| a - b));
    let row = MetricRow {
        iter: t,
        mode: learner.mode,
        energy_mean,
        response_distance,
        w2_1d,
        theta_norm: norm(theta_after.iter().copied()),
        update_norm,
        diverged: false,
    };
    if !theta_after.iter().all(|v| v.is_finite()) {
        state.trace.push(MetricRow {
            energy_mean: f64::NAN,
            response_distance: f64::NAN,
            w2_1d: None,
            theta_norm: norm(theta_before.iter().copied()),
            update_norm: f64::NAN,
            diverged: true,
            ..row
        })?;
        return Err(FrameError::Diverged {
            chain: 0,
            step: state.chains.steps,
            iteration: Some(t),
        });
    }

    state.bank.set_theta(theta_after.clone())?;
    state.trace.push(row)?;
    state.prev_snapshot = Some(samples.to_vec());
    state.theta_history.push_back(theta_after.clone());
    if state.theta_history.len() > THETA_HISTORY {
        state.theta_history.pop_front();
    }

    Ok(StepRecord {
        iteration: t,
        batch,
        h_obs,
        h_syn,
        p_t,
        p_prev,
        gamma,
        theta_before,
        theta_after,
    })
}

/// Run iterations until `learner.iters` have completed, starting from `state`.
pub fn resume(
    mut state: TrainState,
    data: &[GridSignal],
    sampler: &SamplerConfig,
    learner: &LearnerConfig,
) -> Result<TrainRun> {
    sampler.validate()?;
    learner.validate()?;
    while state.iteration() < learner.iters {
        match train_step(&mut state, data, sampler, learner) {
            Ok(_) => {}
            Err(err @ FrameError::Diverged { .. }) => {
                return Ok(TrainRun {
                    state,
                    divergence: Some(err),
                })
            }
            Err(err) => return Err(err),
        }
    }
    Ok(TrainRun {
        state,
        divergence: None,
    })
}

/// Fresh persistent training run: `batch_syn` chains seeded by `seed`.
pub fn train(
    data: &[GridSignal],
    bank: FilterBank,
    sampler: &SamplerConfig,
    learner: &LearnerConfig,
    init: InitKind,
    seed: u64,
) -> Result<TrainRun> {
    sampler.validate()?;
    learner.validate()?;
    let first = data
        .first()
        .ok_or_else(|| FrameError::Empty("dataset has no items".into()))?;
    if data.iter().any(|y| y.shape() != first.shape()) {
        return Err(FrameError::Shape("dataset items must share one shape".into()));
    }
    bank.check_signal(first)?;
    let chains = ChainState::initialize(first.shape(), learner.batch_syn, seed, init)?;
    resume(TrainState::new(bank, chains, seed), data, sampler, learner)
}
