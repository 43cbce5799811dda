//! Persistent Langevin chains and the Euler-Maruyama step.
//!
//! One step follows the discretization
//!
//! ```text
//! x <- x + (delta^2 / 2) * (grad Phi(x) - x / ref_variance - grad |grad Phi(x)|^2) + delta * noise
//! noise ~ N(0, noise_std^2 I)
//! ```
//!
//! where the reference term is present when `use_reference_drift` is set and
//! the last drift term only when `include_w2_drift` is set. With
//! `delta = sqrt(2)` and `noise_std = 1` this is the unit-step SDE form
//! `x + drift + sqrt(2) xi`.
//!
//! Every chain owns a ChaCha stream keyed by `(seed, chain index)`, so the
//! result never depends on how chains are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bank::FilterBank;
use crate::error::{FrameError, Result};
use crate::signal::GridSignal;

/// Any value with magnitude above this is treated as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub delta: f64,
    pub steps_per_iter: usize,
    pub noise_std: f64,
    pub use_reference_drift: bool,
    pub include_w2_drift: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            delta: 0.2,
            steps_per_iter: 50,
            noise_std: 1.0,
            use_reference_drift: true,
            include_w2_drift: false,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(FrameError::Config(format!("delta must be > 0, got {}", self.delta)));
        }
        if self.steps_per_iter == 0 {
            return Err(FrameError::Config("steps_per_iter must be >= 1".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(FrameError::Config(format!(
                "noise_std must be >= 0, got {}",
                self.noise_std
            )));
        }
        Ok(())
    }
}

/// An energy exposing the two gradients the sampler needs.
pub trait DifferentiableEnergy: Sync {
    /// `grad_x Phi(x)`.
    fn grad(&self, x: &GridSignal) -> Result<GridSignal>;

    /// `grad_x |grad_x Phi(x)|^2`.
    fn grad_sq_grad_norm(&self, x: &GridSignal) -> Result<GridSignal>;

    /// Variance of the Gaussian reference used by the `-x / variance` drift.
    fn ref_variance(&self) -> f64 {
        1.0
    }
}

impl DifferentiableEnergy for FilterBank {
    fn grad(&self, x: &GridSignal) -> Result<GridSignal> {
        self.grad_x_energy(x)
    }

    /// `|grad_x Phi|^2` is constant on every activation region, so its
    /// gradient vanishes wherever it is defined.
    fn grad_sq_grad_norm(&self, x: &GridSignal) -> Result<GridSignal> {
        self.check_signal(x)?;
        GridSignal::zeros(x.shape())
    }

    fn ref_variance(&self) -> f64 {
        FilterBank::ref_variance(self)
    }
}

/// `Phi(x) = -a |x|^2 / 2`: smooth test energy with a non-vanishing
/// `grad |grad Phi|^2 = 2 a^2 x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticEnergy {
    pub a: f64,
    pub ref_variance: f64,
}

impl QuadraticEnergy {
    pub fn new(a: f64) -> Self {
        Self { a, ref_variance: 1.0 }
    }

    pub fn energy(&self, x: &GridSignal) -> f64 {
        -0.5 * self.a * x.norm_sq()
    }
}

impl DifferentiableEnergy for QuadraticEnergy {
    fn grad(&self, x: &GridSignal) -> Result<GridSignal> {
        map_signal(x, |v| -self.a * v)
    }

    fn grad_sq_grad_norm(&self, x: &GridSignal) -> Result<GridSignal> {
        map_signal(x, |v| 2.0 * self.a * self.a * v)
    }

    fn ref_variance(&self) -> f64 {
        self.ref_variance
    }
}

fn map_signal(x: &GridSignal, f: impl Fn(f64) -> f64) -> Result<GridSignal> {
    GridSignal::new(x.shape().to_vec(), x.values().iter().map(|&v| f(v)).collect())
}

/// Seedable per-chain random stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChainRng(ChaCha8Rng);

impl ChainRng {
    pub fn for_chain(seed: u64, chain: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(chain as u64);
        Self(rng)
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.0)
    }

    pub fn inner_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitKind {
    Zeros,
    /// i.i.d. `N(0, std^2)` entries.
    Gaussian { std: f64 },
}

/// M persistent chains sharing one shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    chains: Vec<GridSignal>,
    rngs: Vec<ChainRng>,
    /// Completed learning iterations.
    pub iteration: u64,
    /// Langevin steps taken so far; used to locate divergences.
    pub steps: u64,
}

impl ChainState {
    pub fn initialize(shape: &[usize], count: usize, seed: u64, init: InitKind) -> Result<Self> {
        if count == 0 {
            return Err(FrameError::Config("need at least one chain".into()));
        }
        let template = GridSignal::zeros(shape)?;
        let mut rngs: Vec<ChainRng> = (0..count).map(|i| ChainRng::for_chain(seed, i)).collect();
        let chains = rngs
            .iter_mut()
            .map(|rng| match init {
                InitKind::Zeros => Ok(template.clone()),
                InitKind::Gaussian { std } => {
                    if !(std >= 0.0 && std.is_finite()) {
                        return Err(FrameError::Config(format!("invalid init std {std}")));
                    }
                    let values = (0..template.len()).map(|_| std * rng.standard_normal()).collect();
                    GridSignal::new(shape.to_vec(), values)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            chains,
            rngs,
            iteration: 0,
            steps: 0,
        })
    }

    pub fn from_parts(chains: Vec<GridSignal>, rngs: Vec<ChainRng>, iteration: u64, steps: u64) -> Result<Self> {
        if chains.is_empty() || chains.len() != rngs.len() {
            return Err(FrameError::Config(format!(
                "{} chains with {} random streams",
                chains.len(),
                rngs.len()
            )));
        }
        if chains.iter().any(|c| c.shape() != chains[0].shape()) {
            return Err(FrameError::Shape("chains must share one shape".into()));
        }
        Ok(Self { chains, rngs, iteration, steps })
    }

    pub fn chains(&self) -> &[GridSignal] {
        &self.chains
    }

    pub fn rngs(&self) -> &[ChainRng] {
        &self.rngs
    }

    pub fn len(&self) -> usize {
        self.chains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chains.is_empty()
    }

    pub fn shape(&self) -> &[usize] {
        self.chains[0].shape()
    }
}

/// Advance one signal by one step. Returns `false` when the result diverged;
/// in that case `x` holds the non-finite or oversized values.
fn step_signal<E: DifferentiableEnergy + ?Sized>(
    x: &mut GridSignal,
    energy: &E,
    cfg: &SamplerConfig,
    rng: &mut ChainRng,
) -> Result<bool> {
    let grad = energy.grad(x)?;
    let w2 = if cfg.include_w2_drift {
        Some(energy.grad_sq_grad_norm(x)?)
    } else {
        None
    };
    let half_step = 0.5 * cfg.delta * cfg.delta;
    let inv_var = 1.0 / energy.ref_variance();
    let noise_scale = cfg.delta * cfg.noise_std;
    let mut ok = true;
    for (i, v) in x.values_mut().iter_mut().enumerate() {
        let mut drift = grad.values()[i];
        if cfg.use_reference_drift {
            drift -= *v * inv_var;
        }
        if let Some(w2) = &w2 {
            drift -= w2.values()[i];
        }
        let mut next = *v + half_step * drift;
        if cfg.noise_std > 0.0 {
            next += noise_scale * rng.standard_normal();
        }
        ok &= next.is_finite() && next.abs() <= DIVERGENCE_LIMIT;
        *v = next;
    }
    Ok(ok)
}

/// Advance every chain by exactly one step. The iteration counter is left alone.
pub fn langevin_step<E: DifferentiableEnergy + ?Sized>(
    state: &mut ChainState,
    energy: &E,
    cfg: &SamplerConfig,
) -> Result<()> {
    cfg.validate()?;
    let step = state.steps;
    let outcomes: Vec<Result<bool>> = state
        .chains
        .par_iter_mut()
        .zip(state.rngs.par_iter_mut())
        .map(|(x, rng)| step_signal(x, energy, cfg, rng))
        .collect();
    state.steps += 1;
    for (chain, outcome) in outcomes.into_iter().enumerate() {
        if !outcome? {
            return Err(FrameError::Diverged {
                chain,
                step,
                iteration: None,
            });
        }
    }
    Ok(())
}

/// `steps_per_iter` Langevin steps followed by one iteration tick.
pub fn run_inner_loop<E: DifferentiableEnergy + ?Sized>(
    state: &mut ChainState,
    energy: &E,
    cfg: &SamplerConfig,
) -> Result<()> {
    for _ in 0..cfg.steps_per_iter {
        langevin_step(state, energy, cfg)?;
    }
    state.iteration += 1;
    Ok(())
}

/// One step of the SDE with drift `grad Phi - grad |grad Phi|^2` (the second
/// term only when `include_w2_drift` is set).
pub fn euler_maruyama_modified<E: DifferentiableEnergy + ?Sized>(
    x: &GridSignal,
    energy: &E,
    cfg: &SamplerConfig,
    rng: &mut ChainRng,
) -> Result<GridSignal> {
    cfg.validate()?;
    let mut next = x.clone();
    if step_signal(&mut next, energy, cfg, rng)? {
        Ok(next)
    } else {
        Err(FrameError::Diverged {
            chain: 0,
            step: 0,
            iteration: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::Filter;

    fn unit_bank(theta: f64) -> FilterBank {
        let f = Filter::new(GridSignal::from_vec(vec![1.0]).unwrap(), 0.0).unwrap();
        FilterBank::new(vec![f], vec![theta], 1.0).unwrap()
    }

    fn cfg(delta: f64, noise_std: f64, reference: bool) -> SamplerConfig {
        SamplerConfig {
            delta,
            steps_per_iter: 1,
            noise_std,
            use_reference_drift: reference,
            include_w2_drift: false,
        }
    }

    fn state_from(values: &[f64]) -> ChainState {
        let chains = vec![GridSignal::from_vec(values.to_vec()).unwrap()];
        ChainState::from_parts(chains, vec![ChainRng::for_chain(0, 0)], 0, 0).unwrap()
    }

    #[test]
    fn reference_drift_only() {
        let mut s = state_from(&[1.0]);
        langevin_step(&mut s, &unit_bank(0.0), &cfg(0.2, 0.0, true)).unwrap();
        assert!((s.chains()[0].values()[0] - 0.98).abs() < 1e-15);
        assert_eq!(s.iteration, 0);
    }

    #[test]
    fn zero_drift_leaves_chains_unchanged() {
        let mut s = state_from(&[1.5, -0.25]);
        langevin_step(&mut s, &unit_bank(0.0), &cfg(0.2, 0.0, false)).unwrap();
        assert_eq!(s.chains()[0].values(), &[1.5, -0.25]);
    }

    #[test]
    fn seeded_runs_are_bit_identical() {
        let bank = unit_bank(0.5);
        let run = || {
            let mut s = ChainState::initialize(&[4], 6, 99, InitKind::Gaussian { std: 1.0 }).unwrap();
            let mut c = cfg(0.3, 1.0, true);
            c.steps_per_iter = 20;
            run_inner_loop(&mut s, &bank, &c).unwrap();
            s
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn chains_use_distinct_streams() {
        let s = ChainState::initialize(&[3], 3, 1, InitKind::Gaussian { std: 1.0 }).unwrap();
        assert_ne!(s.chains()[0], s.chains()[1]);
        assert_ne!(s.chains()[1], s.chains()[2]);
    }

    #[test]
    fn inner_loop_ticks_iteration() {
        let mut s = state_from(&[0.0]);
        let mut c = cfg(0.1, 1.0, true);
        c.steps_per_iter = 7;
        run_inner_loop(&mut s, &unit_bank(1.0), &c).unwrap();
        assert_eq!(s.iteration, 1);
        assert_eq!(s.steps, 7);
    }

    #[test]
    fn unstable_step_size_diverges() {
        // delta^2 >= 4 ref_variance makes |1 - delta^2/2| >= 1
        let mut s = state_from(&[1.0]);
        let mut c = cfg(2.5, 0.0, true);
        c.steps_per_iter = 200;
        let err = run_inner_loop(&mut s, &unit_bank(0.0), &c).unwrap_err();
        assert!(matches!(err, FrameError::Diverged { chain: 0, .. }));
    }

    #[test]
    fn quadratic_modified_step() {
        let e = QuadraticEnergy::new(0.5);
        let x = GridSignal::from_vec(vec![1.0]).unwrap();
        let mut c = cfg(std::f64::consts::SQRT_2, 0.0, false);
        c.include_w2_drift = true;
        let mut rng = ChainRng::for_chain(0, 0);
        let next = euler_maruyama_modified(&x, &e, &c, &mut rng).unwrap();
        assert!(next.values()[0].abs() < 1e-15);

        let flat = QuadraticEnergy::new(0.0);
        let x = GridSignal::from_vec(vec![-3.25, 4.0]).unwrap();
        assert_eq!(euler_maruyama_modified(&x, &flat, &c, &mut rng).unwrap(), x);
    }

    #[test]
    fn config_validation() {
        assert!(cfg(0.0, 1.0, true).validate().is_err());
        assert!(cfg(0.1, -1.0, true).validate().is_err());
        let mut c = cfg(0.1, 1.0, true);
        c.steps_per_iter = 0;
        assert!(c.validate().is_err());
        assert!(ChainState::initialize(&[2], 0, 0, InitKind::Zeros).is_err());
    }

    #[test]
    fn rng_state_round_trips_through_json() {
        let mut rng = ChainRng::for_chain(7, 3);
        for _ in 0..5 {
            rng.standard_normal();
        }
        let text = serde_json::to_string(&rng).unwrap();
        let mut back: ChainRng = serde_json::from_str(&text).unwrap();
        assert_eq!(back.standard_normal(), rng.standard_normal());
    }
}
