//! Independent reference computations used to check the analytic code paths:
//! central finite differences, an explicit 1-D Fokker-Planck solver, and
//! exhaustive optimal transport for small samples.
//!
//! Nothing in here calls into the gradient, sampler or metric code it is used
//! to verify.

use itertools::Itertools;
use log::warn;

use crate::error::{FrameError, Result};
use crate::sampler::DifferentiableEnergy;
use crate::signal::GridSignal;

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn finite_diff_grad<F>(f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Norm-wise relative error `|a - b| / max(|a|, |b|)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = a
        .iter()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|v| v * v).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Cell-averaged density on `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    lo: f64,
    hi: f64,
    values: Vec<f64>,
}

impl DensityGrid {
    pub fn new(lo: f64, hi: f64, values: Vec<f64>) -> Result<Self> {
        if !(hi > lo) || values.is_empty() {
            return Err(FrameError::Config("density grid needs lo < hi and cells".into()));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(FrameError::Config("densities must be finite and >= 0".into()));
        }
        Ok(Self { lo, hi, values })
    }

    /// Samples `f` at cell centres and normalizes to unit mass.
    pub fn from_fn(lo: f64, hi: f64, n_cells: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let width = (hi - lo) / n_cells as f64;
        let values = (0..n_cells).map(|i| f(lo + (i as f64 + 0.5) * width)).collect();
        let mut grid = Self::new(lo, hi, values)?;
        let mass = grid.mass();
        if !(mass > 0.0) {
            return Err(FrameError::Config("initial density has zero mass".into()));
        }
        grid.values.iter_mut().for_each(|v| *v /= mass);
        Ok(grid)
    }

    pub fn n_cells(&self) -> usize {
        self.values.len()
    }

    pub fn cell_width(&self) -> f64 {
        (self.hi - self.lo) / self.values.len() as f64
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.cell_width()
    }

    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_width()
    }

    pub fn mean(&self) -> f64 {
        let w = self.cell_width();
        (0..self.n_cells()).map(|i| self.center(i) * self.values[i] * w).sum::<f64>() / self.mass()
    }

    /// Variance, with the within-cell uniform spread `w^2 / 12` included.
    pub fn variance(&self) -> f64 {
        let w = self.cell_width();
        let m = self.mean();
        let spread: f64 = (0..self.n_cells())
            .map(|i| (self.center(i) - m).powi(2) * self.values[i] * w)
            .sum();
        spread / self.mass() + w * w / 12.0
    }

    /// CDF of the piecewise-constant density.
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.lo {
            return 0.0;
        }
        if x >= self.hi {
            return 1.0;
        }
        let w = self.cell_width();
        let pos = (x - self.lo) / w;
        let cell = (pos.floor() as usize).min(self.n_cells() - 1);
        let below: f64 = self.values[..cell].iter().sum::<f64>() * w;
        (below + self.values[cell] * (pos - cell as f64) * w) / self.mass()
    }

    /// `sum_i |rho_i - f(x_i)| w` against an already normalized density `f`.
    pub fn l1_distance(&self, f: impl Fn(f64) -> f64) -> f64 {
        let w = self.cell_width();
        (0..self.n_cells()).map(|i| (self.values[i] - f(self.center(i))).abs() * w).sum()
    }

    /// Density snapshot as `x,density` CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,density\n");
        for i in 0..self.n_cells() {
            out.push_str(&format!("{},{}\n", self.center(i), self.values[i]));
        }
        out
    }
}

/// Explicit conservative scheme for `d_t rho = -d_x(rho v) + d_xx rho` with
/// centred fluxes and reflecting (zero-flux) walls.
pub fn fokker_planck_1d(
    drift: impl Fn(f64) -> f64,
    grid: &DensityGrid,
    dt: f64,
    steps: usize,
) -> Result<DensityGrid> {
    let w = grid.cell_width();
    let interface_drift: Vec<f64> = (1..grid.n_cells()).map(|i| drift(grid.lo + i as f64 * w)).collect();
    evolve(grid, &interface_drift, dt, steps)
}

/// Same scheme with velocity `grad Phi - grad |grad Phi|^2` taken from a
/// 1-D energy (evaluated on single-element signals).
pub fn modified_fp_1d<E: DifferentiableEnergy + ?Sized>(
    energy: &E,
    grid: &DensityGrid,
    dt: f64,
    steps: usize,
) -> Result<DensityGrid> {
    let w = grid.cell_width();
    let interface_drift = (1..grid.n_cells())
        .map(|i| {
            let z = GridSignal::from_vec(vec![grid.lo + i as f64 * w])?;
            let g = energy.grad(&z)?.values()[0];
            let extra = energy.grad_sq_grad_norm(&z)?.values()[0];
            Ok(g - extra)
        })
        .collect::<Result<Vec<f64>>>()?;
    evolve(grid, &interface_drift, dt, steps)
}

fn evolve(grid: &DensityGrid, interface_drift: &[f64], dt: f64, steps: usize) -> Result<DensityGrid> {
    let w = grid.cell_width();
    if !(dt > 0.0) || dt > w * w / 2.0 {
        return Err(FrameError::Config(format!(
            "dt = {dt} violates the explicit stability bound dt <= {}",
            w * w / 2.0
        )));
    }
    let n = grid.n_cells();
    let mut rho = grid.values.clone();
    let mut flux = vec![0.0; n + 1];
    let ratio = dt / w;
    for step in 0..steps {
        for i in 1..n {
            let (left, right) = (rho[i - 1], rho[i]);
            flux[i] = interface_drift[i - 1] * 0.5 * (left + right) - (right - left) / w;
        }
        let mut worst = 0.0f64;
        for i in 0..n {
            rho[i] -= ratio * (flux[i + 1] - flux[i]);
            if rho[i] < 0.0 {
                worst = worst.min(rho[i]);
                rho[i] = 0.0;
            }
        }
        if worst < -1e-12 {
            warn!("fokker-planck step {step}: clipped negative density {worst:e}");
        }
    }
    DensityGrid::new(grid.lo, grid.hi, rho)
}

/// Exhaustive W2 over all `n!` pairings; only sensible for `n <= 8` or so.
pub fn brute_force_w2(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(FrameError::LengthMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    if a.is_empty() {
        return Err(FrameError::Empty("no samples".into()));
    }
    let n = a.len();
    let best = (0..n)
        .permutations(n)
        .map(|perm| perm.iter().enumerate().map(|(i, &j)| (a[i] - b[j]).powi(2)).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    Ok((best / n as f64).sqrt())
}

/// Kolmogorov-Smirnov distance between a sample and a continuous CDF.
pub fn ks_distance(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}
