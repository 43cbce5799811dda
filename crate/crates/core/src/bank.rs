//! The filter-bank energy and its analytic derivatives.
//!
//! The energy of a signal `x` is
//!
//! ```text
//! Phi(x; theta) = sum_k theta_k * sum_p relu(<x, w_k>(p) + b_k)
//! ```
//!
//! and the model's unnormalized log-density tilts a zero-mean Gaussian
//! reference with variance `ref_variance`:
//!
//! ```text
//! log p(x) = Phi(x; theta) - |x|^2 / (2 * ref_variance) - log Z(theta)
//! ```
//!
//! `Z(theta)` is never evaluated. Because `Phi` is linear in `theta`, the
//! gradient field decomposes as `grad_x Phi = sum_k theta_k g_k(x)` where
//! `g_k` only depends on which units are active. This gives the closed form
//! `grad_theta |grad_x Phi|^2 = 2 G theta` with Gram matrix
//! `G_jk = <g_j, g_k>`.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{FrameError, Result};
use crate::signal::{correlate_adjoint_add, correlate_into, Filter, GridSignal};

/// How a bank's kernels were generated; recorded in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BankKind {
    Gabor(GaborSpec),
    Random {
        kernel_shape: Vec<usize>,
        count: usize,
        seed: u64,
    },
    Custom,
}

/// Gabor bank layout: one even-phase kernel per (orientation, wavelength).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaborSpec {
    pub size: usize,
    pub orientations: usize,
    pub wavelengths: Vec<f64>,
    /// Shared bias applied to every filter.
    pub bias: f64,
}

impl Default for GaborSpec {
    fn default() -> Self {
        Self {
            size: 5,
            orientations: 4,
            wavelengths: vec![3.0, 6.0],
            bias: 0.0,
        }
    }
}

/// Per-filter ReLU masks: `true` where the pre-activation is strictly positive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivationPattern {
    pub masks: Vec<Vec<bool>>,
}

impl ActivationPattern {
    pub fn active_count(&self) -> usize {
        self.masks.iter().flatten().filter(|&&m| m).count()
    }
}

/// K fixed filters, learnable weights `theta`, and the Gaussian reference variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBank")]
pub struct FilterBank {
    kind: BankKind,
    filters: Vec<Filter>,
    theta: Vec<f64>,
    ref_variance: f64,
}

#[derive(Deserialize)]
struct RawBank {
    kind: BankKind,
    filters: Vec<Filter>,
    theta: Vec<f64>,
    ref_variance: f64,
}

impl TryFrom<RawBank> for FilterBank {
    type Error = FrameError;

    fn try_from(raw: RawBank) -> Result<Self> {
        Ok(FilterBank::new(raw.filters, raw.theta, raw.ref_variance)?.with_kind(raw.kind))
    }
}

impl FilterBank {
    pub fn new(filters: Vec<Filter>, theta: Vec<f64>, ref_variance: f64) -> Result<Self> {
        if filters.is_empty() {
            return Err(FrameError::Config("filter bank needs at least one filter".into()));
        }
        let rank = filters[0].kernel().shape().len();
        if filters.iter().any(|f| f.kernel().shape().len() != rank) {
            return Err(FrameError::Shape("all kernels must share one rank".into()));
        }
        if theta.len() != filters.len() {
            return Err(FrameError::LengthMismatch {
                expected: filters.len(),
                actual: theta.len(),
            });
        }
        if !(ref_variance > 0.0 && ref_variance.is_finite()) {
            return Err(FrameError::Config(format!(
                "ref_variance must be positive and finite, got {ref_variance}"
            )));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(FrameError::Config("theta must be finite".into()));
        }
        Ok(Self {
            kind: BankKind::Custom,
            filters,
            theta,
            ref_variance,
        })
    }

    /// Gabor bank with zero-mean, unit-norm kernels and `theta = 0`.
    pub fn gabor(spec: &GaborSpec, ref_variance: f64) -> Result<Self> {
        if spec.size == 0 || spec.orientations == 0 || spec.wavelengths.is_empty() {
            return Err(FrameError::Config("empty Gabor specification".into()));
        }
        let half = (spec.size as f64 - 1.0) / 2.0;
        let mut filters = Vec::with_capacity(spec.orientations * spec.wavelengths.len());
        for &wavelength in &spec.wavelengths {
            if !(wavelength > 0.0) {
                return Err(FrameError::Config("Gabor wavelength must be positive".into()));
            }
            let sigma = 0.5 * wavelength;
            for o in 0..spec.orientations {
                let angle = PI * o as f64 / spec.orientations as f64;
                let (s, c) = angle.sin_cos();
                let mut k = Vec::with_capacity(spec.size * spec.size);
                for i in 0..spec.size {
                    for j in 0..spec.size {
                        let (y, x) = (i as f64 - half, j as f64 - half);
                        let xr = x * c + y * s;
                        let yr = -x * s + y * c;
                        let envelope = (-(xr * xr + 0.25 * yr * yr) / (2.0 * sigma * sigma)).exp();
                        k.push(envelope * (2.0 * PI * xr / wavelength).cos());
                    }
                }
                normalize_kernel(&mut k);
                let kernel = GridSignal::new(vec![spec.size, spec.size], k)?;
                filters.push(Filter::new(kernel, spec.bias)?);
            }
        }
        let theta = vec![0.0; filters.len()];
        let mut bank = Self::new(filters, theta, ref_variance)?;
        bank.kind = BankKind::Gabor(spec.clone());
        Ok(bank)
    }

    /// Seeded Gaussian kernels, zero-mean and unit-norm, zero bias, `theta = 0`.
    pub fn random(
        count: usize,
        kernel_shape: &[usize],
        seed: u64,
        ref_variance: f64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = kernel_shape.iter().product();
        let mut filters = Vec::with_capacity(count);
        for _ in 0..count {
            let mut k: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            if n > 1 {
                normalize_kernel(&mut k);
            }
            filters.push(Filter::new(GridSignal::new(kernel_shape.to_vec(), k)?, 0.0)?);
        }
        let theta = vec![0.0; count];
        let mut bank = Self::new(filters, theta, ref_variance)?;
        bank.kind = BankKind::Random {
            kernel_shape: kernel_shape.to_vec(),
            count,
            seed,
        };
        Ok(bank)
    }

    /// Relabel how the kernels were generated (used when restoring checkpoints).
    pub fn with_kind(mut self, kind: BankKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn kind(&self) -> &BankKind {
        &self.kind
    }

    pub fn filters(&self) -> &[Filter] {
        &self.filters
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn ref_variance(&self) -> f64 {
        self.ref_variance
    }

    pub fn set_theta(&mut self, theta: Vec<f64>) -> Result<()> {
        if theta.len() != self.filters.len() {
            return Err(FrameError::LengthMismatch {
                expected: self.filters.len(),
                actual: theta.len(),
            });
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(FrameError::Config("theta must be finite".into()));
        }
        self.theta = theta;
        Ok(())
    }

    /// Copy of this bank with different weights.
    pub fn with_theta(&self, theta: Vec<f64>) -> Result<Self> {
        let mut bank = self.clone();
        bank.set_theta(theta)?;
        Ok(bank)
    }

    pub fn check_signal(&self, x: &GridSignal) -> Result<()> {
        self.filters
            .iter()
            .try_for_each(|f| f.check_compatible(x.shape()))
    }

    /// Pre-activation maps `<x, w_k> + b_k`, one per filter.
    pub fn pre_activations(&self, x: &GridSignal) -> Result<Vec<GridSignal>> {
        self.check_signal(x)?;
        Ok(self.pre_activations_unchecked(x))
    }

    fn pre_activations_unchecked(&self, x: &GridSignal) -> Vec<GridSignal> {
        self.filters
            .iter()
            .map(|f| {
                let mut out = vec![0.0; x.len()];
                correlate_into(x, f, &mut out);
                GridSignal::from_parts_unchecked(x.shape().to_vec(), out)
            })
            .collect()
    }

    /// `Phi(x; theta)`.
    pub fn energy(&self, x: &GridSignal) -> Result<f64> {
        let responses = self.grad_theta_energy(x)?;
        Ok(self.theta.iter().zip(&responses).map(|(t, r)| t * r).sum())
    }

    /// `Phi(x; theta) - |x|^2 / (2 ref_variance)`, without the normalizer.
    pub fn log_density_unnorm(&self, x: &GridSignal) -> Result<f64> {
        Ok(self.energy(x)? - x.norm_sq() / (2.0 * self.ref_variance))
    }

    /// Per-filter summed ReLU responses `F_k(x)`; this is `grad_theta Phi`
    /// and does not depend on theta.
    pub fn grad_theta_energy(&self, x: &GridSignal) -> Result<Vec<f64>> {
        self.check_signal(x)?;
        let mut buf = vec![0.0; x.len()];
        Ok(self
            .filters
            .iter()
            .map(|f| {
                correlate_into(x, f, &mut buf);
                buf.iter().filter(|&&v| v > 0.0).sum()
            })
            .collect())
    }

    /// `grad_x Phi(x; theta)`; ReLU units at exactly zero count as inactive.
    pub fn grad_x_energy(&self, x: &GridSignal) -> Result<GridSignal> {
        self.check_signal(x)?;
        let mut grad = vec![0.0; x.len()];
        let mut buf = vec![0.0; x.len()];
        for (f, &t) in self.filters.iter().zip(&self.theta) {
            if t == 0.0 {
                continue;
            }
            correlate_into(x, f, &mut buf);
            buf.iter_mut()
                .for_each(|v| *v = if *v > 0.0 { 1.0 } else { 0.0 });
            correlate_adjoint_add(&buf, x.shape(), f, t, &mut grad);
        }
        Ok(GridSignal::from_parts_unchecked(x.shape().to_vec(), grad))
    }

    /// `g_k = grad_x sum_p relu(response_k(p))`, one field per filter.
    pub fn filter_grad_fields(&self, x: &GridSignal) -> Result<Vec<GridSignal>> {
        self.check_signal(x)?;
        let mut buf = vec![0.0; x.len()];
        Ok(self
            .filters
            .iter()
            .map(|f| {
                correlate_into(x, f, &mut buf);
                buf.iter_mut()
                    .for_each(|v| *v = if *v > 0.0 { 1.0 } else { 0.0 });
                let mut g = vec![0.0; x.len()];
                correlate_adjoint_add(&buf, x.shape(), f, 1.0, &mut g);
                GridSignal::from_parts_unchecked(x.shape().to_vec(), g)
            })
            .collect())
    }

    /// Symmetric PSD matrix `G_jk = <g_j(x), g_k(x)>`, row-major K x K.
    pub fn gram_matrix(&self, x: &GridSignal) -> Result<Vec<f64>> {
        let fields = self.filter_grad_fields(x)?;
        let k = fields.len();
        let mut gram = vec![0.0; k * k];
        for i in 0..k {
            for j in i..k {
                let v = fields[i].dot(&fields[j]);
                gram[i * k + j] = v;
                gram[j * k + i] = v;
            }
        }
        Ok(gram)
    }

    /// `grad_theta |grad_x Phi(x; theta)|^2 = 2 G(x) theta`.
    pub fn grad_theta_sq_grad_norm(&self, x: &GridSignal) -> Result<Vec<f64>> {
        let gram = self.gram_matrix(x)?;
        let k = self.theta.len();
        Ok((0..k)
            .map(|i| {
                2.0 * gram[i * k..(i + 1) * k]
                    .iter()
                    .zip(&self.theta)
                    .map(|(g, t)| g * t)
                    .sum::<f64>()
            })
            .collect())
    }

    pub fn activation_pattern(&self, x: &GridSignal) -> Result<ActivationPattern> {
        Ok(ActivationPattern {
            masks: self
                .pre_activations(x)?
                .iter()
                .map(|r| r.values().iter().map(|&v| v > 0.0).collect())
                .collect(),
        })
    }

    /// Smallest `|pre-activation|` over all filters and positions: how far `x`
    /// sits from the nearest ReLU kink, in response units.
    pub fn kink_margin(&self, x: &GridSignal) -> Result<f64> {
        Ok(self
            .pre_activations(x)?
            .iter()
            .flat_map(|r| r.values().iter().map(|v| v.abs()))
            .fold(f64::INFINITY, f64::min))
    }
}

fn normalize_kernel(k: &mut [f64]) {
    let mean = k.iter().sum::<f64>() / k.len() as f64;
    k.iter_mut().for_each(|v| *v -= mean);
    let norm = k.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        k.iter_mut().for_each(|v| *v /= norm);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_bank(theta: f64) -> FilterBank {
        let f = Filter::new(GridSignal::from_vec(vec![1.0]).unwrap(), 0.0).unwrap();
        FilterBank::new(vec![f], vec![theta], 1.0).unwrap()
    }

    fn sig(v: &[f64]) -> GridSignal {
        GridSignal::from_vec(v.to_vec()).unwrap()
    }

    #[test]
    fn energy_examples() {
        assert_eq!(unit_bank(2.0).energy(&sig(&[3.0])).unwrap(), 6.0);
        assert_eq!(unit_bank(2.0).energy(&sig(&[-3.0])).unwrap(), 0.0);
        assert_eq!(unit_bank(3.0).energy(&sig(&[1.0, -2.0])).unwrap(), 3.0);
    }

    #[test]
    fn log_density_examples() {
        assert_eq!(unit_bank(0.0).log_density_unnorm(&sig(&[2.0])).unwrap(), -2.0);
        assert_eq!(unit_bank(2.0).log_density_unnorm(&sig(&[3.0])).unwrap(), 1.5);
        let bank = FilterBank::gabor(&GaborSpec::default(), 1.0)
            .unwrap()
            .with_theta(vec![0.7; 8])
            .unwrap();
        let zero = GridSignal::zeros(&[8, 8]).unwrap();
        assert_eq!(bank.log_density_unnorm(&zero).unwrap(), 0.0);
    }

    #[test]
    fn gradient_examples() {
        assert_eq!(unit_bank(2.0).grad_x_energy(&sig(&[3.0])).unwrap().values(), &[2.0]);
        assert_eq!(unit_bank(2.0).grad_x_energy(&sig(&[-3.0])).unwrap().values(), &[0.0]);
        assert_eq!(unit_bank(5.0).grad_theta_energy(&sig(&[3.0])).unwrap(), vec![3.0]);
        assert_eq!(unit_bank(5.0).grad_theta_energy(&sig(&[-3.0])).unwrap(), vec![0.0]);
        // exact zero pre-activation is inactive
        assert_eq!(unit_bank(2.0).grad_x_energy(&sig(&[0.0])).unwrap().values(), &[0.0]);
    }

    #[test]
    fn sq_grad_norm_examples() {
        let x = sig(&[1.0, -2.0]);
        assert_eq!(unit_bank(3.0).grad_theta_sq_grad_norm(&x).unwrap(), vec![6.0]);
        assert_eq!(unit_bank(0.0).grad_theta_sq_grad_norm(&x).unwrap(), vec![0.0]);
        assert_eq!(unit_bank(6.0).grad_theta_sq_grad_norm(&x).unwrap(), vec![12.0]);
    }

    #[test]
    fn grad_fields_recombine_to_gradient() {
        let bank = FilterBank::random(5, &[3, 3], 11, 1.0)
            .unwrap()
            .with_theta(vec![0.3, -1.2, 2.0, 0.0, 0.8])
            .unwrap();
        let x = GridSignal::new(vec![6, 7], (0..42).map(|v| (v as f64 * 0.9).sin()).collect())
            .unwrap();
        let fields = bank.filter_grad_fields(&x).unwrap();
        let mut combined = vec![0.0; x.len()];
        for (g, t) in fields.iter().zip(bank.theta()) {
            combined.iter_mut().zip(g.values()).for_each(|(c, v)| *c += t * v);
        }
        let direct = bank.grad_x_energy(&x).unwrap();
        for (a, b) in combined.iter().zip(direct.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gram_is_symmetric_psd() {
        let bank = FilterBank::gabor(&GaborSpec::default(), 1.0).unwrap();
        let x = GridSignal::new(vec![9, 9], (0..81).map(|v| (v as f64 * 0.41).cos()).collect())
            .unwrap();
        let gram = bank.gram_matrix(&x).unwrap();
        let k = bank.len();
        for i in 0..k {
            assert!(gram[i * k + i] >= 0.0);
            for j in 0..k {
                assert_eq!(gram[i * k + j], gram[j * k + i]);
            }
        }
        // v^T G v = |sum_k v_k g_k|^2 >= 0 for a few directions
        for s in 0..5 {
            let v: Vec<f64> = (0..k).map(|i| ((i + s) as f64 * 1.7).sin()).collect();
            let q: f64 = (0..k)
                .flat_map(|i| (0..k).map(move |j| (i, j)))
                .map(|(i, j)| v[i] * gram[i * k + j] * v[j])
                .sum();
            assert!(q >= -1e-12);
        }
    }

    #[test]
    fn gabor_kernels_are_normalized() {
        let bank = FilterBank::gabor(&GaborSpec::default(), 1.0).unwrap();
        assert_eq!(bank.len(), 8);
        for f in bank.filters() {
            assert!(f.kernel().values().iter().sum::<f64>().abs() < 1e-12);
            assert!((f.kernel().norm_sq() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn construction_errors() {
        let f = Filter::new(GridSignal::from_vec(vec![1.0]).unwrap(), 0.0).unwrap();
        assert!(FilterBank::new(vec![f.clone()], vec![1.0, 2.0], 1.0).is_err());
        assert!(FilterBank::new(vec![f.clone()], vec![1.0], 0.0).is_err());
        assert!(FilterBank::new(vec![], vec![], 1.0).is_err());
        let mut bank = FilterBank::new(vec![f], vec![1.0], 1.0).unwrap();
        assert!(bank.set_theta(vec![]).is_err());
    }

    #[test]
    fn serde_round_trip_keeps_kind() {
        let bank = FilterBank::random(3, &[2, 2], 5, 0.5).unwrap();
        let text = serde_json::to_string(&bank).unwrap();
        let back: FilterBank = serde_json::from_str(&text).unwrap();
        assert_eq!(back, bank);
    }
}
