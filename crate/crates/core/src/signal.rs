//! Grid signals and zero-padded "same" correlation.
//!
//! Signals are rank-1 (a flat vector of length `d`) or rank-2 (`H x W`)
//! arrays stored row-major. Internally everything is treated as a 2-D grid,
//! with a rank-1 signal viewed as a single row.

use serde::{Deserialize, Serialize};

use crate::error::{FrameError, Result};

/// A real-valued array on a regular grid: an image patch or a vector sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSignal {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl GridSignal {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        validate_shape(&shape)?;
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(FrameError::Shape(format!(
                "shape {shape:?} holds {expected} values, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(FrameError::Shape(format!("non-finite value at index {i}")));
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        validate_shape(shape)?;
        let n = shape.iter().product();
        Ok(Self {
            shape: shape.to_vec(),
            values: vec![0.0; n],
        })
    }

    /// Flat rank-1 signal.
    pub fn from_vec(values: Vec<f64>) -> Result<Self> {
        Self::new(vec![values.len()], values)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable access to the raw values. Callers are responsible for keeping
    /// them finite.
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `(rows, cols)` view; a rank-1 signal is a single row.
    pub fn dims2(&self) -> (usize, usize) {
        dims2(&self.shape)
    }

    pub fn dot(&self, other: &GridSignal) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub(crate) fn from_parts_unchecked(shape: Vec<usize>, values: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        Self { shape, values }
    }
}

pub(crate) fn validate_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.len() > 2 {
        return Err(FrameError::Shape(format!(
            "only rank-1 and rank-2 grids are supported, got shape {shape:?}"
        )));
    }
    if shape.contains(&0) {
        return Err(FrameError::Shape(format!(
            "zero extent in shape {shape:?}"
        )));
    }
    Ok(())
}

pub(crate) fn dims2(shape: &[usize]) -> (usize, usize) {
    match shape {
        [n] => (1, *n),
        [h, w] => (*h, *w),
        _ => unreachable!("shape validated at construction"),
    }
}

/// A correlation kernel with its additive bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Filter {
    kernel: GridSignal,
    bias: f64,
}

impl Filter {
    pub fn new(kernel: GridSignal, bias: f64) -> Result<Self> {
        if !bias.is_finite() {
            return Err(FrameError::Shape("filter bias must be finite".into()));
        }
        Ok(Self { kernel, bias })
    }

    pub fn kernel(&self) -> &GridSignal {
        &self.kernel
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    /// Offset of the kernel origin: tap `i` reads the input at `p + i - anchor`.
    fn anchor(&self) -> (usize, usize) {
        let (kh, kw) = self.kernel.dims2();
        ((kh - 1) / 2, (kw - 1) / 2)
    }

    pub(crate) fn check_compatible(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != self.kernel.shape().len() {
            return Err(FrameError::Shape(format!(
                "kernel rank {} does not match signal rank {}",
                self.kernel.shape().len(),
                shape.len()
            )));
        }
        let (h, w) = dims2(shape);
        let (kh, kw) = self.kernel.dims2();
        if kh > h || kw > w {
            return Err(FrameError::Shape(format!(
                "kernel {:?} larger than signal {shape:?}",
                self.kernel.shape()
            )));
        }
        Ok(())
    }
}

/// Zero-padded "same" cross-correlation plus bias:
/// `out(p) = sum_o kernel(o) * padded(p + o) + bias`.
pub fn convolve(signal: &GridSignal, filter: &Filter) -> Result<GridSignal> {
    filter.check_compatible(signal.shape())?;
    let mut out = vec![0.0; signal.len()];
    correlate_into(signal, filter, &mut out);
    Ok(GridSignal::from_parts_unchecked(signal.shape.clone(), out))
}

pub(crate) fn correlate_into(signal: &GridSignal, filter: &Filter, out: &mut [f64]) {
    let (h, w) = signal.dims2();
    let (kh, kw) = filter.kernel.dims2();
    let (ah, aw) = filter.anchor();
    let x = &signal.values;
    let k = &filter.kernel.values;
    out.iter_mut().for_each(|v| *v = filter.bias);
    for i in 0..h {
        let row_out = &mut out[i * w..(i + 1) * w];
        for ki in 0..kh {
            let r = i as isize + ki as isize - ah as isize;
            if r < 0 || r >= h as isize {
                continue;
            }
            let row_in = &x[r as usize * w..(r as usize + 1) * w];
            for kj in 0..kw {
                let weight = k[ki * kw + kj];
                if weight == 0.0 {
                    continue;
                }
                // output column j reads input column j + kj - aw
                let shift = kj as isize - aw as isize;
                let j_lo = (-shift).max(0) as usize;
                let j_hi = ((w as isize - shift).min(w as isize)).max(0) as usize;
                for j in j_lo..j_hi {
                    row_out[j] += weight * row_in[(j as isize + shift) as usize];
                }
            }
        }
    }
}

/// Adjoint of [`correlate_into`] without the bias: accumulates
/// `scale * sum_p upstream(p) * kernel(q - p + anchor)` into `grad`.
pub(crate) fn correlate_adjoint_add(
    upstream: &[f64],
    shape: &[usize],
    filter: &Filter,
    scale: f64,
    grad: &mut [f64],
) {
    let (h, w) = dims2(shape);
    let (kh, kw) = filter.kernel.dims2();
    let (ah, aw) = filter.anchor();
    let k = &filter.kernel.values;
    for i in 0..h {
        for j in 0..w {
            let u = upstream[i * w + j];
            if u == 0.0 {
                continue;
            }
            let u = u * scale;
            for ki in 0..kh {
                let r = i as isize + ki as isize - ah as isize;
                if r < 0 || r >= h as isize {
                    continue;
                }
                let base = r as usize * w;
                for kj in 0..kw {
                    let c = j as isize + kj as isize - aw as isize;
                    if c < 0 || c >= w as isize {
                        continue;
                    }
                    grad[base + c as usize] += u * k[ki * kw + kj];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_correlate(x: &GridSignal, f: &Filter) -> Vec<f64> {
        let (h, w) = x.dims2();
        let (kh, kw) = f.kernel().dims2();
        let (ah, aw) = ((kh - 1) / 2, (kw - 1) / 2);
        let mut out = Vec::with_capacity(h * w);
        for i in 0..h as isize {
            for j in 0..w as isize {
                let mut acc = f.bias();
                for ki in 0..kh as isize {
                    for kj in 0..kw as isize {
                        let (r, c) = (i + ki - ah as isize, j + kj - aw as isize);
                        let v = if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
                            0.0
                        } else {
                            x.values()[r as usize * w + c as usize]
                        };
                        acc += f.kernel().values()[(ki * kw as isize + kj) as usize] * v;
                    }
                }
                out.push(acc);
            }
        }
        out
    }

    fn filter(shape: Vec<usize>, kernel: Vec<f64>, bias: f64) -> Filter {
        Filter::new(GridSignal::new(shape, kernel).unwrap(), bias).unwrap()
    }

    #[test]
    fn identity_kernel() {
        let x = GridSignal::from_vec(vec![3.0, -2.0]).unwrap();
        let out = convolve(&x, &filter(vec![1], vec![1.0], 0.0)).unwrap();
        assert_eq!(out.values(), &[3.0, -2.0]);
    }

    #[test]
    fn zero_kernel_gives_constant_bias() {
        let x = GridSignal::new(vec![3, 4], (0..12).map(|v| v as f64).collect()).unwrap();
        let out = convolve(&x, &filter(vec![3, 3], vec![0.0; 9], 1.25)).unwrap();
        assert!(out.values().iter().all(|&v| v == 1.25));
    }

    #[test]
    fn even_kernel_with_padding() {
        let x = GridSignal::from_vec(vec![1.0, 2.0, 3.0]).unwrap();
        let f = filter(vec![2], vec![1.0, 1.0], 0.0);
        let out = convolve(&x, &f).unwrap();
        assert_eq!(out.values(), &[3.0, 5.0, 3.0]);
        assert_eq!(naive_correlate(&x, &f), vec![3.0, 5.0, 3.0]);
    }

    #[test]
    fn matches_naive_loops_in_2d() {
        let x = GridSignal::new(
            vec![5, 6],
            (0..30).map(|v| ((v * 7) % 11) as f64 - 5.0).collect(),
        )
        .unwrap();
        for (kh, kw) in [(1, 1), (2, 3), (3, 3), (4, 2), (5, 5)] {
            let k: Vec<f64> = (0..kh * kw).map(|v| (v as f64 * 0.37).sin()).collect();
            let f = filter(vec![kh, kw], k, -0.3);
            let fast = convolve(&x, &f).unwrap();
            for (a, b) in fast.values().iter().zip(naive_correlate(&x, &f)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adjoint_identity() {
        // <correlate(x) - b, u> == <x, adjoint(u)>
        let x = GridSignal::new(vec![4, 5], (0..20).map(|v| (v as f64).cos()).collect()).unwrap();
        let u: Vec<f64> = (0..20).map(|v| (v as f64 * 1.3).sin()).collect();
        let f = filter(vec![3, 2], vec![0.5, -1.0, 2.0, 0.25, 1.5, -0.75], 0.0);
        let y = convolve(&x, &f).unwrap();
        let lhs: f64 = y.values().iter().zip(&u).map(|(a, b)| a * b).sum();
        let mut g = vec![0.0; 20];
        correlate_adjoint_add(&u, x.shape(), &f, 1.0, &mut g);
        let rhs: f64 = x.values().iter().zip(&g).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn kernel_larger_than_signal_is_rejected() {
        let x = GridSignal::from_vec(vec![1.0, 2.0]).unwrap();
        let f = filter(vec![3], vec![1.0; 3], 0.0);
        assert!(matches!(convolve(&x, &f), Err(FrameError::Shape(_))));
    }

    #[test]
    fn rank_mismatch_is_rejected() {
        let x = GridSignal::new(vec![3, 3], vec![0.0; 9]).unwrap();
        let f = filter(vec![1], vec![1.0], 0.0);
        assert!(convolve(&x, &f).is_err());
    }

    #[test]
    fn constructor_checks() {
        assert!(GridSignal::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(GridSignal::new(vec![2], vec![0.0, f64::NAN]).is_err());
        assert!(GridSignal::new(vec![2, 2, 2], vec![0.0; 8]).is_err());
        assert!(GridSignal::zeros(&[0]).is_err());
        assert!(Filter::new(GridSignal::from_vec(vec![1.0]).unwrap(), f64::INFINITY).is_err());
    }
}
