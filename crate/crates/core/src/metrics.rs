//! Training diagnostics: response distance, energy traces and a 1-D
//! Wasserstein-2 distance between empirical samples.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::bank::FilterBank;
use crate::error::{FrameError, Result};
use crate::signal::GridSignal;

/// Exact header of the metrics CSV.
pub const CSV_HEADER: &str =
    "iter,mode,energy_mean,response_distance,w2_1d,theta_norm,update_norm,diverged";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Frame,
    Wframe,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Frame => "frame",
            Mode::Wframe => "wframe",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = FrameError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frame" => Ok(Mode::Frame),
            "wframe" => Ok(Mode::Wframe),
            other => Err(FrameError::Config(format!("unknown mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One row per completed (or diverged) learning iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub iter: u64,
    pub mode: Mode,
    #[serde(with = "nullable_f64")]
    pub energy_mean: f64,
    #[serde(with = "nullable_f64")]
    pub response_distance: f64,
    pub w2_1d: Option<f64>,
    #[serde(with = "nullable_f64")]
    pub theta_norm: f64,
    #[serde(with = "nullable_f64")]
    pub update_norm: f64,
    pub diverged: bool,
}

impl MetricRow {
    fn csv_line(&self) -> String {
        let w2 = self.w2_1d.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{}",
            self.iter,
            self.mode,
            self.energy_mean,
            self.response_distance,
            w2,
            self.theta_norm,
            self.update_norm,
            self.diverged
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricTrace {
    rows: Vec<MetricRow>,
}

impl MetricTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, row: MetricRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if row.iter <= last.iter {
                return Err(FrameError::Config(format!(
                    "trace iterations must increase: {} after {}",
                    row.iter, last.iter
                )));
            }
        }
        if !row.diverged {
            let finite = [row.energy_mean, row.response_distance, row.theta_norm, row.update_norm]
                .iter()
                .chain(row.w2_1d.as_ref())
                .all(|v| v.is_finite());
            if !finite {
                return Err(FrameError::Config(format!(
                    "non-finite metric in non-diverged row {}",
                    row.iter
                )));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[MetricRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last(&self) -> Option<&MetricRow> {
        self.rows.last()
    }

    pub fn diverged(&self) -> bool {
        self.rows.iter().any(|r| r.diverged)
    }

    /// Row for a given iteration number, if recorded.
    pub fn at(&self, iter: u64) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.iter == iter)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            let _ = writeln!(out, "{}", row.csv_line());
        }
        out
    }
}

fn mean_responses(bank: &FilterBank, batch: &[GridSignal]) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(FrameError::Empty("batch has no signals".into()));
    }
    let mut acc = vec![0.0; bank.len()];
    for x in batch {
        for (a, r) in acc.iter_mut().zip(bank.grad_theta_energy(x)?) {
            *a += r;
        }
    }
    let n = batch.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

/// Average of `grad_theta Phi` over a batch: the `H` statistics of the learning rule.
pub fn mean_filter_responses(bank: &FilterBank, batch: &[GridSignal]) -> Result<Vec<f64>> {
    mean_responses(bank, batch)
}

/// `R = (1/K) sum_k |mean_i F_k(x_i) - mean_j F_k(y_j)|` with `F_k` the summed
/// positive response of filter `k`.
pub fn response_distance(bank: &FilterBank, xs: &[GridSignal], ys: &[GridSignal]) -> Result<f64> {
    let hx = mean_responses(bank, xs)?;
    let hy = mean_responses(bank, ys)?;
    Ok(l1_gap(&hx, &hy) / bank.len() as f64)
}

pub(crate) fn l1_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

pub fn mean_energy(bank: &FilterBank, batch: &[GridSignal]) -> Result<f64> {
    if batch.is_empty() {
        return Err(FrameError::Empty("batch has no signals".into()));
    }
    let total = batch
        .iter()
        .map(|x| bank.energy(x))
        .sum::<Result<f64>>()?;
    Ok(total / batch.len() as f64)
}

/// Exact W2 between two equal-size empirical measures on the line, via the
/// sorted (quantile) coupling.
pub fn empirical_w2_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(FrameError::LengthMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    if a.is_empty() {
        return Err(FrameError::Empty("no samples".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let mean_sq = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    Ok(mean_sq.sqrt())
}

mod nullable_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::Filter;

    fn identity_bank(k: usize) -> FilterBank {
        let filters = (0..k)
            .map(|_| Filter::new(GridSignal::from_vec(vec![1.0]).unwrap(), 0.0).unwrap())
            .collect();
        FilterBank::new(filters, vec![1.0; k], 1.0).unwrap()
    }

    fn batch(vals: &[f64]) -> Vec<GridSignal> {
        vals.iter().map(|&v| GridSignal::from_vec(vec![v]).unwrap()).collect()
    }

    #[test]
    fn response_distance_examples() {
        let bank = identity_bank(1);
        let x = batch(&[0.5, 1.5]);
        assert_eq!(response_distance(&bank, &x, &x).unwrap(), 0.0);
        assert_eq!(response_distance(&bank, &x, &batch(&[2.0, 4.0])).unwrap(), 2.0);
        assert!(response_distance(&bank, &[], &x).is_err());
    }

    #[test]
    fn response_distance_two_filters() {
        // filter 1 is the identity, filter 2 doubles: gaps 0.5 and 1.0
        let filters = vec![
            Filter::new(GridSignal::from_vec(vec![1.0]).unwrap(), 0.0).unwrap(),
            Filter::new(GridSignal::from_vec(vec![2.0]).unwrap(), 0.0).unwrap(),
        ];
        let bank = FilterBank::new(filters, vec![0.0, 0.0], 1.0).unwrap();
        let r = response_distance(&bank, &batch(&[1.0]), &batch(&[1.5])).unwrap();
        assert_eq!(r, 0.75);
    }

    #[test]
    fn w2_examples() {
        assert_eq!(empirical_w2_1d(&[0.0], &[3.0]).unwrap(), 3.0);
        assert_eq!(empirical_w2_1d(&[2.0, -1.0], &[-1.0, 2.0]).unwrap(), 0.0);
        let w = empirical_w2_1d(&[0.0, 1.0, 2.0], &[0.5, 1.5, 2.5]).unwrap();
        // every pairing but the sorted one costs more; sorted gap is 0.5 per pair
        assert!((w - 0.5).abs() < 1e-15);
        assert!(empirical_w2_1d(&[0.0], &[1.0, 2.0]).is_err());
        assert!(empirical_w2_1d(&[], &[]).is_err());
    }

    #[test]
    fn mean_energy_averages() {
        let bank = identity_bank(1).with_theta(vec![2.0]).unwrap();
        assert_eq!(mean_energy(&bank, &batch(&[1.0, -1.0, 3.0])).unwrap(), 8.0 / 3.0);
    }

    fn row(iter: u64) -> MetricRow {
        MetricRow {
            iter,
            mode: Mode::Frame,
            energy_mean: 1.5,
            response_distance: 0.25,
            w2_1d: None,
            theta_norm: 1.0,
            update_norm: 0.125,
            diverged: false,
        }
    }

    #[test]
    fn trace_rejects_non_increasing_iterations() {
        let mut t = MetricTrace::new();
        t.push(row(1)).unwrap();
        assert!(t.push(row(1)).is_err());
        t.push(row(3)).unwrap();
        assert_eq!(t.len(), 2);
    }

    #[test]
    fn trace_rejects_nan_unless_diverged() {
        let mut t = MetricTrace::new();
        let mut r = row(1);
        r.energy_mean = f64::NAN;
        assert!(t.push(r.clone()).is_err());
        r.diverged = true;
        t.push(r).unwrap();
        let text = serde_json::to_string(&t).unwrap();
        let back: MetricTrace = serde_json::from_str(&text).unwrap();
        assert!(back.rows()[0].energy_mean.is_nan());
    }

    #[test]
    fn csv_layout() {
        let mut t = MetricTrace::new();
        t.push(row(1)).unwrap();
        let mut r = row(2);
        r.mode = Mode::Wframe;
        r.w2_1d = Some(0.5);
        t.push(r).unwrap();
        assert_eq!(
            t.to_csv(),
            "iter,mode,energy_mean,response_distance,w2_1d,theta_norm,update_norm,diverged\n\
             1,frame,1.5,0.25,,1,0.125,false\n\
             2,wframe,1.5,0.25,0.5,1,0.125,false\n"
        );
    }
}
