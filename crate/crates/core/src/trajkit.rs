//! Numeric helpers shared by every stage: differentiation on nonuniform
//! grids, linear resampling and error metrics.

use crate::error::{Error, Result};

/// A scalar signal sampled at strictly increasing timestamps (seconds).
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    t: Vec<f64>,
    values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(t: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if t.len() != values.len() {
            return Err(Error::invalid(format!(
                "timestamp count {} differs from value count {}",
                t.len(),
                values.len()
            )));
        }
        check_increasing(&t)?;
        Ok(Self { t, values })
    }

    /// Samples `f` on the given timestamps.
    pub fn from_fn(t: Vec<f64>, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = t.iter().map(|&ti| f(ti)).collect();
        Self::new(t, values)
    }

    /// Uniform grid `t0 + k*dt` for `k in 0..n`.
    pub fn uniform(t0: f64, dt: f64, values: Vec<f64>) -> Result<Self> {
        let t = uniform_grid(t0, dt, values.len());
        Self::new(t, values)
    }

    pub fn t(&self) -> &[f64] {
        &self.t
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn start(&self) -> Option<f64> {
        self.t.first().copied()
    }

    pub fn end(&self) -> Option<f64> {
        self.t.last().copied()
    }

    pub fn into_parts(self) -> (Vec<f64>, Vec<f64>) {
        (self.t, self.values)
    }

    /// Same timestamps, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.t.clone(), values)
    }

    /// Linear interpolation at `at`; `None` outside the sampled span.
    pub fn interpolate(&self, at: f64) -> Option<f64> {
        interpolate_sorted(&self.t, &self.values, at)
    }

    pub fn same_grid(&self, other: &TimeSeries) -> bool {
        self.len() == other.len()
            && self
                .t
                .iter()
                .zip(&other.t)
                .all(|(a, b)| (a - b).abs() <= GRID_TOLERANCE)
    }
}

/// Two timestamps closer than this are treated as the same grid point.
pub const GRID_TOLERANCE: f64 = 1e-9;

pub fn uniform_grid(t0: f64, dt: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| t0 + k as f64 * dt).collect()
}

fn check_increasing(t: &[f64]) -> Result<()> {
    if let Some(bad) = t.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite timestamp at index {bad}")));
    }
    for (i, w) in t.windows(2).enumerate() {
        if w[1] <= w[0] {
            return Err(Error::invalid(format!(
                "timestamps not strictly increasing at index {} ({} then {})",
                i + 1,
                w[0],
                w[1]
            )));
        }
    }
    Ok(())
}

/// Derivative of `y` with respect to `t`.
///
/// Interior points use the nonuniform central difference
/// `(y[i+1] - y[i-1]) / (t[i+1] - t[i-1])`; the two endpoints use one-sided
/// first-order differences.
pub fn derivative(t: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    if t.len() != y.len() {
        return Err(Error::invalid("derivative: length mismatch"));
    }
    if t.len() < 2 {
        return Err(Error::invalid(format!(
            "derivative needs at least 2 samples, got {}",
            t.len()
        )));
    }
    check_increasing(t)?;
    let n = t.len();
    let mut d = Vec::with_capacity(n);
    d.push((y[1] - y[0]) / (t[1] - t[0]));
    for i in 1..n - 1 {
        d.push((y[i + 1] - y[i - 1]) / (t[i + 1] - t[i - 1]));
    }
    d.push((y[n - 1] - y[n - 2]) / (t[n - 1] - t[n - 2]));
    Ok(d)
}

pub fn finite_diff(series: &TimeSeries) -> Result<TimeSeries> {
    let d = derivative(&series.t, &series.values)?;
    Ok(TimeSeries {
        t: series.t.clone(),
        values: d,
    })
}

fn interpolate_sorted(t: &[f64], y: &[f64], at: f64) -> Option<f64> {
    let first = *t.first()?;
    let last = *t.last()?;
    if at < first - GRID_TOLERANCE || at > last + GRID_TOLERANCE {
        return None;
    }
    if at <= first {
        return Some(y[0]);
    }
    if at >= last {
        return Some(y[y.len() - 1]);
    }
    // first index with t[i] > at
    let hi = t.partition_point(|&ti| ti <= at);
    let lo = hi - 1;
    if (t[lo] - at).abs() == 0.0 {
        return Some(y[lo]);
    }
    let w = (at - t[lo]) / (t[hi] - t[lo]);
    Some(y[lo] + w * (y[hi] - y[lo]))
}

/// Linear interpolation onto `t0, t0+dt, ...` up to the last sample; the grid
/// never extends past the observed span.
pub fn resample_uniform(series: &TimeSeries, dt: f64) -> Result<TimeSeries> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::invalid(format!("resample step must be positive, got {dt}")));
    }
    if series.len() < 2 {
        return Err(Error::invalid("resample needs at least 2 samples"));
    }
    let t0 = series.t[0];
    let span = series.t[series.len() - 1] - t0;
    let n = (span / dt + 1e-9).floor() as usize + 1;
    resample_onto(series, &uniform_grid(t0, dt, n))
}

/// Linear interpolation onto an explicit grid that lies within the span.
pub fn resample_onto(series: &TimeSeries, grid: &[f64]) -> Result<TimeSeries> {
    let values = grid
        .iter()
        .map(|&g| {
            series.interpolate(g).ok_or_else(|| {
                Error::invalid(format!(
                    "grid point {g} outside series span [{:?}, {:?}]",
                    series.start(),
                    series.end()
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    TimeSeries::new(grid.to_vec(), values)
}

pub fn rmse(a: &TimeSeries, b: &TimeSeries) -> Result<f64> {
    if !a.same_grid(b) {
        return Err(Error::invalid("rmse: series are on different grids"));
    }
    rmse_slices(&a.values, &b.values)
}

pub fn rmse_slices(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid("rmse: length mismatch"));
    }
    if a.is_empty() {
        return Err(Error::invalid("rmse of empty series"));
    }
    let sse: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((sse / a.len() as f64).sqrt())
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population variance.
pub fn variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64
}
