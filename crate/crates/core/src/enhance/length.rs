use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajkit;

/// Fixed AV dimensions, metres.
pub const AV_LENGTH: f64 = 4.87;
pub const AV_WIDTH: f64 = 1.85;

/// Low-variance series are averaged; otherwise samples are clamped into a
/// plausible range and a high percentile is taken, since perception tends
/// to under-report the extent of partially observed vehicles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SizeRule {
    /// Population variance below which the mean is used, m^2.
    pub variance_threshold: f64,
    pub clamp_min: f64,
    pub clamp_max: f64,
    pub percentile: f64,
}

impl SizeRule {
    pub fn length() -> Self {
        Self {
            variance_threshold: 0.3,
            clamp_min: 3.5,
            clamp_max: 6.5,
            percentile: 0.95,
        }
    }

    pub fn width() -> Self {
        Self {
            variance_threshold: 0.3,
            clamp_min: 1.4,
            clamp_max: 2.6,
            percentile: 0.95,
        }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        let ok = self.variance_threshold > 0.0
            && self.clamp_min > 0.0
            && self.clamp_max > self.clamp_min
            && (0.0..=1.0).contains(&self.percentile);
        if !ok {
            return Err(Error::Config(format!("invalid size rule for {name}: {self:?}")));
        }
        Ok(())
    }
}

impl Default for SizeRule {
    fn default() -> Self {
        Self::length()
    }
}

/// Linear-interpolated order statistic at `q` of sorted data, `h = q (n - 1)`.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn estimate_size(samples: &[f64], rule: &SizeRule) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("size estimate needs at least one sample"));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite size sample"));
    }
    if trajkit::variance(samples) < rule.variance_threshold {
        // centred on the first sample so a constant series is returned exactly
        let s0 = samples[0];
        return Ok(s0 + samples.iter().map(|v| v - s0).sum::<f64>() / samples.len() as f64);
    }
    let mut clamped: Vec<f64> = samples
        .iter()
        .map(|v| v.clamp(rule.clamp_min, rule.clamp_max))
        .collect();
    clamped.sort_by(f64::total_cmp);
    Ok(percentile_sorted(&clamped, rule.percentile))
}

pub fn estimate_length(samples: &[f64]) -> Result<f64> {
    estimate_size(samples, &SizeRule::length())
}
