//! Removal of reported-zero speed artifacts and refilling of the holes.

use serde::{Deserialize, Serialize};

use crate::enhance::minjerk::{solve_min_jerk, MinJerkProblem};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RepairConfig {
    /// Deleted span before the first artifact of a cluster, seconds.
    pub before: f64,
    /// Deleted span after the last artifact of a cluster, seconds.
    pub after: f64,
    /// Sample spacing above which the timeline counts as having a hole.
    pub max_gap: f64,
    /// Spacing of the timestamps inserted into genuine holes.
    pub fill_step: f64,
}

impl Default for RepairConfig {
    fn default() -> Self {
        Self {
            before: 0.5,
            after: 1.5,
            max_gap: 0.3,
            fill_step: 0.1,
        }
    }
}

impl RepairConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.before >= 0.0 && self.after >= 0.0 && self.max_gap > 0.0 && self.fill_step > 0.0;
        if !ok || self.fill_step >= self.max_gap {
            return Err(Error::Config(format!("invalid repair settings: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FillKind {
    Filled,
    Trimmed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FillInterval {
    pub t_start: f64,
    pub t_end: f64,
    pub kind: FillKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepairedSeries {
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub fills: Vec<FillInterval>,
}

/// Deletion windows `[first - before, last + after]`, one per artifact cluster.
fn deletion_windows(artifacts: &[f64], cfg: &RepairConfig) -> Vec<(f64, f64)> {
    let mut sorted = artifacts.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut windows: Vec<(f64, f64)> = Vec::new();
    for a in sorted {
        let (lo, hi) = (a - cfg.before, a + cfg.after);
        match windows.last_mut() {
            Some(w) if lo <= w.1 => w.1 = w.1.max(hi),
            _ => windows.push((lo, hi)),
        }
    }
    windows
}

/// Deletes every artifact cluster and refills deleted samples and genuine
/// timeline holes with the minimum-jerk polynomial between the surviving
/// neighbours. Surviving timestamps are untouched; holes that touch either
/// end of the series are trimmed.
pub fn repair_zero_speed(
    t: &[f64],
    x: &[f64],
    v: &[f64],
    artifacts: &[f64],
    cfg: &RepairConfig,
) -> Result<RepairedSeries> {
    let n = t.len();
    if x.len() != n || v.len() != n {
        return Err(Error::invalid("repair: series lengths differ"));
    }
    let eps = 1e-9;
    let windows = deletion_windows(artifacts, cfg);
    let kept: Vec<usize> = (0..n)
        .filter(|&i| !windows.iter().any(|&(lo, hi)| t[i] >= lo - eps && t[i] <= hi + eps))
        .collect();
    if kept.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "repair leaves {} of {n} samples",
            kept.len()
        )));
    }

    let mut fills = Vec::new();
    let (first, last) = (kept[0], kept[kept.len() - 1]);
    if first > 0 {
        fills.push(FillInterval {
            t_start: t[0],
            t_end: t[first - 1],
            kind: FillKind::Trimmed,
        });
    }

    // neighbours within the same surviving run give the boundary acceleration
    let joined = |i: usize, j: usize| j == i + 1 && t[j] - t[i] <= cfg.max_gap;
    let is_kept = |i: usize| kept.binary_search(&i).is_ok();
    let left_acc = |i: usize| {
        if i > 0 && is_kept(i - 1) && joined(i - 1, i) {
            (v[i] - v[i - 1]) / (t[i] - t[i - 1])
        } else {
            0.0
        }
    };
    let right_acc = |j: usize| {
        if j + 1 < n && is_kept(j + 1) && joined(j, j + 1) {
            (v[j + 1] - v[j]) / (t[j + 1] - t[j])
        } else {
            0.0
        }
    };

    let mut out_t = vec![t[first]];
    let mut out_x = vec![x[first]];
    let mut out_v = vec![v[first]];
    for w in kept.windows(2) {
        let (i, j) = (w[0], w[1]);
        if joined(i, j) {
            out_t.push(t[j]);
            out_x.push(x[j]);
            out_v.push(v[j]);
            continue;
        }
        let mut stamps = Vec::new();
        for k in i..j {
            if k > i {
                stamps.push(t[k]);
            }
            if t[k + 1] - t[k] > cfg.max_gap {
                let mut m = 1;
                while t[k] + m as f64 * cfg.fill_step < t[k + 1] - cfg.fill_step / 2.0 {
                    stamps.push(t[k] + m as f64 * cfg.fill_step);
                    m += 1;
                }
            }
        }
        let sol = solve_min_jerk(&MinJerkProblem {
            t0: t[i],
            t1: t[j],
            x0: x[i],
            x1: x[j],
            v0: v[i],
            v1: v[j],
            a0: left_acc(i),
            a1: right_acc(j),
        })?;
        for s in stamps {
            out_t.push(s);
            out_x.push(sol.position(s));
            out_v.push(sol.velocity(s));
        }
        out_t.push(t[j]);
        out_x.push(x[j]);
        out_v.push(v[j]);
        fills.push(FillInterval {
            t_start: t[i],
            t_end: t[j],
            kind: FillKind::Filled,
        });
    }
    if last + 1 < n {
        fills.push(FillInterval {
            t_start: t[last + 1],
            t_end: t[n - 1],
            kind: FillKind::Trimmed,
        });
    }
    Ok(RepairedSeries {
        t: out_t,
        x: out_x,
        v: out_v,
        fills,
    })
}
