//! Trajectory enhancement: artifact repair, Kalman estimation on a uniform
//! grid, wavelet denoising of acceleration and size estimation.

pub mod kalman;
pub mod length;
pub mod minjerk;
pub mod repair;
pub mod wavelet;

use serde::{Deserialize, Serialize};

use crate::assess;
use crate::error::{Error, Result};
use crate::select::{CFPair, LeaderType};
use crate::trajkit::{self, TimeSeries};

pub use kalman::{estimate_noise_sigma, kf_constant_acc, kf_constant_speed, KalmanSpec};
pub use length::{estimate_length, estimate_size, SizeRule, AV_LENGTH, AV_WIDTH};
pub use minjerk::{fill_min_jerk, solve_min_jerk, MinJerkProblem, MinJerkSolution};
pub use repair::{repair_zero_speed, FillInterval, FillKind, RepairConfig};
pub use wavelet::{wavelet_denoise, WaveletSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnhanceConfig {
    /// Output grid spacing, seconds.
    pub dt: f64,
    pub repair: RepairConfig,
    pub length: SizeRule,
    pub width: SizeRule,
}

impl Default for EnhanceConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            repair: RepairConfig::default(),
            length: SizeRule::length(),
            width: SizeRule::width(),
        }
    }
}

impl EnhanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::Config("enhance.dt must be > 0".into()));
        }
        self.repair.validate()?;
        self.length.validate("length")?;
        self.width.validate("width")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnhanceSpecs {
    pub kalman: KalmanSpec,
    pub wavelet: WaveletSpec,
    pub enhance: EnhanceConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnhancedVehicle {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub a: Vec<f64>,
    pub j: Vec<f64>,
    pub sigma_a: f64,
    pub length: f64,
    pub width: f64,
    pub fills: Vec<FillInterval>,
    /// Reported-zero artifacts removed before filtering.
    pub artifacts: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnhancedPair {
    pub pair_id: String,
    pub leader_type: LeaderType,
    pub t: Vec<f64>,
    pub lead: EnhancedVehicle,
    pub fol: EnhancedVehicle,
}

impl EnhancedPair {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn duration(&self) -> f64 {
        match (self.t.first(), self.t.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }
}

/// Per-vehicle input after repair, still on its own timeline.
struct Prepared {
    t: Vec<f64>,
    x: Vec<f64>,
    /// Speed on `t`; KF1 output where the source had none.
    v: Vec<f64>,
    fills: Vec<FillInterval>,
    artifacts: Vec<f64>,
}

fn prepare(t: &[f64], x: &[f64], v: &[Option<f64>], is_av: bool, specs: &EnhanceSpecs) -> Result<Prepared> {
    let full_speed: Option<Vec<f64>> = v.iter().copied().collect();
    match full_speed {
        Some(speed) if !is_av => {
            let artifacts = assess::speed_consistency(t, x, v)?.artifacts;
            let r = repair_zero_speed(t, x, &speed, &artifacts, &specs.enhance.repair)?;
            Ok(Prepared {
                t: r.t,
                x: r.x,
                v: r.v,
                fills: r.fills,
                artifacts,
            })
        }
        _ => {
            let xs = TimeSeries::new(t.to_vec(), x.to_vec())?;
            let est = kf_constant_speed(&xs, &specs.kalman)?;
            Ok(Prepared {
                t: t.to_vec(),
                x: x.to_vec(),
                v: est.v.into_parts().1,
                fills: Vec::new(),
                artifacts: Vec::new(),
            })
        }
    }
}

/// Enhanced x, v, a, j on the grid plus the estimated acceleration noise.
type Smoothed = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, f64);

fn smooth(p: &Prepared, grid: &[f64], specs: &EnhanceSpecs) -> Result<Smoothed> {
    let x = trajkit::resample_onto(&TimeSeries::new(p.t.clone(), p.x.clone())?, grid)?;
    let v = trajkit::resample_onto(&TimeSeries::new(p.t.clone(), p.v.clone())?, grid)?;
    let kf = kf_constant_acc(&x, &v, &specs.kalman)?;
    let a_v = trajkit::finite_diff(&kf.v)?;
    let sigma = estimate_noise_sigma(&a_v, &kf.a)?;
    let a_hat = wavelet_denoise(&a_v, sigma, &specs.wavelet)?;
    let j_hat = trajkit::finite_diff(&a_hat)?;
    Ok((
        kf.x.into_parts().1,
        kf.v.into_parts().1,
        a_hat.into_parts().1,
        j_hat.into_parts().1,
        sigma,
    ))
}

fn size_of(samples: &[Option<f64>], rule: &SizeRule, what: &str) -> Result<f64> {
    let present: Vec<f64> = samples.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::InsufficientData(format!("no {what} samples")));
    }
    estimate_size(&present, rule)
}

/// Full enhancement of one pair onto a shared uniform grid over the span
/// both vehicles cover after repair.
pub fn enhance_pair(pair: &CFPair, specs: &EnhanceSpecs) -> Result<EnhancedPair> {
    let lead_av = pair.leader_type == LeaderType::Av;
    let lead = prepare(&pair.time, &pair.x_lead, &pair.v_lead, lead_av, specs)?;
    let fol = prepare(&pair.time, &pair.x_fol, &pair.v_fol, false, specs)?;

    let t0 = lead.t[0].max(fol.t[0]);
    let t1 = lead.t[lead.t.len() - 1].min(fol.t[fol.t.len() - 1]);
    let dt = specs.enhance.dt;
    if t1 <= t0 {
        return Err(Error::InsufficientData(format!(
            "{}: no common span after repair",
            pair.pair_id
        )));
    }
    let n = ((t1 - t0) / dt + 1e-9).floor() as usize + 1;
    let grid = trajkit::uniform_grid(t0, dt, n);

    let (xl, vl, al, jl, sl) = smooth(&lead, &grid, specs)?;
    let (xf, vf, af, jf, sf) = smooth(&fol, &grid, specs)?;
    if let Some(i) = (0..n).find(|&i| xl[i] <= xf[i]) {
        return Err(Error::Numerical(format!(
            "{}: enhanced leader not ahead of follower at t = {}",
            pair.pair_id, grid[i]
        )));
    }

    let (length_lead, width_lead) = if lead_av {
        (AV_LENGTH, AV_WIDTH)
    } else {
        (
            size_of(&pair.length_lead, &specs.enhance.length, "leader length")?,
            size_of(&pair.width_lead, &specs.enhance.width, "leader width")?,
        )
    };
    let length_fol = size_of(&pair.length_fol, &specs.enhance.length, "follower length")?;
    let width_fol = size_of(&pair.width_fol, &specs.enhance.width, "follower width")?;

    Ok(EnhancedPair {
        pair_id: pair.pair_id.clone(),
        leader_type: pair.leader_type,
        t: grid,
        lead: EnhancedVehicle {
            x: xl,
            v: vl,
            a: al,
            j: jl,
            sigma_a: sl,
            length: length_lead,
            width: width_lead,
            fills: lead.fills,
            artifacts: lead.artifacts,
        },
        fol: EnhancedVehicle {
            x: xf,
            v: vf,
            a: af,
            j: jf,
            sigma_a: sf,
            length: length_fol,
            width: width_fol,
            fills: fol.fills,
            artifacts: fol.artifacts,
        },
    })
}
