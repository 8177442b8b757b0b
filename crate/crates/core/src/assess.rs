//! Kinematic plausibility checks on raw or enhanced trajectories.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajkit::{self, TimeSeries};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KinematicLimits {
    pub a_min: f64,
    pub a_max: f64,
    pub j_min: f64,
    pub j_max: f64,
    /// Width of the centred jerk sign-inversion window, seconds.
    pub jsi_window: f64,
    /// Inversions tolerated inside one window.
    pub jsi_max_inversions: usize,
}

impl Default for KinematicLimits {
    fn default() -> Self {
        Self {
            a_min: -8.0,
            a_max: 5.0,
            j_min: -15.0,
            j_max: 15.0,
            jsi_window: 1.0,
            jsi_max_inversions: 1,
        }
    }
}

impl KinematicLimits {
    pub fn validate(&self) -> Result<()> {
        if !(self.a_min < 0.0 && self.a_max > 0.0) {
            return Err(Error::Config("limits: need a_min < 0 < a_max".into()));
        }
        if !(self.j_max > 0.0) || self.j_min != -self.j_max {
            return Err(Error::Config("limits: need j_min = -j_max < 0".into()));
        }
        if !(self.jsi_window > 0.0) {
            return Err(Error::Config("limits: jsi_window must be > 0".into()));
        }
        Ok(())
    }
}

/// Which derivative chain produced `a` and `j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Source {
    /// Position differentiated two and three times.
    #[serde(rename = "x-based")]
    XBased,
    /// Speed differentiated once and twice.
    #[serde(rename = "v-based")]
    VBased,
    /// Acceleration given directly; jerk is its derivative.
    #[serde(rename = "accel-based")]
    AccelBased,
}

impl Source {
    pub fn label(self) -> &'static str {
        match self {
            Source::XBased => "x-based",
            Source::VBased => "v-based",
            Source::AccelBased => "accel-based",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "x-based" => Some(Source::XBased),
            "v-based" => Some(Source::VBased),
            "accel-based" => Some(Source::AccelBased),
            _ => None,
        }
    }
}

/// Violation counts; fractions are `count / n_frames`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnomalyReport {
    pub source: Source,
    pub n_frames: usize,
    pub n_acc: usize,
    pub n_jerk: usize,
    pub n_jsi: usize,
}

fn frac(count: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        count as f64 / n as f64
    }
}

impl AnomalyReport {
    pub fn frac_acc_anomaly(&self) -> f64 {
        frac(self.n_acc, self.n_frames)
    }

    pub fn frac_jerk_anomaly(&self) -> f64 {
        frac(self.n_jerk, self.n_frames)
    }

    pub fn frac_jsi_anomaly(&self) -> f64 {
        frac(self.n_jsi, self.n_frames)
    }

    /// Frame-weighted aggregate; `None` for an empty input.
    pub fn combine<'a>(reports: impl IntoIterator<Item = &'a AnomalyReport>) -> Option<AnomalyReport> {
        let mut it = reports.into_iter();
        let first = *it.next()?;
        Some(it.fold(first, |acc, r| AnomalyReport {
            source: acc.source,
            n_frames: acc.n_frames + r.n_frames,
            n_acc: acc.n_acc + r.n_acc,
            n_jerk: acc.n_jerk + r.n_jerk,
            n_jsi: acc.n_jsi + r.n_jsi,
        }))
    }
}

/// Jerk magnitudes at or below this count as zero, m/s^3; keeps
/// differentiation round-off from registering as sign changes.
pub const JERK_ZERO_BAND: f64 = 1e-6;

/// Frame `i` is flagged when more than `max_inversions` strict sign changes
/// of jerk occur within `window / 2` of `t_i`. An inversion is dated at the
/// first sample showing the new sign; zero samples keep the previous sign.
pub fn jsi_flags(jerk: &TimeSeries, window: f64, max_inversions: usize) -> Vec<bool> {
    let t = jerk.t();
    let mut events = Vec::new();
    let mut state = 0i8;
    for (i, &j) in jerk.values().iter().enumerate() {
        let s = if j > JERK_ZERO_BAND {
            1
        } else if j < -JERK_ZERO_BAND {
            -1
        } else {
            0
        };
        if s != 0 {
            if state != 0 && s != state {
                events.push(t[i]);
            }
            state = s;
        }
    }
    let half = window / 2.0 - 1e-9;
    let (mut lo, mut hi) = (0, 0);
    t.iter()
        .map(|&ti| {
            while lo < events.len() && events[lo] <= ti - half {
                lo += 1;
            }
            while hi < events.len() && events[hi] < ti + half {
                hi += 1;
            }
            hi.saturating_sub(lo) > max_inversions
        })
        .collect()
}

/// Counts violations given acceleration and jerk on a shared grid.
pub fn anomalies_from(
    a: &TimeSeries,
    j: &TimeSeries,
    source: Source,
    limits: &KinematicLimits,
) -> Result<AnomalyReport> {
    if !a.same_grid(j) {
        return Err(Error::invalid("acceleration and jerk are on different grids"));
    }
    let n_acc = a
        .values()
        .iter()
        .filter(|&&v| v < limits.a_min || v > limits.a_max)
        .count();
    let n_jerk = j
        .values()
        .iter()
        .filter(|&&v| v < limits.j_min || v > limits.j_max)
        .count();
    let n_jsi = jsi_flags(j, limits.jsi_window, limits.jsi_max_inversions)
        .into_iter()
        .filter(|&f| f)
        .count();
    Ok(AnomalyReport {
        source,
        n_frames: a.len(),
        n_acc,
        n_jerk,
        n_jsi,
    })
}

/// `traj` holds positions for [`Source::XBased`], speeds for
/// [`Source::VBased`] and accelerations for [`Source::AccelBased`].
pub fn kinematic_anomalies(traj: &TimeSeries, source: Source, limits: &KinematicLimits) -> Result<AnomalyReport> {
    if traj.len() < 4 {
        return Err(Error::invalid(format!(
            "anomaly assessment needs at least 4 samples, got {}",
            traj.len()
        )));
    }
    let a = match source {
        Source::XBased => trajkit::finite_diff(&trajkit::finite_diff(traj)?)?,
        Source::VBased => trajkit::finite_diff(traj)?,
        Source::AccelBased => traj.clone(),
    };
    let j = trajkit::finite_diff(&a)?;
    anomalies_from(&a, &j, source, limits)
}

/// Speed below which a given sample counts as a reported zero.
pub const ZERO_SPEED: f64 = 1e-6;
/// Position-derived speed above which a reported zero is an artifact.
pub const MOVING_SPEED: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SpeedConsistency {
    pub rmse: f64,
    pub artifacts: Vec<f64>,
}

/// Compares reported speed with the position derivative and lists the
/// reported zeros that contradict clear motion.
pub fn speed_consistency(t: &[f64], x: &[f64], v: &[Option<f64>]) -> Result<SpeedConsistency> {
    if v.len() != t.len() || x.len() != t.len() {
        return Err(Error::invalid("speed consistency: series lengths differ"));
    }
    let given: Vec<f64> = v
        .iter()
        .enumerate()
        .map(|(i, s)| s.ok_or_else(|| Error::invalid(format!("speed missing at t = {}", t[i]))))
        .collect::<Result<_>>()?;
    let derived = trajkit::derivative(t, x)?;
    let rmse = trajkit::rmse_slices(&given, &derived)?;
    let artifacts = t
        .iter()
        .zip(given.iter().zip(&derived))
        .filter(|(_, (g, d))| g.abs() < ZERO_SPEED && d.abs() > MOVING_SPEED)
        .map(|(t, _)| *t)
        .collect();
    Ok(SpeedConsistency { rmse, artifacts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64 * 0.1).collect()
    }

    #[test]
    fn cruise_is_clean() {
        let x = TimeSeries::from_fn(grid(100), |t| 12.0 * t + 3.0).unwrap();
        let r = kinematic_anomalies(&x, Source::XBased, &KinematicLimits::default()).unwrap();
        assert_eq!((r.n_acc, r.n_jerk, r.n_jsi), (0, 0, 0));
        assert_eq!(r.n_frames, 100);
    }

    #[test]
    fn steep_ramp_flags_acceleration() {
        let v = TimeSeries::from_fn(grid(50), |t| 6.0 * t).unwrap();
        let r = kinematic_anomalies(&v, Source::VBased, &KinematicLimits::default()).unwrap();
        assert_eq!(r.n_acc, 50);
    }

    #[test]
    fn too_short_rejected() {
        let v = TimeSeries::from_fn(grid(3), |t| t).unwrap();
        assert!(kinematic_anomalies(&v, Source::VBased, &KinematicLimits::default()).is_err());
    }

    #[test]
    fn jsi_constant_and_alternating() {
        let c = TimeSeries::from_fn(grid(50), |_| 1.0).unwrap();
        assert!(jsi_flags(&c, 1.0, 1).iter().all(|f| !f));
        let alt = TimeSeries::new(grid(50), (0..50).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect()).unwrap();
        let f = jsi_flags(&alt, 1.0, 1);
        assert!(f[5..45].iter().all(|&b| b));
    }

    #[test]
    fn jsi_half_hertz_sine_unflagged() {
        let s = TimeSeries::from_fn(grid(201), |t| (2.0 * std::f64::consts::PI * 0.5 * t).sin()).unwrap();
        assert!(jsi_flags(&s, 1.0, 1).iter().all(|f| !f));
    }

    #[test]
    fn jsi_zeros_are_transparent() {
        // +, 0, 0, + is not an inversion; +, 0, - is one
        let j = TimeSeries::new(grid(6), vec![1.0, 0.0, 0.0, 1.0, 0.0, -1.0]).unwrap();
        let f = jsi_flags(&j, 1.0, 0);
        assert!(!f[0] && f[1..].iter().all(|&b| b));
        let j = TimeSeries::new(grid(4), vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(jsi_flags(&j, 1.0, 0).iter().all(|&b| !b));
    }

    #[test]
    fn speed_consistency_identity_and_artifact() {
        let t = grid(50);
        let x: Vec<f64> = t.iter().map(|t| 10.0 * t).collect();
        let mut v: Vec<Option<f64>> = vec![Some(10.0); 50];
        let r = speed_consistency(&t, &x, &v).unwrap();
        assert!(r.rmse < 1e-9 && r.artifacts.is_empty());
        v[20] = Some(0.0);
        let r = speed_consistency(&t, &x, &v).unwrap();
        assert_eq!(r.artifacts, vec![t[20]]);
        v[3] = None;
        assert!(speed_consistency(&t, &x, &v).is_err());
    }

    #[test]
    fn true_stop_not_an_artifact() {
        let t = grid(30);
        let x = vec![5.0; 30];
        let v = vec![Some(0.0); 30];
        assert!(speed_consistency(&t, &x, &v).unwrap().artifacts.is_empty());
    }

    #[test]
    fn combine_is_frame_weighted() {
        let a = AnomalyReport {
            source: Source::VBased,
            n_frames: 100,
            n_acc: 1,
            n_jerk: 4,
            n_jsi: 10,
        };
        let b = AnomalyReport {
            source: Source::VBased,
            n_frames: 300,
            n_acc: 3,
            n_jerk: 0,
            n_jsi: 30,
        };
        let c = AnomalyReport::combine([&a, &b]).unwrap();
        let w = |fa: f64, fb: f64| (fa * 100.0 + fb * 300.0) / 400.0;
        assert!((c.frac_acc_anomaly() - w(a.frac_acc_anomaly(), b.frac_acc_anomaly())).abs() < 1e-15);
        assert!((c.frac_jsi_anomaly() - w(a.frac_jsi_anomaly(), b.frac_jsi_anomaly())).abs() < 1e-15);
        assert!(AnomalyReport::combine(std::iter::empty()).is_none());
    }

    proptest! {
        #[test]
        fn jsi_scale_invariant(
            vals in prop::collection::vec(prop_oneof![-5.0f64..-1e-3, Just(0.0), 1e-3f64..5.0], 10..120),
            k in 0.01f64..100.0,
        ) {
            let j = TimeSeries::new(grid(vals.len()), vals.clone()).unwrap();
            let js = j.with_values(vals.iter().map(|v| v * k).collect()).unwrap();
            prop_assert_eq!(jsi_flags(&j, 1.0, 1), jsi_flags(&js, 1.0, 1));
        }

        #[test]
        fn fractions_in_unit_interval(vals in prop::collection::vec(-50.0f64..50.0, 4..200)) {
            let s = TimeSeries::new(grid(vals.len()), vals).unwrap();
            for src in [Source::XBased, Source::VBased, Source::AccelBased] {
                let r = kinematic_anomalies(&s, src, &KinematicLimits::default()).unwrap();
                for f in [r.frac_acc_anomaly(), r.frac_jerk_anomaly(), r.frac_jsi_anomaly()] {
                    prop_assert!((0.0..=1.0).contains(&f));
                }
            }
        }

        #[test]
        fn bounded_cubic_is_clean(c1 in -20.0f64..20.0, c2 in -2.5f64..2.5, c3 in -0.4f64..0.4) {
            // |x''| <= 4.8 and |x'''| <= 15 on [0, 2]
            let c2 = c2.clamp(-2.4 + 6.0 * c3.abs(), 2.4 - 6.0 * c3.abs());
            let x = TimeSeries::from_fn(grid(21), |t| c1 * t + c2 * t * t + c3 * t * t * t).unwrap();
            let r = kinematic_anomalies(&x, Source::XBased, &KinematicLimits::default()).unwrap();
            prop_assert_eq!((r.n_acc, r.n_jerk), (0, 0));
        }
    }
}
