//! Newell time-gap calibration and car-following regime labelling.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::enhance::EnhancedPair;
use crate::error::{Error, Result};
use crate::trajkit::TimeSeries;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegimeConfig {
    pub tau_min: f64,
    pub tau_max: f64,
    pub tau_step: f64,
    /// Speeds below this are standstill, m/s.
    pub v_stop: f64,
    pub min_stop_duration: f64,
    /// Acceleration magnitude separating constant speed from (de)acceleration.
    pub a_th: f64,
    pub min_section_duration: f64,
    /// `tau* = mean + k * std` of the fitted time gaps.
    pub threshold_k: f64,
    /// Fits required before a threshold is derived.
    pub min_fits: usize,
}

impl Default for RegimeConfig {
    fn default() -> Self {
        Self {
            tau_min: 0.1,
            tau_max: 5.0,
            tau_step: 0.05,
            v_stop: 0.1,
            min_stop_duration: 0.5,
            a_th: 0.1,
            min_section_duration: 1.0,
            threshold_k: 2.0,
            min_fits: 30,
        }
    }
}

impl RegimeConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            self.tau_min,
            self.tau_step,
            self.v_stop,
            self.min_stop_duration,
            self.a_th,
            self.min_section_duration,
            self.threshold_k,
        ];
        if pos.iter().any(|v| !(*v > 0.0)) || self.tau_max < self.tau_min || self.min_fits == 0 {
            return Err(Error::Config(format!("invalid regime settings: {self:?}")));
        }
        Ok(())
    }

    pub fn tau_grid(&self) -> Vec<f64> {
        let n = ((self.tau_max - self.tau_min) / self.tau_step + 1e-9).floor() as usize;
        (0..=n).map(|k| self.tau_min + k as f64 * self.tau_step).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewellFit {
    pub tau: f64,
    pub delta: f64,
    pub rmse_fit: f64,
    /// The optimum sits on the first or last grid point.
    pub at_boundary: bool,
}

fn interp(t: &[f64], y: &[f64], at: f64) -> f64 {
    let k = t.partition_point(|&ti| ti <= at).clamp(1, t.len() - 1);
    let (t0, t1) = (t[k - 1], t[k]);
    y[k - 1] + (y[k] - y[k - 1]) * (at - t0) / (t1 - t0)
}

/// Grid search over `tau` with the least-squares `delta` for each candidate,
/// fitting `x_f(t) = x_l(t - tau) - delta`. Every candidate is scored on the
/// same support `t >= t_0 + tau_max`; ties keep the smaller `tau`.
pub fn calibrate_newell(t: &[f64], x_lead: &[f64], x_fol: &[f64], config: &RegimeConfig) -> Result<NewellFit> {
    if t.len() != x_lead.len() || t.len() != x_fol.len() || t.len() < 2 {
        return Err(Error::invalid("newell fit: series lengths differ or too short"));
    }
    let grid = config.tau_grid();
    let tau_top = grid[grid.len() - 1];
    let span = t[t.len() - 1] - t[0];
    if span <= tau_top + 1.0 {
        return Err(Error::InsufficientData(format!(
            "pair spans {span:.2} s, need more than {:.2} s",
            tau_top + 1.0
        )));
    }
    let start = t.partition_point(|&ti| ti < t[0] + tau_top - 1e-9);
    let support = &t[start..];
    let fol = &x_fol[start..];
    let m = support.len() as f64;

    let mut best: Option<(usize, f64, f64)> = None;
    for (k, &tau) in grid.iter().enumerate() {
        let shifted: Vec<f64> = support.iter().map(|&ti| interp(t, x_lead, ti - tau)).collect();
        let delta = shifted.iter().zip(fol).map(|(l, f)| l - f).sum::<f64>() / m;
        let sse: f64 = shifted.iter().zip(fol).map(|(l, f)| (l - delta - f).powi(2)).sum();
        let rmse = (sse / m).sqrt();
        if best.is_none_or(|(_, r, _)| rmse < r - 1e-9) {
            best = Some((k, rmse, delta));
        }
    }
    let (k, rmse, delta) = best.expect("tau grid is non-empty");
    Ok(NewellFit {
        tau: grid[k],
        delta,
        rmse_fit: rmse,
        at_boundary: k == 0 || k == grid.len() - 1,
    })
}

pub fn calibrate_pair(pair: &EnhancedPair, config: &RegimeConfig) -> Result<NewellFit> {
    calibrate_newell(&pair.t, &pair.lead.x, &pair.fol.x, config)
}

/// `mean + k * std` (sample standard deviation) of the fitted time gaps.
pub fn fleet_gap_threshold(taus: &[f64], k: f64, min_fits: usize) -> Result<f64> {
    if taus.len() < min_fits.max(2) {
        return Err(Error::InsufficientData(format!(
            "gap threshold needs at least {} fits, got {}",
            min_fits.max(2),
            taus.len()
        )));
    }
    let mut sorted = taus.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let var = sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(mean + k * var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Motion {
    Stop,
    Accelerating,
    Decelerating,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Section {
    /// First frame index.
    pub start: usize,
    /// One past the last frame index.
    pub end: usize,
    pub motion: Motion,
}

impl Section {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

fn runs<T: Copy + PartialEq>(labels: &[T]) -> Vec<(usize, usize, T)> {
    let mut out: Vec<(usize, usize, T)> = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        match out.last_mut() {
            Some(r) if r.2 == l => r.1 = i + 1,
            _ => out.push((i, i + 1, l)),
        }
    }
    out
}

/// Splits the follower profile into stop / accelerating / decelerating /
/// constant sections. Durations are `frames * dt` on the uniform grid.
pub fn segment_speed_profile(v: &TimeSeries, a: &TimeSeries, config: &RegimeConfig) -> Result<Vec<Section>> {
    if !v.same_grid(a) {
        return Err(Error::invalid("speed and acceleration are on different grids"));
    }
    let n = v.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let dt = if n > 1 {
        (v.t()[n - 1] - v.t()[0]) / (n - 1) as f64
    } else {
        0.0
    };
    let frames = |d: f64| if dt > 0.0 { (d / dt - 1e-9).ceil() as usize } else { 1 };
    let min_stop = frames(config.min_stop_duration);
    let min_section = frames(config.min_section_duration);

    let stopped: Vec<bool> = v.values().iter().map(|&s| s < config.v_stop).collect();
    let mut motion: Vec<Motion> = a
        .values()
        .iter()
        .map(|&acc| {
            if acc > config.a_th {
                Motion::Accelerating
            } else if acc < -config.a_th {
                Motion::Decelerating
            } else {
                Motion::Constant
            }
        })
        .collect();
    for (s, e, is_stop) in runs(&stopped) {
        if is_stop && e - s >= min_stop {
            motion[s..e].fill(Motion::Stop);
        }
    }

    let mut sections: Vec<Section> = runs(&motion)
        .into_iter()
        .map(|(start, end, motion)| Section { start, end, motion })
        .collect();
    // absorb short moving sections, shortest first
    loop {
        let victim = sections
            .iter()
            .enumerate()
            .filter(|(_, s)| s.motion != Motion::Stop && s.len() < min_section)
            .filter(|(i, _)| {
                let moving = |j: Option<usize>| {
                    j.and_then(|j| sections.get(j))
                        .is_some_and(|s| s.motion != Motion::Stop)
                };
                moving(i.checked_sub(1)) || moving(Some(i + 1))
            })
            .min_by_key(|(i, s)| (s.len(), *i))
            .map(|(i, _)| i);
        let Some(i) = victim else { break };
        let len_of = |j: usize| sections.get(j).filter(|s| s.motion != Motion::Stop).map(Section::len);
        let prev = i.checked_sub(1).and_then(len_of);
        let next = len_of(i + 1);
        let target = match (prev, next) {
            (Some(p), Some(n)) if n > p => i + 1,
            (Some(_), _) => i - 1,
            (None, _) => i + 1,
        };
        let m = sections[target].motion;
        sections[i].motion = m;
        let merged: Vec<Section> = runs(
            &sections
                .iter()
                .flat_map(|s| std::iter::repeat_n(s.motion, s.len()))
                .collect::<Vec<_>>(),
        )
        .into_iter()
        .map(|(start, end, motion)| Section { start, end, motion })
        .collect();
        sections = merged;
    }
    Ok(sections)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Regime {
    Fa,
    Fd,
    C,
    A,
    D,
    F,
    S,
}

impl Regime {
    pub const ALL: [Regime; 7] = [
        Regime::Fa,
        Regime::Fd,
        Regime::C,
        Regime::A,
        Regime::D,
        Regime::F,
        Regime::S,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Regime::Fa => "Fa",
            Regime::Fd => "Fd",
            Regime::C => "C",
            Regime::A => "A",
            Regime::D => "D",
            Regime::F => "F",
            Regime::S => "S",
        }
    }

    pub fn parse(s: &str) -> Option<Regime> {
        Regime::ALL.into_iter().find(|r| r.code() == s)
    }

    fn from_parts(motion: Motion, free: bool) -> Regime {
        match (motion, free) {
            (Motion::Stop, _) => Regime::S,
            (Motion::Accelerating, true) => Regime::Fa,
            (Motion::Decelerating, true) => Regime::Fd,
            (Motion::Constant, true) => Regime::C,
            (Motion::Accelerating, false) => Regime::A,
            (Motion::Decelerating, false) => Regime::D,
            (Motion::Constant, false) => Regime::F,
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// Lane-aligned series needed for labelling.
#[derive(Debug, Clone, Copy)]
pub struct RegimeInput<'a> {
    pub t: &'a [f64],
    pub x_lead: &'a [f64],
    pub length_lead: f64,
    pub x_fol: &'a [f64],
    pub v_fol: &'a [f64],
    pub a_fol: &'a [f64],
}

impl<'a> From<&'a EnhancedPair> for RegimeInput<'a> {
    fn from(p: &'a EnhancedPair) -> Self {
        RegimeInput {
            t: &p.t,
            x_lead: &p.lead.x,
            length_lead: p.lead.length,
            x_fol: &p.fol.x,
            v_fol: &p.fol.v,
            a_fol: &p.fol.a,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeSequence {
    pub t: Vec<f64>,
    pub labels: Vec<Regime>,
    /// `(start, end_exclusive, regime)` per section.
    pub sections: Vec<(usize, usize, Regime)>,
}

/// Trapezoid weights: each frame owns half of each adjacent interval, so the
/// weights sum to the covered span.
pub fn frame_weights(t: &[f64]) -> Vec<f64> {
    let n = t.len();
    (0..n)
        .map(|i| {
            let left = if i > 0 { t[i] - t[i - 1] } else { 0.0 };
            let right = if i + 1 < n { t[i + 1] - t[i] } else { 0.0 };
            (left + right) / 2.0
        })
        .collect()
}

impl RegimeSequence {
    pub fn durations(&self) -> BTreeMap<Regime, f64> {
        let mut out: BTreeMap<Regime, f64> = Regime::ALL.iter().map(|r| (*r, 0.0)).collect();
        for (w, l) in frame_weights(&self.t).into_iter().zip(&self.labels) {
            *out.get_mut(l).expect("all regimes present") += w;
        }
        out
    }

    pub fn present(&self) -> std::collections::BTreeSet<Regime> {
        self.labels.iter().copied().collect()
    }
}

/// A section is free driving when its mean time gap exceeds `tau_star`.
/// Frames below `v_stop` do not contribute; a section with no usable frame
/// counts as following.
pub fn label_regimes(
    sections: &[Section],
    input: &RegimeInput<'_>,
    tau_star: f64,
    config: &RegimeConfig,
) -> Result<RegimeSequence> {
    let n = input.t.len();
    let lens = [
        input.x_lead.len(),
        input.x_fol.len(),
        input.v_fol.len(),
        input.a_fol.len(),
    ];
    if lens.iter().any(|&l| l != n) {
        return Err(Error::invalid("regime input series lengths differ"));
    }
    let mut covered = 0;
    let mut labels = Vec::with_capacity(n);
    let mut out_sections = Vec::with_capacity(sections.len());
    for s in sections {
        if s.start != covered || s.end > n || s.end <= s.start {
            return Err(Error::invalid("sections do not partition the series"));
        }
        covered = s.end;
        let regime = if s.motion == Motion::Stop {
            Regime::S
        } else {
            let gaps: Vec<f64> = (s.start..s.end)
                .filter(|&i| input.v_fol[i] >= config.v_stop)
                .map(|i| (input.x_lead[i] - input.length_lead - input.x_fol[i]) / input.v_fol[i])
                .collect();
            let free = !gaps.is_empty() && gaps.iter().sum::<f64>() / gaps.len() as f64 > tau_star;
            Regime::from_parts(s.motion, free)
        };
        labels.extend(std::iter::repeat_n(regime, s.len()));
        out_sections.push((s.start, s.end, regime));
    }
    if covered != n {
        return Err(Error::invalid("sections do not cover the series"));
    }
    Ok(RegimeSequence {
        t: input.t.to_vec(),
        labels,
        sections: out_sections,
    })
}

/// Duration share of every regime across a dataset.
pub fn regime_time_proportions<'a>(
    seqs: impl IntoIterator<Item = &'a RegimeSequence>,
) -> Result<BTreeMap<Regime, f64>> {
    let mut total: BTreeMap<Regime, f64> = Regime::ALL.iter().map(|r| (*r, 0.0)).collect();
    let mut any = false;
    for s in seqs {
        any = true;
        for (r, d) in s.durations() {
            *total.get_mut(&r).expect("all regimes present") += d;
        }
    }
    let sum: f64 = total.values().sum();
    if !any || !(sum > 0.0) {
        return Err(Error::InsufficientData("no labelled duration to apportion".into()));
    }
    Ok(total.into_iter().map(|(r, d)| (r, d / sum)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AdfClass {
    /// Contains A, D and F plus this many other regimes.
    Adf(usize),
    Others,
}

impl fmt::Display for AdfClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AdfClass::Adf(n) => write!(f, "ADF+{n}"),
            AdfClass::Others => f.write_str("others"),
        }
    }
}

pub fn classify_regimes(present: &std::collections::BTreeSet<Regime>) -> AdfClass {
    if [Regime::A, Regime::D, Regime::F].iter().all(|r| present.contains(r)) {
        AdfClass::Adf(present.len() - 3)
    } else {
        AdfClass::Others
    }
}

pub fn classify_adf(seq: &RegimeSequence) -> AdfClass {
    classify_regimes(&seq.present())
}

/// Counts per `width`-second bin, keyed by bin index (`floor(tau / width)`).
pub fn tau_histogram(taus: &[f64], width: f64) -> BTreeMap<i64, usize> {
    let mut out = BTreeMap::new();
    for &tau in taus {
        *out.entry((tau / width + 1e-9).floor() as i64).or_insert(0) += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn grid(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64 * 0.1).collect()
    }

    fn leader_x(t: f64) -> f64 {
        // speed oscillates between 4 and 12 m/s
        8.0 * t - 20.0 * (0.2 * t).cos()
    }

    #[test]
    fn exact_shift_recovered() {
        let t = grid(400);
        let xl: Vec<f64> = t.iter().map(|&t| leader_x(t)).collect();
        let xf: Vec<f64> = t.iter().map(|&t| leader_x(t - 1.2) - 8.0).collect();
        let fit = calibrate_newell(&t, &xl, &xf, &RegimeConfig::default()).unwrap();
        assert!((fit.tau - 1.2).abs() < 0.05 + 1e-9);
        assert!((fit.delta - 8.0).abs() < 0.2);
        assert!(!fit.at_boundary);
    }

    #[test]
    fn identical_trajectories_pin_to_grid_minimum() {
        let t = grid(300);
        let xl: Vec<f64> = t.iter().map(|&t| leader_x(t)).collect();
        let fit = calibrate_newell(&t, &xl, &xl, &RegimeConfig::default()).unwrap();
        assert!((fit.tau - 0.1).abs() < 1e-12);
        assert!(fit.at_boundary);
        assert!(fit.rmse_fit > 0.0);
    }

    #[test]
    fn steady_cruise_is_degenerate() {
        let t = grid(300);
        let xl: Vec<f64> = t.iter().map(|&t| 10.0 * t).collect();
        let xf: Vec<f64> = t.iter().map(|&t| 10.0 * t - 25.0).collect();
        let fit = calibrate_newell(&t, &xl, &xf, &RegimeConfig::default()).unwrap();
        assert!((fit.tau - 0.1).abs() < 1e-12);
        assert!((fit.delta - (25.0 - 10.0 * 0.1)).abs() < 1e-9);
    }

    #[test]
    fn short_pair_rejected() {
        let t = grid(50);
        let x = vec![0.0; 50];
        assert!(matches!(
            calibrate_newell(&t, &x, &x, &RegimeConfig::default()),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn threshold_rules() {
        assert_eq!(fleet_gap_threshold(&[1.5; 40], 2.0, 30).unwrap(), 1.5);
        assert!(fleet_gap_threshold(&[1.5; 29], 2.0, 30).is_err());
        let t = [1.0, 2.0, 3.0];
        // mean 2, sample std 1
        assert!((fleet_gap_threshold(&t, 2.0, 3).unwrap() - 4.0).abs() < 1e-12);
    }

    fn profile(script: &[(Motion, f64)]) -> (TimeSeries, TimeSeries, Vec<(f64, Motion)>) {
        let mut v = Vec::new();
        let mut a = Vec::new();
        let mut speed: f64 = 0.0;
        let mut marks = Vec::new();
        let mut t = 0.0;
        for &(m, d) in script {
            marks.push((t, m));
            let steps = (d * 10.0).round() as usize;
            for _ in 0..steps {
                let acc = match m {
                    Motion::Stop => 0.0,
                    Motion::Accelerating => 1.5,
                    Motion::Decelerating => -1.5,
                    Motion::Constant => 0.0,
                };
                if m == Motion::Stop {
                    speed = 0.0;
                }
                v.push(speed);
                a.push(acc);
                speed = (speed + acc * 0.1).max(0.0);
                t += 0.1;
            }
        }
        let g = grid(v.len());
        (
            TimeSeries::new(g.clone(), v).unwrap(),
            TimeSeries::new(g, a).unwrap(),
            marks,
        )
    }

    #[test]
    fn scripted_profile_segments() {
        let (v, a, marks) = profile(&[
            (Motion::Stop, 5.0),
            (Motion::Accelerating, 5.0),
            (Motion::Constant, 5.0),
            (Motion::Decelerating, 5.0),
        ]);
        let s = segment_speed_profile(&v, &a, &RegimeConfig::default()).unwrap();
        assert_eq!(s.len(), 4);
        for (sec, (t0, m)) in s.iter().zip(marks) {
            assert_eq!(sec.motion, m);
            assert!((v.t()[sec.start] - t0).abs() <= 0.3);
        }
    }

    #[test]
    fn cruise_is_one_section() {
        let t = grid(100);
        let v = TimeSeries::from_fn(t.clone(), |_| 10.0).unwrap();
        let a = TimeSeries::from_fn(t, |_| 0.0).unwrap();
        let s = segment_speed_profile(&v, &a, &RegimeConfig::default()).unwrap();
        assert_eq!(
            s,
            vec![Section {
                start: 0,
                end: 100,
                motion: Motion::Constant
            }]
        );
    }

    #[test]
    fn brief_dips_are_not_stops() {
        let t = grid(100);
        let v = TimeSeries::from_fn(t.clone(), |t| {
            if (3.0..3.3).contains(&t) || (6.0..6.3).contains(&t) {
                0.09
            } else {
                0.11
            }
        })
        .unwrap();
        let a = TimeSeries::from_fn(t, |_| 0.0).unwrap();
        let s = segment_speed_profile(&v, &a, &RegimeConfig::default()).unwrap();
        assert!(s.iter().all(|s| s.motion != Motion::Stop));
    }

    #[test]
    fn short_section_joins_longer_neighbour() {
        let t = grid(60);
        // accel 2 s, decel 0.5 s, constant 3.5 s
        let a = TimeSeries::from_fn(t.clone(), |t| {
            if t < 2.0 - 1e-9 {
                1.0
            } else if t < 2.5 - 1e-9 {
                -1.0
            } else {
                0.0
            }
        })
        .unwrap();
        let v = TimeSeries::from_fn(t, |_| 5.0).unwrap();
        let s = segment_speed_profile(&v, &a, &RegimeConfig::default()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!((s[1].start, s[1].motion), (20, Motion::Constant));
    }

    fn input<'a>(t: &'a [f64], xl: &'a [f64], xf: &'a [f64], v: &'a [f64], a: &'a [f64]) -> RegimeInput<'a> {
        RegimeInput {
            t,
            x_lead: xl,
            length_lead: 4.0,
            x_fol: xf,
            v_fol: v,
            a_fol: a,
        }
    }

    #[test]
    fn labels_follow_gap_and_motion() {
        let t = grid(30);
        let v = vec![10.0; 30];
        let a = vec![-1.0; 30];
        let xf = vec![0.0; 30];
        let close = vec![14.0; 30]; // 1 s headway
        let sec = [Section {
            start: 0,
            end: 30,
            motion: Motion::Decelerating,
        }];
        let cfg = RegimeConfig::default();
        let seq = label_regimes(&sec, &input(&t, &close, &xf, &v, &a), 2.0, &cfg).unwrap();
        assert!(seq.labels.iter().all(|l| *l == Regime::D));
        let far = vec![84.0; 30];
        let sec = [Section {
            start: 0,
            end: 30,
            motion: Motion::Accelerating,
        }];
        let seq = label_regimes(&sec, &input(&t, &far, &xf, &v, &a), 2.0, &cfg).unwrap();
        assert!(seq.labels.iter().all(|l| *l == Regime::Fa));
        let d = seq.durations();
        assert!((d.values().sum::<f64>() - 2.9).abs() < 1e-12);
    }

    #[test]
    fn proportions_weighting() {
        let mk = |r: Regime| RegimeSequence {
            t: grid(11),
            labels: vec![r; 11],
            sections: vec![(0, 11, r)],
        };
        let p = regime_time_proportions([&mk(Regime::F)]).unwrap();
        assert_eq!(p[&Regime::F], 1.0);
        let p = regime_time_proportions([&mk(Regime::F), &mk(Regime::S)]).unwrap();
        assert!((p[&Regime::F] - 0.5).abs() < 1e-12 && (p[&Regime::S] - 0.5).abs() < 1e-12);
        assert!((p.values().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(regime_time_proportions(std::iter::empty()).is_err());
    }

    #[test]
    fn adf_classes() {
        use Regime::*;
        let set = |v: &[Regime]| v.iter().copied().collect::<BTreeSet<_>>();
        assert_eq!(classify_regimes(&set(&[A, D, F])), AdfClass::Adf(0));
        assert_eq!(classify_regimes(&set(&[A, D, F, S, C])), AdfClass::Adf(2));
        assert_eq!(classify_regimes(&set(&[A, F, S])), AdfClass::Others);
        assert_eq!(AdfClass::Adf(2).to_string(), "ADF+2");
    }

    #[test]
    fn histogram_bins() {
        let h = tau_histogram(&[0.1, 0.15, 0.2, 1.25, 1.3], 0.1);
        assert_eq!(h[&1], 2);
        assert_eq!(h[&2], 1);
        assert_eq!(h[&12], 1);
        assert_eq!(h[&13], 1);
    }

    proptest! {
        #[test]
        fn newell_translation_invariant(dt in -50.0f64..50.0, dx in -500.0f64..500.0, tau in 0.6f64..2.5) {
            let t = grid(300);
            let xl: Vec<f64> = t.iter().map(|&t| leader_x(t)).collect();
            let xf: Vec<f64> = t.iter().map(|&t| leader_x(t - tau) - 6.0).collect();
            let base = calibrate_newell(&t, &xl, &xf, &RegimeConfig::default()).unwrap();
            let ts: Vec<f64> = t.iter().map(|t| t + dt).collect();
            let xls: Vec<f64> = xl.iter().map(|x| x + dx).collect();
            let xfs: Vec<f64> = xf.iter().map(|x| x + dx).collect();
            let moved = calibrate_newell(&ts, &xls, &xfs, &RegimeConfig::default()).unwrap();
            prop_assert_eq!(base.tau, moved.tau);
            prop_assert!((base.delta - moved.delta).abs() < 1e-6);
        }

        #[test]
        fn adf_monotone(mask in 0u8..128, extra in 0usize..7) {
            let base: BTreeSet<Regime> = Regime::ALL.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, r)| *r).collect();
            let mut bigger = base.clone();
            bigger.insert(Regime::ALL[extra]);
            if classify_regimes(&base) != AdfClass::Others {
                prop_assert!(classify_regimes(&bigger) != AdfClass::Others);
            }
        }

        #[test]
        fn higher_threshold_never_fewer_following(gaps in prop::collection::vec(5.0f64..100.0, 1..6), t1 in 0.5f64..6.0, bump in 0.0f64..3.0) {
            let n = gaps.len() * 10;
            let t = grid(n);
            let xl: Vec<f64> = (0..n).map(|i| gaps[i / 10] + 4.0).collect();
            let xf = vec![0.0; n];
            let v = vec![10.0; n];
            let a = vec![0.0; n];
            let sections: Vec<Section> = (0..gaps.len()).map(|k| Section { start: k * 10, end: k * 10 + 10, motion: Motion::Constant }).collect();
            let cfg = RegimeConfig::default();
            let inp = input(&t, &xl, &xf, &v, &a);
            let count = |tau: f64| label_regimes(&sections, &inp, tau, &cfg).unwrap().sections.iter().filter(|s| s.2 == Regime::F).count();
            prop_assert!(count(t1 + bump) >= count(t1));
        }

        #[test]
        fn labels_partition_and_durations_sum(accs in prop::collection::vec(-1.0f64..1.0, 20..200)) {
            let n = accs.len();
            let g = grid(n);
            let v = TimeSeries::new(g.clone(), accs.iter().map(|a| 5.0 + a).collect()).unwrap();
            let a = TimeSeries::new(g.clone(), accs.clone()).unwrap();
            let cfg = RegimeConfig::default();
            let secs = segment_speed_profile(&v, &a, &cfg).unwrap();
            let xl = vec![30.0; n];
            let xf = vec![0.0; n];
            let seq = label_regimes(&secs, &input(&g, &xl, &xf, v.values(), a.values()), 2.0, &cfg).unwrap();
            prop_assert_eq!(seq.labels.len(), n);
            let total: f64 = seq.durations().values().sum();
            prop_assert!((total - (g[n - 1] - g[0])).abs() < 1e-9);
        }
    }
}
