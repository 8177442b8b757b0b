//! Car-following pair selection.
//!
//! Screening walks a coarse stride grid (1 s by default) and keeps stretches
//! where two same-lane vehicles satisfy the Group-1 rules long enough.
//! Verification then re-checks each stretch frame by frame (Group-2 rules),
//! trims violating boundary frames when the remainder is still long enough,
//! and converts the survivors into lane-aligned longitudinal coordinates.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{AgentFrame, Track};
use crate::trajkit;

/// Identifiers of the twelve selection rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RuleId {
    R1_1,
    R1_2,
    R1_3,
    R1_4,
    R1_5,
    R1_6,
    R1_7,
    R2_1,
    R2_2,
    R2_3,
    R2_4,
    R2_5,
}

impl RuleId {
    pub const ALL: [RuleId; 12] = [
        RuleId::R1_1,
        RuleId::R1_2,
        RuleId::R1_3,
        RuleId::R1_4,
        RuleId::R1_5,
        RuleId::R1_6,
        RuleId::R1_7,
        RuleId::R2_1,
        RuleId::R2_2,
        RuleId::R2_3,
        RuleId::R2_4,
        RuleId::R2_5,
    ];

    pub fn code(self) -> &'static str {
        match self {
            RuleId::R1_1 => "1.1",
            RuleId::R1_2 => "1.2",
            RuleId::R1_3 => "1.3",
            RuleId::R1_4 => "1.4",
            RuleId::R1_5 => "1.5",
            RuleId::R1_6 => "1.6",
            RuleId::R1_7 => "1.7",
            RuleId::R2_1 => "2.1",
            RuleId::R2_2 => "2.2",
            RuleId::R2_3 => "2.3",
            RuleId::R2_4 => "2.4",
            RuleId::R2_5 => "2.5",
        }
    }

    fn bit(self) -> u16 {
        1 << (self as u16)
    }
}

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    /// Rule 1.1 (the AV counts as probability 1).
    pub prob_car_min: f64,
    /// Rule 1.2, metres along the lane.
    pub long_dist_max: f64,
    /// Rules 1.3 and 1.4, metres across the lane.
    pub lat_dist_max: f64,
    /// Rule 1.7, seconds.
    pub min_duration: f64,
    /// Rule 2.1, standard deviation of yaw in radians.
    pub yaw_dev_max: f64,
    /// Rule 2.2, radians.
    pub yaw_to_lane_max: f64,
    /// Rule 2.3, seconds.
    pub dt_max: f64,
    /// Rule 2.4, metres.
    pub step_dist_max: f64,
    /// Rule 2.5, m/s.
    pub mean_speed_min: f64,
    /// Screening stride in seconds, within [1, 5].
    pub screen_stride: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            prob_car_min: 0.95,
            long_dist_max: 85.0,
            lat_dist_max: 1.75,
            min_duration: 16.0,
            yaw_dev_max: 0.035,
            yaw_to_lane_max: 0.087,
            dt_max: 0.42,
            step_dist_max: 5.0,
            mean_speed_min: 1.0,
            screen_stride: 1.0,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("prob_car_min", self.prob_car_min),
            ("long_dist_max", self.long_dist_max),
            ("lat_dist_max", self.lat_dist_max),
            ("min_duration", self.min_duration),
            ("yaw_dev_max", self.yaw_dev_max),
            ("yaw_to_lane_max", self.yaw_to_lane_max),
            ("dt_max", self.dt_max),
            ("step_dist_max", self.step_dist_max),
            ("mean_speed_min", self.mean_speed_min),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("selection.{name} must be > 0, got {v}")));
            }
        }
        if !(1.0..=5.0).contains(&self.screen_stride) {
            return Err(Error::Config(format!(
                "selection.screen_stride must lie in [1, 5] s, got {}",
                self.screen_stride
            )));
        }
        Ok(())
    }

    /// Half-width of the window used to snap a track onto a stride point.
    fn snap_tolerance(&self) -> f64 {
        self.dt_max / 2.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub leader: String,
    pub follower: String,
    pub lane_id: String,
    pub t_start: f64,
    pub t_end: f64,
}

/// Why a vehicle pair produced nothing, with the time the rule first failed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairRejection {
    pub leader: String,
    pub follower: String,
    pub rule: RuleId,
    pub t: f64,
}

#[derive(Debug, Clone, Default)]
pub struct ScreenOutcome {
    pub candidates: Vec<Candidate>,
    /// One entry per same-lane vehicle pair that never formed a candidate.
    pub rejections: Vec<PairRejection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LeaderType {
    #[serde(rename = "AV")]
    Av,
    #[serde(rename = "HV")]
    Hv,
}

impl LeaderType {
    pub fn label(self) -> &'static str {
        match self {
            LeaderType::Av => "AV",
            LeaderType::Hv => "HV",
        }
    }

    /// Dataset name: H-A for AV leaders, H-H otherwise.
    pub fn dataset(self) -> &'static str {
        match self {
            LeaderType::Av => "H-A",
            LeaderType::Hv => "H-H",
        }
    }
}

/// A verified leader-follower episode in lane-aligned coordinates.
///
/// `x_lead[0] == 0`; the longitudinal axis points along increasing `lane_s`.
/// The follower is always human driven.
#[derive(Debug, Clone, PartialEq)]
pub struct CFPair {
    pub pair_id: String,
    pub leader_type: LeaderType,
    pub leader_track: String,
    pub follower_track: String,
    pub lane_id: String,
    pub time: Vec<f64>,
    pub x_lead: Vec<f64>,
    pub x_fol: Vec<f64>,
    pub v_lead: Vec<Option<f64>>,
    pub v_fol: Vec<Option<f64>>,
    pub yaw_lead: Vec<f64>,
    pub yaw_fol: Vec<f64>,
    pub length_lead: Vec<Option<f64>>,
    pub length_fol: Vec<Option<f64>>,
    pub width_lead: Vec<Option<f64>>,
    pub width_fol: Vec<Option<f64>>,
    /// Every Group-2 violation seen while verifying, including trimmed ones.
    pub rejection_log: Vec<(RuleId, f64)>,
}

impl CFPair {
    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn t_start(&self) -> f64 {
        self.time[0]
    }

    pub fn t_end(&self) -> f64 {
        self.time[self.time.len() - 1]
    }

    pub fn duration(&self) -> f64 {
        self.t_end() - self.t_start()
    }

    pub fn mean_gap(&self) -> f64 {
        let d: Vec<f64> = self.x_lead.iter().zip(&self.x_fol).map(|(l, f)| l - f).collect();
        trajkit::mean(&d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rejection {
    pub rule: RuleId,
    pub t: f64,
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut w = a.rem_euclid(two_pi);
    if w > std::f64::consts::PI {
        w -= two_pi;
    }
    w
}

struct Snapshot<'a> {
    track: usize,
    frame: &'a AgentFrame,
}

/// Failing Group-1 rules for `(leader, follower)` among the lane snapshot.
fn group1_mask(lane: &[Snapshot<'_>], li: usize, fi: usize, config: &SelectionConfig) -> u16 {
    let l = lane[li].frame;
    let f = lane[fi].frame;
    let mut mask = 0;
    if l.car_probability() <= config.prob_car_min || f.car_probability() <= config.prob_car_min {
        mask |= RuleId::R1_1.bit();
    }
    let ds = l.lane_s - f.lane_s;
    if !(ds > 0.0 && ds <= config.long_dist_max) {
        mask |= RuleId::R1_2.bit();
    }
    if (l.lane_d - f.lane_d).abs() >= config.lat_dist_max {
        mask |= RuleId::R1_3.bit();
    }
    let d_lo = l.lane_d.min(f.lane_d) - config.lat_dist_max;
    let d_hi = l.lane_d.max(f.lane_d) + config.lat_dist_max;
    let blocked = lane.iter().enumerate().any(|(k, other)| {
        k != li
            && k != fi
            && other.frame.lane_s > f.lane_s
            && other.frame.lane_s < l.lane_s
            && other.frame.lane_d > d_lo
            && other.frame.lane_d < d_hi
    });
    if blocked {
        mask |= RuleId::R1_4.bit();
    }
    if l.signal_segment_id != f.signal_segment_id {
        mask |= RuleId::R1_5.bit();
    }
    if !(l.lane_is_straight && f.lane_is_straight) {
        mask |= RuleId::R1_6.bit();
    }
    mask
}

fn rule_from_bit(index: usize) -> RuleId {
    RuleId::ALL[index]
}

/// Group-1 screening on the stride grid `k * screen_stride`.
pub fn screen_candidates(tracks: &[Track], config: &SelectionConfig) -> ScreenOutcome {
    if tracks.is_empty() {
        return ScreenOutcome::default();
    }
    let mut order: Vec<usize> = (0..tracks.len()).collect();
    order.sort_by(|&a, &b| tracks[a].agent_id.cmp(&tracks[b].agent_id));

    let stride = config.screen_stride;
    let tol = config.snap_tolerance();
    let t_min = tracks.iter().map(Track::start).fold(f64::INFINITY, f64::min);
    let t_max = tracks.iter().map(Track::end).fold(f64::NEG_INFINITY, f64::max);
    let k_min = ((t_min - tol) / stride).ceil() as i64;
    let k_max = ((t_max + tol) / stride).floor() as i64;

    // (stride index, leader, follower, failing-rule mask) per stride point
    let per_point: Vec<Vec<(i64, usize, usize, u16)>> = (k_min..=k_max)
        .into_par_iter()
        .map(|k| {
            let t = k as f64 * stride;
            let mut lanes: BTreeMap<&str, Vec<Snapshot<'_>>> = BTreeMap::new();
            for &ti in &order {
                let tr = &tracks[ti];
                if tr.start() - tol > t || tr.end() + tol < t {
                    continue;
                }
                if let Some(fi) = tr.frame_near(t, tol) {
                    let frame = &tr.frames[fi];
                    lanes
                        .entry(frame.lane_id.as_str())
                        .or_default()
                        .push(Snapshot { track: ti, frame });
                }
            }
            let mut out = Vec::new();
            for lane in lanes.values() {
                for li in 0..lane.len() {
                    for fi in 0..lane.len() {
                        if li == fi {
                            continue;
                        }
                        let ds = lane[li].frame.lane_s - lane[fi].frame.lane_s;
                        if !(ds > 0.0 && ds <= 2.0 * config.long_dist_max) {
                            continue;
                        }
                        let mask = group1_mask(lane, li, fi, config);
                        out.push((k, lane[li].track, lane[fi].track, mask));
                    }
                }
            }
            out
        })
        .collect();

    // (leader, follower) -> (stride index, rule mask, lane)
    type Points<'a> = BTreeMap<(&'a str, &'a str), Vec<(i64, u16, &'a str)>>;
    let mut by_pair: Points = BTreeMap::new();
    for (k, l, f, mask) in per_point.into_iter().flatten() {
        let lane = tracks[f]
            .frame_near(k as f64 * stride, tol)
            .map(|i| tracks[f].frames[i].lane_id.as_str())
            .unwrap_or("");
        by_pair
            .entry((tracks[l].agent_id.as_str(), tracks[f].agent_id.as_str()))
            .or_default()
            .push((k, mask, lane));
    }

    let mut outcome = ScreenOutcome::default();
    for ((leader, follower), mut points) in by_pair {
        points.sort_by_key(|p| p.0);
        let mut found = false;
        let mut run: Option<(i64, i64, &str)> = None;
        let flush = |run: Option<(i64, i64, &str)>, outcome: &mut ScreenOutcome| {
            if let Some((k0, k1, lane)) = run {
                if (k1 - k0) as f64 * stride > config.min_duration {
                    outcome.candidates.push(Candidate {
                        leader: leader.to_string(),
                        follower: follower.to_string(),
                        lane_id: lane.to_string(),
                        t_start: k0 as f64 * stride,
                        t_end: k1 as f64 * stride,
                    });
                    return true;
                }
            }
            false
        };
        for &(k, mask, lane) in &points {
            let extends = matches!(run, Some((_, k1, l)) if k == k1 + 1 && l == lane);
            if mask == 0 && extends {
                if let Some(r) = run.as_mut() {
                    r.1 = k;
                }
            } else {
                found |= flush(run.take(), &mut outcome);
                if mask == 0 {
                    run = Some((k, k, lane));
                }
            }
        }
        found |= flush(run.take(), &mut outcome);

        if !found {
            let mut counts = [0usize; 12];
            let mut first_t = [f64::INFINITY; 12];
            for &(k, mask, _) in &points {
                for (bit, count) in counts.iter_mut().enumerate() {
                    if mask & (1 << bit) != 0 {
                        *count += 1;
                        first_t[bit] = first_t[bit].min(k as f64 * stride);
                    }
                }
            }
            let best = (0..12).max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a)));
            let (rule, t) = match best {
                Some(b) if counts[b] > 0 => (rule_from_bit(b), first_t[b]),
                _ => (RuleId::R1_7, points[0].0 as f64 * stride),
            };
            outcome.rejections.push(PairRejection {
                leader: leader.to_string(),
                follower: follower.to_string(),
                rule,
                t,
            });
        }
    }
    outcome.candidates.sort_by(|a, b| {
        a.t_start
            .total_cmp(&b.t_start)
            .then_with(|| a.leader.cmp(&b.leader))
            .then_with(|| a.follower.cmp(&b.follower))
    });
    outcome
}

/// Direction of increasing `lane_s` in the world frame, fitted from frames
/// whose world position and lane coordinates are both known.
///
/// On a straight lane `p = c + s u + d n` with `n` the left normal of `u`;
/// after centring, the least-squares direction has a closed form.
pub fn lane_heading(frames: &[&AgentFrame]) -> Option<f64> {
    if frames.len() < 2 {
        return None;
    }
    let n = frames.len() as f64;
    let (mx, my, ms, md) = frames.iter().fold((0.0, 0.0, 0.0, 0.0), |acc, f| {
        (acc.0 + f.x, acc.1 + f.y, acc.2 + f.lane_s, acc.3 + f.lane_d)
    });
    let (mx, my, ms, md) = (mx / n, my / n, ms / n, md / n);
    let mut cx = 0.0;
    let mut cy = 0.0;
    let mut spread = 0.0;
    for f in frames {
        let (x, y, s, d) = (f.x - mx, f.y - my, f.lane_s - ms, f.lane_d - md);
        cx += s * x + d * y;
        cy += s * y - d * x;
        spread += s * s;
    }
    if spread / n < 0.25 {
        return None;
    }
    Some(cy.atan2(cx))
}

fn yaw_std(yaws: &[f64]) -> f64 {
    let (s, c) = yaws
        .iter()
        .fold((0.0, 0.0), |acc, y| (acc.0 + y.sin(), acc.1 + y.cos()));
    let centre = s.atan2(c);
    let dev: Vec<f64> = yaws.iter().map(|y| wrap_angle(y - centre)).collect();
    (dev.iter().map(|d| d * d).sum::<f64>() / dev.len() as f64).sqrt()
}

fn mean_speed(frames: &[&AgentFrame]) -> f64 {
    if frames.len() < 2 {
        return frames.first().and_then(|f| f.speed).unwrap_or(0.0);
    }
    let t: Vec<f64> = frames.iter().map(|f| f.timestamp).collect();
    let x: Vec<f64> = frames.iter().map(|f| f.x).collect();
    let y: Vec<f64> = frames.iter().map(|f| f.y).collect();
    let derived: Option<Vec<f64>> = match (trajkit::derivative(&t, &x), trajkit::derivative(&t, &y)) {
        (Ok(vx), Ok(vy)) => Some(vx.iter().zip(&vy).map(|(a, b)| a.hypot(*b)).collect()),
        _ => None,
    };
    let speeds: Vec<f64> = frames
        .iter()
        .enumerate()
        .map(|(i, f)| f.speed.or_else(|| derived.as_ref().map(|d| d[i])).unwrap_or(0.0))
        .collect();
    trajkit::mean(&speeds)
}

fn find_track<'a>(tracks: &'a [Track], id: &str) -> Option<&'a Track> {
    tracks.iter().find(|t| t.agent_id == id)
}

/// Frame-by-frame check of a screened candidate (Group-2 rules).
///
/// Frames off the candidate's lane are dropped, which shows up as a
/// timestamp gap. The longest stretch free of per-frame violations is kept;
/// if it still exceeds `min_duration` the aggregate rules 2.1 and 2.5 are
/// evaluated on it. Otherwise the earliest violation is returned.
pub fn verify_candidate(
    candidate: &Candidate,
    tracks: &[Track],
    config: &SelectionConfig,
) -> std::result::Result<CFPair, Rejection> {
    let reject_start = |rule| Rejection {
        rule,
        t: candidate.t_start,
    };
    let leader = find_track(tracks, &candidate.leader).ok_or(reject_start(RuleId::R2_3))?;
    let follower = find_track(tracks, &candidate.follower).ok_or(reject_start(RuleId::R2_3))?;

    let eps = 1e-6;
    let within = |f: &&AgentFrame| {
        f.timestamp >= candidate.t_start - eps && f.timestamp <= candidate.t_end + eps && f.lane_id == candidate.lane_id
    };
    let lf: Vec<&AgentFrame> = leader.frames.iter().filter(within).collect();
    let ff: Vec<&AgentFrame> = follower.frames.iter().filter(within).collect();

    // shared timeline
    let mut matched: Vec<(&AgentFrame, &AgentFrame)> = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < lf.len() && j < ff.len() {
        let d = lf[i].timestamp - ff[j].timestamp;
        if d.abs() <= 1e-3 {
            matched.push((lf[i], ff[j]));
            i += 1;
            j += 1;
        } else if d < 0.0 {
            i += 1;
        } else {
            j += 1;
        }
    }
    if matched.len() < 2 {
        return Err(reject_start(RuleId::R2_3));
    }

    let all_frames: Vec<&AgentFrame> = matched.iter().flat_map(|(l, f)| [*l, *f]).collect();
    let heading = lane_heading(&all_frames);

    let mut log: Vec<(RuleId, f64)> = Vec::new();
    let n = matched.len();
    let mut frame_ok = vec![true; n];
    // break_before[m]: the step from m-1 to m is not admissible
    let mut break_before = vec![false; n];
    for (m, (l, f)) in matched.iter().enumerate() {
        let ds = l.lane_s - f.lane_s;
        if !(ds > 0.0 && ds <= config.long_dist_max) {
            frame_ok[m] = false;
            log.push((RuleId::R1_2, l.timestamp));
        }
        if let Some(h) = heading {
            if wrap_angle(l.yaw - h).abs() >= config.yaw_to_lane_max
                || wrap_angle(f.yaw - h).abs() >= config.yaw_to_lane_max
            {
                frame_ok[m] = false;
                log.push((RuleId::R2_2, l.timestamp));
            }
        }
        if m > 0 {
            let (pl, pf) = matched[m - 1];
            if l.timestamp - pl.timestamp >= config.dt_max {
                break_before[m] = true;
                log.push((RuleId::R2_3, pl.timestamp));
            }
            let step_l = (l.x - pl.x).hypot(l.y - pl.y);
            let step_f = (f.x - pf.x).hypot(f.y - pf.y);
            if step_l >= config.step_dist_max || step_f >= config.step_dist_max {
                break_before[m] = true;
                log.push((RuleId::R2_4, pl.timestamp));
            }
        }
    }
    log.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));

    // longest clean stretch, earliest on ties
    let mut best: Option<(usize, usize)> = None;
    let mut start: Option<usize> = None;
    for m in 0..=n {
        let continues = m < n && frame_ok[m] && start.is_some() && !break_before[m];
        if continues {
            continue;
        }
        if let Some(s) = start.take() {
            let e = m - 1;
            let dur = matched[e].0.timestamp - matched[s].0.timestamp;
            let better = best.is_none_or(|(bs, be)| dur > matched[be].0.timestamp - matched[bs].0.timestamp);
            if better {
                best = Some((s, e));
            }
        }
        if m < n && frame_ok[m] {
            start = Some(m);
        }
    }
    let earliest = |log: &[(RuleId, f64)]| {
        log.first()
            .map(|&(rule, t)| Rejection { rule, t })
            .unwrap_or(reject_start(RuleId::R1_7))
    };
    let (s, e) = match best {
        Some((s, e)) if matched[e].0.timestamp - matched[s].0.timestamp > config.min_duration => (s, e),
        _ => return Err(earliest(&log)),
    };
    let seg = &matched[s..=e];
    let t0 = seg[0].0.timestamp;

    let lead: Vec<&AgentFrame> = seg.iter().map(|p| p.0).collect();
    let fol: Vec<&AgentFrame> = seg.iter().map(|p| p.1).collect();
    let yl: Vec<f64> = lead.iter().map(|f| f.yaw).collect();
    let yf: Vec<f64> = fol.iter().map(|f| f.yaw).collect();
    if yaw_std(&yl) >= config.yaw_dev_max || yaw_std(&yf) >= config.yaw_dev_max {
        return Err(Rejection {
            rule: RuleId::R2_1,
            t: t0,
        });
    }
    if mean_speed(&lead) <= config.mean_speed_min || mean_speed(&fol) <= config.mean_speed_min {
        return Err(Rejection {
            rule: RuleId::R2_5,
            t: t0,
        });
    }

    let origin = lead[0].lane_s;
    Ok(CFPair {
        pair_id: String::new(),
        leader_type: if leader.is_av { LeaderType::Av } else { LeaderType::Hv },
        leader_track: leader.agent_id.clone(),
        follower_track: follower.agent_id.clone(),
        lane_id: candidate.lane_id.clone(),
        time: lead.iter().map(|f| f.timestamp).collect(),
        x_lead: lead.iter().map(|f| f.lane_s - origin).collect(),
        x_fol: fol.iter().map(|f| f.lane_s - origin).collect(),
        v_lead: lead.iter().map(|f| f.speed).collect(),
        v_fol: fol.iter().map(|f| f.speed).collect(),
        yaw_lead: yl,
        yaw_fol: yf,
        length_lead: lead.iter().map(|f| f.length).collect(),
        length_fol: fol.iter().map(|f| f.length).collect(),
        width_lead: lead.iter().map(|f| f.width).collect(),
        width_fol: fol.iter().map(|f| f.width).collect(),
        rejection_log: log,
    })
}

#[derive(Debug, Clone, Default)]
pub struct SelectionOutput {
    /// Human following the AV.
    pub ha: Vec<CFPair>,
    /// Human following a human.
    pub hh: Vec<CFPair>,
    pub rejections: Vec<PairRejection>,
    pub candidates: usize,
    /// Candidates dropped because the follower was the AV.
    pub av_followers: usize,
}

impl SelectionOutput {
    pub fn all_pairs(&self) -> impl Iterator<Item = &CFPair> {
        self.ha.iter().chain(self.hh.iter())
    }
}

/// Screening + verification + labelling. Pair ids are `HA-#####` or
/// `HH-#####` in (start time, leader, follower) order.
pub fn extract_pairs(tracks: &[Track], config: &SelectionConfig) -> SelectionOutput {
    let screened = screen_candidates(tracks, config);
    let mut out = SelectionOutput {
        candidates: screened.candidates.len(),
        rejections: screened.rejections,
        ..Default::default()
    };
    let is_av = |id: &str| find_track(tracks, id).map(|t| t.is_av).unwrap_or(false);

    let verified: Vec<(Candidate, std::result::Result<CFPair, Rejection>)> = screened
        .candidates
        .into_par_iter()
        .map(|c| {
            let r = verify_candidate(&c, tracks, config);
            (c, r)
        })
        .collect();

    for (cand, result) in verified {
        if is_av(&cand.follower) {
            out.av_followers += 1;
            continue;
        }
        match result {
            Ok(pair) => match pair.leader_type {
                LeaderType::Av => out.ha.push(pair),
                LeaderType::Hv => out.hh.push(pair),
            },
            Err(rej) => out.rejections.push(PairRejection {
                leader: cand.leader,
                follower: cand.follower,
                rule: rej.rule,
                t: rej.t,
            }),
        }
    }
    for (list, prefix) in [(&mut out.ha, "HA"), (&mut out.hh, "HH")] {
        list.sort_by(|a, b| {
            a.t_start()
                .total_cmp(&b.t_start())
                .then_with(|| a.leader_track.cmp(&b.leader_track))
                .then_with(|| a.follower_track.cmp(&b.follower_track))
        });
        for (i, p) in list.iter_mut().enumerate() {
            p.pair_id = format!("{prefix}-{:05}", i + 1);
        }
    }
    out.rejections.sort_by(|a, b| {
        a.leader
            .cmp(&b.leader)
            .then_with(|| a.follower.cmp(&b.follower))
            .then(a.t.total_cmp(&b.t))
    });
    out
}
