//! Ground-truth leader-follower episodes and their corruption into raw
//! scene files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{self, AgentFrame};
use crate::select::{CFPair, LeaderType};

/// Integration rate of the simulator, Hz.
const FINE_HZ: usize = 100;
/// Output sample rate, Hz.
const SAMPLE_HZ: usize = 10;
/// Deceleration command that keeps a stopped vehicle pinned at zero.
const STOP_HOLD: f64 = 0.5;
/// Lane position of the leader at the first sample, metres.
const LANE_S0: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpeedSegment {
    Cruise { duration: f64 },
    Accelerate { duration: f64, rate: f64 },
    Decelerate { duration: f64, rate: f64 },
    Stop { duration: f64 },
}

impl SpeedSegment {
    pub fn duration(&self) -> f64 {
        match *self {
            SpeedSegment::Cruise { duration }
            | SpeedSegment::Accelerate { duration, .. }
            | SpeedSegment::Decelerate { duration, .. }
            | SpeedSegment::Stop { duration } => duration,
        }
    }

    fn command(&self) -> f64 {
        match *self {
            SpeedSegment::Cruise { .. } => 0.0,
            SpeedSegment::Accelerate { rate, .. } => rate,
            SpeedSegment::Decelerate { rate, .. } => -rate,
            SpeedSegment::Stop { .. } => -STOP_HOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeaderScript {
    pub initial_speed: f64,
    pub segments: Vec<SpeedSegment>,
}

impl LeaderScript {
    pub fn duration(&self) -> f64 {
        self.segments.iter().map(SpeedSegment::duration).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdmParams {
    pub desired_speed: f64,
    pub time_headway: f64,
    pub max_accel: f64,
    pub comfort_decel: f64,
    pub jam_distance: f64,
    pub exponent: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            desired_speed: 15.0,
            time_headway: 1.5,
            max_accel: 1.2,
            comfort_decel: 2.0,
            jam_distance: 2.0,
            exponent: 4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FollowerModel {
    /// Standard IDM starting at the leader's speed with the given bumper gap.
    Idm { params: IdmParams, initial_gap: f64 },
    /// `x_f(t) = x_l(t - tau) - delta`, leader history extended by cruising.
    Newell { tau: f64, delta: f64 },
}

/// Corruption knobs; all zero / off reproduces the truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    /// Along-lane position noise for human-driven vehicles, m.
    pub position_sigma: f64,
    /// Lateral position noise, m.
    pub lateral_sigma: f64,
    /// Along-lane position noise for the AV, m.
    pub av_position_sigma: f64,
    /// Reported speed noise, m/s.
    pub speed_sigma: f64,
    pub yaw_sigma: f64,
    /// Perceived length falls short of the truth by `|N(0, sigma)|`.
    pub length_sigma: f64,
    /// Share of frames whose length is replaced by `length_outlier`.
    pub length_outlier_fraction: f64,
    pub length_outlier: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            position_sigma: 0.0,
            lateral_sigma: 0.0,
            av_position_sigma: 0.0,
            speed_sigma: 0.0,
            yaw_sigma: 0.0,
            length_sigma: 0.0,
            length_outlier_fraction: 0.0,
            length_outlier: 8.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArtifactSpec {
    pub scene_length: f64,
    /// Report speed 0 on every scene's first and last human-driven frame.
    pub zero_speed: bool,
    /// Number of dropouts removing both vehicles' frames.
    pub holes: usize,
    pub hole_duration: f64,
    /// Uniform timestamp jitter half-width, s.
    pub timestamp_jitter: f64,
}

impl Default for ArtifactSpec {
    fn default() -> Self {
        Self {
            scene_length: 25.0,
            zero_speed: false,
            holes: 0,
            hole_duration: 1.0,
            timestamp_jitter: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthScenario {
    pub leader_is_av: bool,
    pub leader: LeaderScript,
    pub follower: FollowerModel,
    #[serde(default = "default_leader_length")]
    pub leader_length: f64,
    #[serde(default = "default_follower_length")]
    pub follower_length: f64,
    #[serde(default = "default_width")]
    pub width: f64,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub artifacts: ArtifactSpec,
    #[serde(default)]
    pub seed: u64,
    /// Absolute time of the first sample.
    #[serde(default)]
    pub t0: f64,
    /// Lane heading in the world frame, rad.
    #[serde(default)]
    pub heading: f64,
}

fn default_leader_length() -> f64 {
    4.6
}

fn default_follower_length() -> f64 {
    4.4
}

fn default_width() -> f64 {
    1.8
}

impl SynthScenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScenario(m));
        if self.leader.segments.is_empty() || !(self.leader.duration() > 0.0) {
            return bad("leader script is empty".into());
        }
        if !(self.leader.initial_speed >= 0.0) {
            return bad(format!("initial speed {} < 0", self.leader.initial_speed));
        }
        for s in &self.leader.segments {
            let rate_ok = match *s {
                SpeedSegment::Accelerate { rate, .. } | SpeedSegment::Decelerate { rate, .. } => rate > 0.0,
                _ => true,
            };
            if !(s.duration() > 0.0) || !rate_ok {
                return bad(format!("invalid segment {s:?}"));
            }
        }
        match self.follower {
            FollowerModel::Idm { params: p, initial_gap } => {
                let all = [
                    p.desired_speed,
                    p.time_headway,
                    p.max_accel,
                    p.comfort_decel,
                    p.jam_distance,
                    p.exponent,
                    initial_gap,
                ];
                if all.iter().any(|v| !(*v > 0.0)) {
                    return bad(format!("IDM parameters must be positive: {p:?}, gap {initial_gap}"));
                }
            }
            FollowerModel::Newell { tau, delta } => {
                if !(tau > 0.0 && delta > 0.0) {
                    return bad(format!("Newell shift must be positive: tau {tau}, delta {delta}"));
                }
            }
        }
        if !(self.leader_length > 0.0 && self.follower_length > 0.0 && self.width > 0.0) {
            return bad("vehicle dimensions must be positive".into());
        }
        if !(self.artifacts.scene_length > 0.0) {
            return bad("scene length must be positive".into());
        }
        if !(0.0..0.05).contains(&self.artifacts.timestamp_jitter) {
            return bad("timestamp jitter must lie in [0, 0.05) s".into());
        }
        if !(0.0..=1.0).contains(&self.noise.length_outlier_fraction) {
            return bad("length outlier fraction must lie in [0, 1]".into());
        }
        Ok(())
    }
}

/// Lane-coordinate truth sampled at 10 Hz; `t` starts at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub t: Vec<f64>,
    pub x_lead: Vec<f64>,
    pub v_lead: Vec<f64>,
    pub a_lead: Vec<f64>,
    pub x_fol: Vec<f64>,
    pub v_fol: Vec<f64>,
    pub a_fol: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPair {
    pub truth: Truth,
    /// Truth expressed as a selected pair (leader starts at `x = 0`).
    pub pair: CFPair,
}

struct Fine {
    x: Vec<f64>,
    v: Vec<f64>,
    a: Vec<f64>,
}

fn integrate_leader(script: &LeaderScript, n_fine: usize) -> Fine {
    let dt = 1.0 / FINE_HZ as f64;
    let mut cmd = Vec::with_capacity(n_fine);
    let mut seg_end = 0.0;
    let mut segs = script.segments.iter().peekable();
    let mut current = script.segments[0];
    for k in 0..n_fine {
        let t = k as f64 * dt;
        while t >= seg_end - 1e-9 {
            match segs.next() {
                Some(s) => {
                    current = *s;
                    seg_end += s.duration();
                }
                None => {
                    current = SpeedSegment::Cruise {
                        duration: f64::INFINITY,
                    };
                    seg_end = f64::INFINITY;
                }
            }
        }
        cmd.push(current.command());
    }
    // one-second causal moving average, zero command before the start
    let window = FINE_HZ;
    let mut smoothed = Vec::with_capacity(n_fine);
    let mut acc = 0.0;
    for k in 0..n_fine {
        acc += cmd[k];
        if k >= window {
            acc -= cmd[k - window];
        }
        smoothed.push(acc / window as f64);
    }
    let mut x = vec![LANE_S0];
    let mut v = vec![script.initial_speed];
    let mut a = Vec::with_capacity(n_fine);
    for k in 0..n_fine {
        let v_next = (v[k] + smoothed[k] * dt).max(0.0);
        a.push((v_next - v[k]) / dt);
        x.push(x[k] + 0.5 * (v[k] + v_next) * dt);
        v.push(v_next);
    }
    a.push(*a.last().unwrap_or(&0.0));
    Fine { x, v, a }
}

fn lookup(f: &Fine, t: f64) -> (f64, f64, f64) {
    let dt = 1.0 / FINE_HZ as f64;
    if t <= 0.0 {
        return (f.x[0] + f.v[0] * t, f.v[0], 0.0);
    }
    let pos = t / dt;
    let k = (pos.floor() as usize).min(f.x.len() - 2);
    let w = pos - k as f64;
    let lerp = |s: &[f64]| s[k] + w * (s[k + 1] - s[k]);
    (lerp(&f.x), lerp(&f.v), f.a[k])
}

/// Integrates the leader script and the follower model; the output is
/// sampled at 10 Hz over the script duration.
pub fn simulate_pair(s: &SynthScenario) -> Result<SimulatedPair> {
    s.validate()?;
    let duration = s.leader.duration();
    let n_fine = (duration * FINE_HZ as f64).round() as usize;
    let lead = integrate_leader(&s.leader, n_fine);
    let stride = FINE_HZ / SAMPLE_HZ;
    let n = n_fine / stride + 1;
    let t: Vec<f64> = (0..n).map(|i| i as f64 / SAMPLE_HZ as f64).collect();

    let (x_fol, v_fol, a_fol) = match s.follower {
        FollowerModel::Newell { tau, delta } => {
            let mut xs = Vec::with_capacity(n);
            let mut vs = Vec::with_capacity(n);
            let mut as_ = Vec::with_capacity(n);
            for &ti in &t {
                let (x, v, a) = lookup(&lead, ti - tau);
                xs.push(x - delta);
                vs.push(v);
                as_.push(a);
            }
            (xs, vs, as_)
        }
        FollowerModel::Idm { params: p, initial_gap } => {
            let dt = 1.0 / FINE_HZ as f64;
            let mut x = lead.x[0] - s.leader_length - initial_gap;
            let mut v = lead.v[0];
            let (mut xs, mut vs, mut as_) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
            for k in 0..=n_fine {
                let gap = lead.x[k] - x - s.leader_length;
                if gap <= 0.0 {
                    return Err(Error::InvalidScenario(format!(
                        "follower reaches the leader at t = {:.2} s",
                        k as f64 * dt
                    )));
                }
                let dv = v - lead.v[k];
                let s_star = p.jam_distance
                    + (v * p.time_headway + v * dv / (2.0 * (p.max_accel * p.comfort_decel).sqrt())).max(0.0);
                let acc = p.max_accel * (1.0 - (v / p.desired_speed).powf(p.exponent) - (s_star / gap).powi(2));
                let v_next = (v + acc * dt).max(0.0);
                if k % stride == 0 {
                    xs.push(x);
                    vs.push(v);
                    as_.push((v_next - v) / dt);
                }
                x += 0.5 * (v + v_next) * dt;
                v = v_next;
            }
            (xs, vs, as_)
        }
    };

    let pick = |f: &[f64]| (0..n).map(|i| f[i * stride]).collect::<Vec<f64>>();
    let truth = Truth {
        x_lead: pick(&lead.x),
        v_lead: pick(&lead.v),
        a_lead: pick(&lead.a),
        x_fol,
        v_fol,
        a_fol,
        t,
    };
    for i in 0..n {
        if truth.x_lead[i] - truth.x_fol[i] - s.leader_length <= 0.0 {
            return Err(Error::InvalidScenario(format!(
                "non-positive gap at t = {:.1} s",
                truth.t[i]
            )));
        }
    }

    let origin = truth.x_lead[0];
    let leader_type = if s.leader_is_av { LeaderType::Av } else { LeaderType::Hv };
    let hv = |present: bool, v: f64| if present { Some(v) } else { None };
    let pair = CFPair {
        pair_id: String::new(),
        leader_type,
        leader_track: "leader".into(),
        follower_track: "follower".into(),
        lane_id: "truth".into(),
        time: truth.t.iter().map(|t| t + s.t0).collect(),
        x_lead: truth.x_lead.iter().map(|x| x - origin).collect(),
        x_fol: truth.x_fol.iter().map(|x| x - origin).collect(),
        v_lead: truth.v_lead.iter().map(|&v| hv(!s.leader_is_av, v)).collect(),
        v_fol: truth.v_fol.iter().map(|&v| Some(v)).collect(),
        yaw_lead: vec![s.heading; n],
        yaw_fol: vec![s.heading; n],
        length_lead: vec![hv(!s.leader_is_av, s.leader_length); n],
        length_fol: vec![Some(s.follower_length); n],
        width_lead: vec![hv(!s.leader_is_av, s.width); n],
        width_fol: vec![Some(s.width); n],
        rejection_log: Vec::new(),
    };
    Ok(SimulatedPair { truth, pair })
}

/// Number of scenes covering `duration` seconds.
pub fn scene_count(duration: f64, scene_length: f64) -> usize {
    ((duration / scene_length) - 1e-9).ceil().max(1.0) as usize
}

fn wrap(a: f64) -> f64 {
    crate::select::wrap_angle(a)
}

/// Perceived lengths: one-sided shortfall jitter plus exactly
/// `floor(fraction * n)` outliers at random positions.
pub fn jitter_lengths(truth: f64, n: usize, noise: &NoiseSpec, rng: &mut impl Rng) -> Vec<f64> {
    let mut out: Vec<f64> = if noise.length_sigma > 0.0 {
        let d = Normal::new(0.0, noise.length_sigma).expect("sigma > 0");
        (0..n).map(|_| truth - d.sample(rng).abs()).collect()
    } else {
        vec![truth; n]
    };
    let k = (noise.length_outlier_fraction * n as f64 + 1e-9).floor() as usize;
    for i in sample_indices(rng, n, k.min(n)) {
        out[i] = noise.length_outlier;
    }
    out
}

fn normal(sigma: f64) -> Option<Normal<f64>> {
    (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("sigma > 0"))
}

/// Raw scene frames for pair `index` of a corpus: lane `lane-<index>`,
/// world offset `index * 1000 m`, per-scene agent renumbering.
pub fn corrupt(sim: &SimulatedPair, s: &SynthScenario, index: usize) -> Vec<AgentFrame> {
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed ^ 0x5eed_c0de);
    let tr = &sim.truth;
    let n = tr.t.len();
    let duration = tr.t[n - 1];

    let jitter = s.artifacts.timestamp_jitter;
    let times: Vec<f64> =
        tr.t.iter()
            .map(|t| {
                let j = if jitter > 0.0 {
                    rng.random_range(-jitter..jitter)
                } else {
                    0.0
                };
                s.t0 + t + j
            })
            .collect();

    let mut present = vec![true; n];
    for _ in 0..s.artifacts.holes {
        let room = duration - 4.0 - s.artifacts.hole_duration;
        if room <= 0.0 {
            break;
        }
        let start = 2.0 + rng.random_range(0.0..room);
        for (i, t) in tr.t.iter().enumerate() {
            if *t >= start && *t < start + s.artifacts.hole_duration {
                present[i] = false;
            }
        }
    }

    let scene_len = s.artifacts.scene_length;
    let n_scenes = scene_count(duration, scene_len);
    let scene_of = |t: f64| (((t / scene_len) + 1e-9).floor() as usize).min(n_scenes - 1);

    let along = |av: bool| {
        normal(if av {
            s.noise.av_position_sigma
        } else {
            s.noise.position_sigma
        })
    };
    let lat = normal(s.noise.lateral_sigma);
    let yaw_noise = normal(s.noise.yaw_sigma);
    let speed_noise = normal(s.noise.speed_sigma);

    let lane_id = format!("lane-{index:04}");
    let signal = format!("sig-{index:04}");
    let (ox, oy) = (0.0, index as f64 * 1000.0);
    let (ch, sh) = (s.heading.cos(), s.heading.sin());

    struct Vehicle<'a> {
        is_av: bool,
        x: &'a [f64],
        v: &'a [f64],
        length: f64,
    }
    let vehicles = [
        Vehicle {
            is_av: s.leader_is_av,
            x: &tr.x_lead,
            v: &tr.v_lead,
            length: s.leader_length,
        },
        Vehicle {
            is_av: false,
            x: &tr.x_fol,
            v: &tr.v_fol,
            length: s.follower_length,
        },
    ];

    // per-scene agent ids; the AV is always "ego"
    let ids: Vec<[String; 2]> = (0..n_scenes)
        .map(|_| {
            let a = rng.random_range(1..50u32);
            let b = a + rng.random_range(1..50u32);
            let (l, f) = if rng.random_bool(0.5) { (a, b) } else { (b, a) };
            [
                if s.leader_is_av {
                    "ego".to_string()
                } else {
                    l.to_string()
                },
                f.to_string(),
            ]
        })
        .collect();

    let mut frames = Vec::with_capacity(2 * n);
    for (vi, veh) in vehicles.iter().enumerate() {
        let keep: Vec<usize> = (0..n).filter(|&i| present[i]).collect();
        let lengths = jitter_lengths(veh.length, keep.len(), &s.noise, &mut rng);
        let ds = along(veh.is_av);
        let mut first_last = vec![false; n];
        if s.artifacts.zero_speed && !veh.is_av {
            for k in 0..n_scenes {
                let in_scene: Vec<usize> = keep.iter().copied().filter(|&i| scene_of(tr.t[i]) == k).collect();
                if let (Some(&a), Some(&b)) = (in_scene.first(), in_scene.last()) {
                    first_last[a] = true;
                    first_last[b] = true;
                }
            }
        }
        for (slot, &i) in keep.iter().enumerate() {
            let lane_s = veh.x[i] + ds.map_or(0.0, |d| d.sample(&mut rng));
            let lane_d = lat.map_or(0.0, |d| d.sample(&mut rng));
            let yaw = wrap(s.heading + yaw_noise.map_or(0.0, |d| d.sample(&mut rng)));
            let speed = if veh.is_av {
                None
            } else if first_last[i] {
                Some(0.0)
            } else {
                Some((veh.v[i] + speed_noise.map_or(0.0, |d| d.sample(&mut rng))).max(0.0))
            };
            let k = scene_of(tr.t[i]);
            frames.push(AgentFrame {
                scene_id: format!("synth-{index:04}-{k:02}"),
                timestamp: times[i],
                agent_id: ids[k][vi].clone(),
                is_av: veh.is_av,
                class_prob_car: 1.0,
                x: ox + lane_s * ch - lane_d * sh,
                y: oy + lane_s * sh + lane_d * ch,
                yaw,
                speed,
                length: (!veh.is_av).then_some(lengths[slot]),
                width: (!veh.is_av).then_some(s.width),
                lane_id: lane_id.clone(),
                lane_s,
                lane_d,
                lane_is_straight: true,
                signal_segment_id: signal.clone(),
            });
        }
    }
    frames.sort_by(|a, b| {
        a.scene_id
            .cmp(&b.scene_id)
            .then(a.timestamp.total_cmp(&b.timestamp))
            .then_with(|| a.agent_id.cmp(&b.agent_id))
    });
    frames
}

pub const TRUTH_HEADER: &str = "t,x_lead,v_lead,a_lead,x_fol,v_fol,a_fol";

pub fn write_truth(path: &Path, truth: &Truth, t0: f64) -> Result<()> {
    let mut out = String::from(TRUTH_HEADER);
    out.push('\n');
    for i in 0..truth.t.len() {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            truth.t[i] + t0,
            truth.x_lead[i],
            truth.v_lead[i],
            truth.a_lead[i],
            truth.x_fol[i],
            truth.v_fol[i],
            truth.a_fol[i]
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FollowerKind {
    Idm,
    Newell,
    Mixed,
}

/// Randomised corpus of urban car-following episodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub n_pairs: usize,
    /// Episode length, seconds.
    pub duration: f64,
    pub seed: u64,
    pub av_leader_fraction: f64,
    pub follower: FollowerKind,
    /// Allow full stops in leader scripts.
    pub stops: bool,
    pub noise: NoiseSpec,
    pub artifacts: ArtifactSpec,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            n_pairs: 10,
            duration: 60.0,
            seed: 1,
            av_leader_fraction: 0.5,
            follower: FollowerKind::Mixed,
            stops: true,
            noise: NoiseSpec {
                position_sigma: 0.05,
                lateral_sigma: 0.05,
                av_position_sigma: 0.02,
                speed_sigma: 0.05,
                yaw_sigma: 0.005,
                length_sigma: 0.4,
                length_outlier_fraction: 0.05,
                length_outlier: 8.0,
            },
            artifacts: ArtifactSpec {
                zero_speed: true,
                ..ArtifactSpec::default()
            },
        }
    }
}

/// Random leader script of exactly `duration` seconds keeping the planned
/// speed roughly inside 3-11 m/s (or stopping when `stops` allows).
pub fn random_script(duration: f64, stops: bool, rng: &mut impl Rng) -> LeaderScript {
    let initial_speed = rng.random_range(5.0..9.0);
    let mut v = initial_speed;
    let mut left = duration;
    let mut segments = Vec::new();
    while left > 1e-9 {
        let roll: f64 = rng.random();
        let seg = if stops && v > 1.0 && v < 4.0 && roll < 0.3 && left > 10.0 {
            let rate: f64 = rng.random_range(1.0..2.0);
            let d = v / rate;
            v = 0.0;
            segments.push(SpeedSegment::Decelerate {
                duration: d.min(left),
                rate,
            });
            left -= d.min(left);
            if left <= 1e-9 {
                break;
            }
            SpeedSegment::Stop {
                duration: rng.random_range(3.0f64..6.0).min(left),
            }
        } else if v < 3.0 || (v < 9.0 && roll < 0.35) {
            let rate = rng.random_range(0.6..1.5);
            let d: f64 = rng.random_range(2.0..5.0);
            v += rate * d;
            SpeedSegment::Accelerate {
                duration: d.min(left),
                rate,
            }
        } else if v > 11.0 || roll < 0.7 {
            let rate = rng.random_range(0.6..1.5);
            let d: f64 = rng.random_range(2.0f64..5.0).min((v - 1.0).max(0.5) / rate);
            v = (v - rate * d).max(0.0);
            SpeedSegment::Decelerate {
                duration: d.min(left),
                rate,
            }
        } else {
            SpeedSegment::Cruise {
                duration: rng.random_range(2.0f64..6.0).min(left),
            }
        };
        left -= seg.duration();
        segments.push(seg);
    }
    LeaderScript {
        initial_speed,
        segments,
    }
}

/// Deterministic scenarios of a corpus; pair `i` starts at `i * (duration + 100)` s.
pub fn corpus_scenarios(spec: &CorpusSpec) -> Vec<SynthScenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..spec.n_pairs)
        .map(|i| {
            let leader_is_av = rng.random_bool(spec.av_leader_fraction.clamp(0.0, 1.0));
            let newell = match spec.follower {
                FollowerKind::Idm => false,
                FollowerKind::Newell => true,
                FollowerKind::Mixed => rng.random_bool(0.5),
            };
            let follower = if newell {
                FollowerModel::Newell {
                    tau: rng.random_range(0.8..2.5),
                    delta: rng.random_range(7.0..12.0),
                }
            } else {
                FollowerModel::Idm {
                    params: IdmParams {
                        desired_speed: rng.random_range(13.0..17.0),
                        time_headway: rng.random_range(1.0..2.0),
                        ..IdmParams::default()
                    },
                    initial_gap: rng.random_range(10.0..20.0),
                }
            };
            SynthScenario {
                leader_is_av,
                leader: random_script(spec.duration, spec.stops, &mut rng),
                follower,
                leader_length: if leader_is_av {
                    crate::enhance::AV_LENGTH
                } else {
                    rng.random_range(4.0..5.0)
                },
                follower_length: rng.random_range(4.0..5.0),
                width: 1.8,
                noise: spec.noise,
                artifacts: spec.artifacts,
                seed: rng.random(),
                t0: i as f64 * (spec.duration + 100.0),
                heading: rng.random_range(-3.0..3.0),
            }
        })
        .collect()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    corpus: Option<CorpusSpec>,
    #[serde(default)]
    pair: Vec<SynthScenario>,
}

/// Parses a scenario file: either a `[corpus]` table or one or more
/// `[[pair]]` tables. Explicit pairs start 100 s after the previous one ends
/// unless they set `t0`.
pub fn scenarios_from_toml(text: &str) -> Result<Vec<SynthScenario>> {
    scenarios_from_toml_seeded(text, None)
}

/// As [`scenarios_from_toml`], with `seed` replacing the `[corpus]` seed.
/// Explicit `[[pair]]` tables keep their own seeds.
pub fn scenarios_from_toml_seeded(text: &str, seed: Option<u64>) -> Result<Vec<SynthScenario>> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| Error::InvalidScenario(e.to_string()))?;
    let scenarios = match (file.corpus, file.pair.is_empty()) {
        (Some(mut spec), true) => {
            spec.seed = seed.unwrap_or(spec.seed);
            corpus_scenarios(&spec)
        }
        (None, false) => {
            let mut next = 0.0;
            let mut out = file.pair;
            for s in &mut out {
                if s.t0 == 0.0 {
                    s.t0 = next;
                }
                next = s.t0 + s.leader.duration() + 100.0;
            }
            out
        }
        _ => {
            return Err(Error::InvalidScenario(
                "scenario file needs either a [corpus] table or [[pair]] tables".into(),
            ))
        }
    };
    if scenarios.is_empty() {
        return Err(Error::InvalidScenario("scenario file describes no pairs".into()));
    }
    for s in &scenarios {
        s.validate()?;
    }
    Ok(scenarios)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusOutput {
    pub scene_files: Vec<PathBuf>,
    pub truth_files: Vec<PathBuf>,
    pub pairs: usize,
}

/// Writes `scenes/pair_NNNN.csv` and `truth/pair_NNNN.csv` under `out`.
pub fn write_corpus(scenarios: &[SynthScenario], out: &Path) -> Result<CorpusOutput> {
    let scenes = out.join("scenes");
    let truth = out.join("truth");
    for d in [&scenes, &truth] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut result = CorpusOutput {
        scene_files: Vec::new(),
        truth_files: Vec::new(),
        pairs: 0,
    };
    for (i, s) in scenarios.iter().enumerate() {
        let sim = simulate_pair(s)?;
        let frames = corrupt(&sim, s, i);
        let sp = scenes.join(format!("pair_{i:04}.csv"));
        ingest::write_frames_file(&sp, &frames)?;
        let tp = truth.join(format!("pair_{i:04}.csv"));
        write_truth(&tp, &sim.truth, s.t0)?;
        result.scene_files.push(sp);
        result.truth_files.push(tp);
        result.pairs += 1;
    }
    let manifest = out.join("corpus.json");
    let body = serde_json::to_string_pretty(scenarios).map_err(|e| Error::invalid(e.to_string()))?;
    let mut f = fs::File::create(&manifest).map_err(|e| Error::io(&manifest, e))?;
    f.write_all(body.as_bytes()).map_err(|e| Error::io(&manifest, e))?;
    Ok(result)
}
