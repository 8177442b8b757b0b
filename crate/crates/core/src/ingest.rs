//! Canonical scene files: parsing, validation and cross-scene track stitching.
//!
//! A scene file is UTF-8 CSV with the header in [`HEADER`]. Booleans are
//! `0`/`1`, absent optional fields are empty. Records from any number of files
//! are merged by `scene_id`; within a scene they are ordered by timestamp.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HEADER: [&str; 16] = [
    "scene_id",
    "timestamp",
    "agent_id",
    "is_av",
    "class_prob_car",
    "x",
    "y",
    "yaw",
    "speed",
    "length",
    "width",
    "lane_id",
    "lane_s",
    "lane_d",
    "lane_is_straight",
    "signal_segment_id",
];

/// Fraction of malformed lines above which a file is refused outright.
pub const MAX_REJECT_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct AgentFrame {
    pub scene_id: String,
    pub timestamp: f64,
    /// `"ego"` for the sensing vehicle in the source data.
    pub agent_id: String,
    pub is_av: bool,
    pub class_prob_car: f64,
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub speed: Option<f64>,
    pub length: Option<f64>,
    pub width: Option<f64>,
    pub lane_id: String,
    pub lane_s: f64,
    pub lane_d: f64,
    pub lane_is_straight: bool,
    pub signal_segment_id: String,
}

impl AgentFrame {
    /// Car probability used by the selection rules; the AV is a car.
    pub fn car_probability(&self) -> f64 {
        if self.is_av {
            1.0
        } else {
            self.class_prob_car
        }
    }

    pub fn to_record(&self) -> String {
        let mut s = String::with_capacity(128);
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.scene_id,
            self.timestamp,
            self.agent_id,
            self.is_av as u8,
            self.class_prob_car,
            self.x,
            self.y,
            self.yaw,
            opt(self.speed),
            opt(self.length),
            opt(self.width),
            self.lane_id,
            self.lane_s,
            self.lane_d,
            self.lane_is_straight as u8,
            self.signal_segment_id
        );
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reject {
    pub path: PathBuf,
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RejectsReport {
    pub records_seen: usize,
    pub rejects: Vec<Reject>,
}

impl RejectsReport {
    pub fn fraction(&self) -> f64 {
        if self.records_seen == 0 {
            0.0
        } else {
            self.rejects.len() as f64 / self.records_seen as f64
        }
    }
}

/// Frames grouped by scene, each scene sorted by (timestamp, agent_id).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SceneSet {
    pub scenes: BTreeMap<String, Vec<AgentFrame>>,
}

impl SceneSet {
    pub fn frame_count(&self) -> usize {
        self.scenes.values().map(Vec::len).sum()
    }

    fn insert(&mut self, frame: AgentFrame) {
        self.scenes.entry(frame.scene_id.clone()).or_default().push(frame);
    }

    fn sort(&mut self) {
        for frames in self.scenes.values_mut() {
            frames.sort_by(|a, b| {
                a.timestamp
                    .total_cmp(&b.timestamp)
                    .then_with(|| a.agent_id.cmp(&b.agent_id))
            });
        }
    }
}

fn parse_bool(field: &str, name: &str) -> std::result::Result<bool, String> {
    match field {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(format!("{name} must be 0 or 1, got {other:?}")),
    }
}

fn parse_f64(field: &str, name: &str) -> std::result::Result<f64, String> {
    let v: f64 = field
        .parse()
        .map_err(|_| format!("{name} is not a number: {field:?}"))?;
    if !v.is_finite() {
        return Err(format!("{name} is not finite"));
    }
    Ok(v)
}

fn parse_opt(field: &str, name: &str) -> std::result::Result<Option<f64>, String> {
    if field.is_empty() {
        Ok(None)
    } else {
        parse_f64(field, name).map(Some)
    }
}

/// Parses one data line of the canonical format.
pub fn parse_record(line: &str) -> std::result::Result<AgentFrame, String> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != HEADER.len() {
        return Err(format!("expected {} fields, found {}", HEADER.len(), fields.len()));
    }
    let scene_id = fields[0].to_string();
    if scene_id.is_empty() {
        return Err("empty scene_id".into());
    }
    let agent_id = fields[2].to_string();
    if agent_id.is_empty() {
        return Err("empty agent_id".into());
    }
    let class_prob_car = parse_f64(fields[4], "class_prob_car")?;
    if !(0.0..=1.0).contains(&class_prob_car) {
        return Err("probability out of range".into());
    }
    let mut yaw = parse_f64(fields[7], "yaw")?;
    if yaw.abs() > std::f64::consts::PI + 1e-9 {
        return Err("yaw out of range".into());
    }
    if yaw <= -std::f64::consts::PI {
        yaw = std::f64::consts::PI;
    }
    let speed = parse_opt(fields[8], "speed")?;
    let length = parse_opt(fields[9], "length")?;
    let width = parse_opt(fields[10], "width")?;
    for (v, name) in [(length, "length"), (width, "width")] {
        if matches!(v, Some(x) if x <= 0.0) {
            return Err(format!("{name} must be positive"));
        }
    }
    Ok(AgentFrame {
        scene_id,
        timestamp: parse_f64(fields[1], "timestamp")?,
        agent_id,
        is_av: parse_bool(fields[3], "is_av")?,
        class_prob_car,
        x: parse_f64(fields[5], "x")?,
        y: parse_f64(fields[6], "y")?,
        yaw,
        speed,
        length,
        width,
        lane_id: fields[11].to_string(),
        lane_s: parse_f64(fields[12], "lane_s")?,
        lane_d: parse_f64(fields[13], "lane_d")?,
        lane_is_straight: parse_bool(fields[14], "lane_is_straight")?,
        signal_segment_id: fields[15].to_string(),
    })
}

/// Reads one scene file. Malformed lines land in the rejects report; more
/// than [`MAX_REJECT_FRACTION`] of them fails the whole file.
pub fn read_frames(path: &Path) -> Result<(SceneSet, RejectsReport)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(h) => h.map_err(|e| Error::io(path, e))?,
        None => {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: "empty file (missing header)".into(),
            })
        }
    };
    let header = header.trim_start_matches('\u{feff}').trim_end_matches('\r');
    if header.split(',').ne(HEADER.iter().copied()) {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("header mismatch: expected {:?}", HEADER.join(",")),
        });
    }

    let mut set = SceneSet::default();
    let mut report = RejectsReport::default();
    for (idx, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        report.records_seen += 1;
        match parse_record(line) {
            Ok(frame) => set.insert(frame),
            Err(reason) => report.rejects.push(Reject {
                path: path.to_path_buf(),
                line: idx + 2,
                reason,
            }),
        }
    }
    if report.fraction() > MAX_REJECT_FRACTION {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!(
                "{} of {} records malformed (first: line {}: {})",
                report.rejects.len(),
                report.records_seen,
                report.rejects[0].line,
                report.rejects[0].reason
            ),
        });
    }
    set.sort();
    Ok((set, report))
}

/// Reads several files (in parallel) and merges them into one scene set.
///
/// The result does not depend on the order of `paths`. A record repeated with
/// the same (scene, agent, timestamp) key keeps its first occurrence in
/// sorted-path order; later copies are reported as rejects.
pub fn read_many(paths: &[PathBuf]) -> Result<(SceneSet, RejectsReport)> {
    let mut sorted: Vec<PathBuf> = paths.to_vec();
    sorted.sort();
    sorted.dedup();
    let parts: Vec<(SceneSet, RejectsReport)> =
        sorted.par_iter().map(|p| read_frames(p)).collect::<Result<Vec<_>>>()?;

    let mut merged = SceneSet::default();
    let mut report = RejectsReport::default();
    let mut seen: HashMap<(String, String, u64), ()> = HashMap::new();
    for (path, (set, rep)) in sorted.iter().zip(parts) {
        report.records_seen += rep.records_seen;
        report.rejects.extend(rep.rejects);
        for (_, frames) in set.scenes {
            for f in frames {
                let key = (f.scene_id.clone(), f.agent_id.clone(), f.timestamp.to_bits());
                if seen.insert(key, ()).is_some() {
                    report.rejects.push(Reject {
                        path: path.clone(),
                        line: 0,
                        reason: format!(
                            "duplicate frame for agent {} at {} in scene {}",
                            f.agent_id, f.timestamp, f.scene_id
                        ),
                    });
                    continue;
                }
                merged.insert(f);
            }
        }
    }
    merged.sort();
    Ok((merged, report))
}

pub fn write_frames<W: Write>(mut out: W, frames: &[AgentFrame]) -> std::io::Result<()> {
    writeln!(out, "{}", HEADER.join(","))?;
    for f in frames {
        writeln!(out, "{}", f.to_record())?;
    }
    Ok(())
}

pub fn write_frames_file(path: &Path, frames: &[AgentFrame]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_frames(&mut w, frames).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Where a stretch of a stitched track came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub scene_id: String,
    /// Indices into [`Track::frames`].
    pub frames: Range<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    /// Stable identity after stitching: `<first scene>/<first agent id>`.
    pub agent_id: String,
    pub is_av: bool,
    pub frames: Vec<AgentFrame>,
    pub provenance: Vec<Provenance>,
}

impl Track {
    pub fn start(&self) -> f64 {
        self.frames[0].timestamp
    }

    pub fn end(&self) -> f64 {
        self.frames[self.frames.len() - 1].timestamp
    }

    /// Index of the frame nearest to `t`, if one lies within `tolerance`.
    pub fn frame_near(&self, t: f64, tolerance: f64) -> Option<usize> {
        let i = self.frames.partition_point(|f| f.timestamp < t);
        let mut best: Option<(f64, usize)> = None;
        for j in [i.wrapping_sub(1), i] {
            if let Some(f) = self.frames.get(j) {
                let d = (f.timestamp - t).abs();
                if d <= tolerance && best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, j));
                }
            }
        }
        best.map(|(_, j)| j)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StitchConfig {
    /// Joins require `0 < t2 - t1 < max_gap`.
    pub max_gap: f64,
    /// Maximum distance between the successor's first position and the
    /// predecessor's extrapolated position.
    pub max_position_error: f64,
    pub min_class_prob: f64,
}

impl Default for StitchConfig {
    fn default() -> Self {
        Self {
            max_gap: 0.5,
            max_position_error: 2.0,
            min_class_prob: 0.5,
        }
    }
}

struct RawTrack {
    scene_id: String,
    agent_id: String,
    is_av: bool,
    frames: Vec<AgentFrame>,
}

impl RawTrack {
    fn last(&self) -> &AgentFrame {
        &self.frames[self.frames.len() - 1]
    }

    /// Position-derived velocity from the last two frames; zero otherwise.
    fn exit_velocity(&self) -> (f64, f64) {
        let n = self.frames.len();
        if n < 2 {
            return (0.0, 0.0);
        }
        let (a, b) = (&self.frames[n - 2], &self.frames[n - 1]);
        let dt = b.timestamp - a.timestamp;
        ((b.x - a.x) / dt, (b.y - a.y) / dt)
    }
}

fn split_scene(scene_id: &str, frames: &[AgentFrame]) -> Vec<RawTrack> {
    let mut by_agent: BTreeMap<&str, Vec<AgentFrame>> = BTreeMap::new();
    for f in frames {
        by_agent.entry(f.agent_id.as_str()).or_default().push(f.clone());
    }
    by_agent
        .into_iter()
        .map(|(agent, mut frames)| {
            frames.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
            frames.dedup_by(|b, a| a.timestamp == b.timestamp);
            RawTrack {
                scene_id: scene_id.to_string(),
                agent_id: agent.to_string(),
                is_av: frames.iter().any(|f| f.is_av),
                frames,
            }
        })
        .collect()
}

/// Splits scenes into per-agent tracks and joins tracks across adjacent scenes.
///
/// Track `A` (ending at `t1`, `p1`) may continue as track `B` of another scene
/// (starting at `t2`, `p2`) when `0 < t2 - t1 < max_gap`. Human-driven tracks
/// additionally need `|p2 - (p1 + v1 (t2 - t1))| < max_position_error` and a
/// car probability above `min_class_prob` at both ends; AV tracks join on the
/// time gate alone. Each track takes at most one successor and one
/// predecessor, assigned greedily by extrapolation error, then time gap, then
/// agent id.
pub fn stitch_tracks(scenes: &SceneSet, config: &StitchConfig) -> Vec<Track> {
    let raw: Vec<RawTrack> = scenes
        .scenes
        .iter()
        .flat_map(|(id, frames)| split_scene(id, frames))
        .filter(|t| !t.frames.is_empty())
        .collect();

    // candidate joins: (error, gap, pred ids, succ ids, pred idx, succ idx)
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| raw[a].frames[0].timestamp.total_cmp(&raw[b].frames[0].timestamp));
    let starts: Vec<f64> = order.iter().map(|&i| raw[i].frames[0].timestamp).collect();

    let mut edges = Vec::new();
    for (pi, pred) in raw.iter().enumerate() {
        let last = pred.last();
        let t1 = last.timestamp;
        let (vx, vy) = pred.exit_velocity();
        let lo = starts.partition_point(|&s| s <= t1);
        let hi = starts.partition_point(|&s| s < t1 + config.max_gap);
        for &si in &order[lo..hi] {
            let succ = &raw[si];
            if succ.scene_id == pred.scene_id || succ.is_av != pred.is_av {
                continue;
            }
            let first = &succ.frames[0];
            let gap = first.timestamp - t1;
            let ex = last.x + vx * gap;
            let ey = last.y + vy * gap;
            let err = ((first.x - ex).powi(2) + (first.y - ey).powi(2)).sqrt();
            if !pred.is_av
                && (err >= config.max_position_error
                    || last.class_prob_car <= config.min_class_prob
                    || first.class_prob_car <= config.min_class_prob)
            {
                continue;
            }
            edges.push((err, gap, pi, si));
        }
    }
    edges.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(a.1.total_cmp(&b.1))
            .then_with(|| raw[a.2].agent_id.cmp(&raw[b.2].agent_id))
            .then_with(|| raw[a.3].agent_id.cmp(&raw[b.3].agent_id))
            .then_with(|| raw[a.2].scene_id.cmp(&raw[b.2].scene_id))
            .then_with(|| raw[a.3].scene_id.cmp(&raw[b.3].scene_id))
    });
    let mut successor: Vec<Option<usize>> = vec![None; raw.len()];
    let mut has_pred: Vec<bool> = vec![false; raw.len()];
    for (_, _, p, s) in edges {
        if successor[p].is_none() && !has_pred[s] {
            successor[p] = Some(s);
            has_pred[s] = true;
        }
    }

    let mut tracks = Vec::new();
    for &head in &order {
        if has_pred[head] {
            continue;
        }
        let mut frames = Vec::new();
        let mut provenance = Vec::new();
        let mut visited = BTreeSet::new();
        let mut cur = Some(head);
        while let Some(i) = cur {
            if !visited.insert(i) {
                break;
            }
            let r = &raw[i];
            let start = frames.len();
            frames.extend(r.frames.iter().cloned());
            provenance.push(Provenance {
                scene_id: r.scene_id.clone(),
                frames: start..frames.len(),
            });
            cur = successor[i];
        }
        tracks.push(Track {
            agent_id: format!("{}/{}", raw[head].scene_id, raw[head].agent_id),
            is_av: raw[head].is_av,
            frames,
            provenance,
        });
    }
    tracks.sort_by(|a, b| a.agent_id.cmp(&b.agent_id));
    tracks
}
