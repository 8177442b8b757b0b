//! End-to-end run: ingest, select, assess, enhance, re-assess, regimes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assess::{self, AnomalyReport, Source};
use crate::enhance::{self, EnhancedPair, EnhancedVehicle};
use crate::error::{Error, Result};
use crate::ingest;
use crate::pipeline::config::{PipelineConfig, StageToggles};
use crate::regime::{self, AdfClass, NewellFit, Regime, RegimeInput, RegimeSequence};
use crate::select::{self, CFPair, LeaderType};
use crate::trajkit::TimeSeries;

pub const INDEX_HEADER: &str = "pair_id,leader_type,t_start,t_end,duration,n_frames,mean_gap";
pub const RAW_HEADER: &str = "t,x_lead,v_lead,yaw_lead,length_lead,width_lead,x_fol,v_fol,yaw_fol,length_fol,width_fol";
pub const ENHANCED_HEADER: &str = "t,x_lead,v_lead,a_lead,j_lead,x_fol,v_fol,a_fol,j_fol";
pub const ASSESSMENT_HEADER: &str = "pair_id,vehicle,source,frac_acc,frac_jerk,frac_jsi,n_frames";
pub const SUMMARY_HEADER: &str = "dataset,pairs,distance_km,duration_h";
pub const MANIFEST: &str = "manifest.json";

/// Highest `n` reported as its own ADF group.
const ADF_GROUPS: usize = 4;
/// Bin width of the exported time-gap histogram, s.
const TAU_BIN: f64 = 0.1;

/// Directories and files owned by a run and cleared before it starts.
const MANAGED_DIRS: [&str; 3] = ["pairs", "enhanced", "regime"];
const MANAGED_FILES: [&str; 13] = [
    "ingest_rejects.csv",
    "selection_rejections.csv",
    "summary.csv",
    "assessment_raw.csv",
    "assessment_enhanced.csv",
    "newell_fits.csv",
    "regime_thresholds.csv",
    "regime_proportions.csv",
    "adf_groups.csv",
    "tau_histogram.csv",
    "failures.csv",
    "config.resolved.toml",
    MANIFEST,
];

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub scene_files: usize,
    pub records: usize,
    pub rejected_records: usize,
    pub tracks: usize,
    pub candidates: usize,
    pub pairs_ha: usize,
    pub pairs_hh: usize,
    pub av_followers: usize,
    pub assessed_raw: usize,
    pub enhanced: usize,
    pub assessed_enhanced: usize,
    pub newell_fits: usize,
    pub labelled: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: String,
    /// Pair id, or dataset name for dataset-level failures.
    pub subject: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub created_unix: u64,
    pub stages: StageToggles,
    pub counts: StageCounts,
    pub failures: Vec<StageFailure>,
    pub threshold_k: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub output_dir: PathBuf,
    pub counts: StageCounts,
    pub failures: Vec<StageFailure>,
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn raw_csv(p: &CFPair) -> String {
    let mut out = String::with_capacity(64 * (p.len() + 1));
    out.push_str(RAW_HEADER);
    out.push('\n');
    for i in 0..p.len() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            p.time[i],
            p.x_lead[i],
            opt(p.v_lead[i]),
            p.yaw_lead[i],
            opt(p.length_lead[i]),
            opt(p.width_lead[i]),
            p.x_fol[i],
            opt(p.v_fol[i]),
            p.yaw_fol[i],
            opt(p.length_fol[i]),
            opt(p.width_fol[i]),
        );
    }
    out
}

fn enhanced_csv(p: &EnhancedPair) -> String {
    let mut out = String::with_capacity(96 * (p.len() + 1));
    out.push_str(ENHANCED_HEADER);
    out.push('\n');
    let (l, f) = (&p.lead, &p.fol);
    for i in 0..p.len() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            p.t[i], l.x[i], l.v[i], l.a[i], l.j[i], f.x[i], f.v[i], f.a[i], f.j[i]
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleMeta {
    pub length: f64,
    pub width: f64,
    pub sigma_a: f64,
    pub artifacts: Vec<f64>,
    pub fill_intervals: Vec<enhance::FillInterval>,
}

/// Sidecar record of an enhanced pair file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhancedMeta {
    pub pair_id: String,
    pub leader_type: String,
    pub n_frames: usize,
    pub leader: VehicleMeta,
    pub follower: VehicleMeta,
}

fn vehicle_meta(v: &EnhancedVehicle) -> VehicleMeta {
    VehicleMeta {
        length: v.length,
        width: v.width,
        sigma_a: v.sigma_a,
        artifacts: v.artifacts.clone(),
        fill_intervals: v.fills.clone(),
    }
}

fn enhanced_meta(p: &EnhancedPair) -> EnhancedMeta {
    EnhancedMeta {
        pair_id: p.pair_id.clone(),
        leader_type: p.leader_type.label().to_string(),
        n_frames: p.len(),
        leader: vehicle_meta(&p.lead),
        follower: vehicle_meta(&p.fol),
    }
}

/// Raw assessment: v-based where every speed sample is present, x-based otherwise.
pub fn assess_raw_vehicle(
    t: &[f64],
    x: &[f64],
    v: &[Option<f64>],
    limits: &assess::KinematicLimits,
) -> Result<AnomalyReport> {
    match v.iter().copied().collect::<Option<Vec<f64>>>() {
        Some(speed) => assess::kinematic_anomalies(&TimeSeries::new(t.to_vec(), speed)?, Source::VBased, limits),
        None => assess::kinematic_anomalies(&TimeSeries::new(t.to_vec(), x.to_vec())?, Source::XBased, limits),
    }
}

pub fn assess_raw_pair(p: &CFPair, limits: &assess::KinematicLimits) -> Result<[AnomalyReport; 2]> {
    Ok([
        assess_raw_vehicle(&p.time, &p.x_lead, &p.v_lead, limits)?,
        assess_raw_vehicle(&p.time, &p.x_fol, &p.v_fol, limits)?,
    ])
}

/// Enhanced assessment on the denoised acceleration.
pub fn assess_enhanced_pair(p: &EnhancedPair, limits: &assess::KinematicLimits) -> Result<[AnomalyReport; 2]> {
    let one =
        |a: &[f64]| assess::kinematic_anomalies(&TimeSeries::new(p.t.clone(), a.to_vec())?, Source::AccelBased, limits);
    Ok([one(&p.lead.a)?, one(&p.fol.a)?])
}

fn assessment_rows(out: &mut String, pair_id: &str, reports: &[AnomalyReport; 2]) {
    for (vehicle, r) in ["leader", "follower"].iter().zip(reports) {
        let _ = writeln!(
            out,
            "{pair_id},{vehicle},{},{},{},{},{}",
            r.source.label(),
            r.frac_acc_anomaly(),
            r.frac_jerk_anomaly(),
            r.frac_jsi_anomaly(),
            r.n_frames
        );
    }
}

fn dataset_summary(pairs: &[&CFPair]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for lt in [LeaderType::Av, LeaderType::Hv] {
        let subset: Vec<&&CFPair> = pairs.iter().filter(|p| p.leader_type == lt).collect();
        let distance: f64 = subset.iter().map(|p| p.x_fol[p.len() - 1] - p.x_fol[0]).sum();
        let duration: f64 = subset.iter().map(|p| p.duration()).sum();
        let _ = writeln!(
            out,
            "{},{},{},{}",
            lt.dataset(),
            subset.len(),
            distance / 1000.0,
            duration / 3600.0
        );
    }
    out
}

/// Labels one enhanced pair given its dataset threshold.
pub fn label_pair(p: &EnhancedPair, tau_star: f64, cfg: &regime::RegimeConfig) -> Result<RegimeSequence> {
    let v = TimeSeries::new(p.t.clone(), p.fol.v.clone())?;
    let a = TimeSeries::new(p.t.clone(), p.fol.a.clone())?;
    let sections = regime::segment_speed_profile(&v, &a, cfg)?;
    regime::label_regimes(&sections, &RegimeInput::from(p), tau_star, cfg)
}

struct Collector {
    failures: Vec<StageFailure>,
}

impl Collector {
    fn fail(&mut self, stage: &str, subject: &str, e: &Error) {
        self.failures.push(StageFailure {
            stage: stage.into(),
            subject: subject.into(),
            reason: e.to_string(),
        });
    }
}

/// Runs every enabled stage on a pool of `config.run.workers` threads.
pub fn run(config: &PipelineConfig) -> Result<RunReport> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.run.workers)
        .build()
        .map_err(|e| Error::Numerical(format!("thread pool: {e}")))?;
    pool.install(|| run_stages(config))
}

fn run_stages(cfg: &PipelineConfig) -> Result<RunReport> {
    let files = cfg.resolve_inputs()?;
    let out = cfg.output.dir.clone();
    create_dir(&out)?;
    for d in MANAGED_DIRS {
        let p = out.join(d);
        if p.exists() {
            fs::remove_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
    }
    for f in MANAGED_FILES {
        let p = out.join(f);
        if p.is_file() {
            fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
        }
    }
    let mut counts = StageCounts {
        scene_files: files.len(),
        ..StageCounts::default()
    };
    let mut log = Collector { failures: Vec::new() };

    let (scenes, rejects) = ingest::read_many(&files)?;
    counts.records = rejects.records_seen;
    counts.rejected_records = rejects.rejects.len();
    let mut body = String::from("path,line,reason\n");
    for r in &rejects.rejects {
        let _ = writeln!(body, "{},{},{}", r.path.display(), r.line, r.reason.replace(',', ";"));
    }
    write_file(&out.join("ingest_rejects.csv"), &body)?;

    let tracks = ingest::stitch_tracks(&scenes, &cfg.stitch);
    counts.tracks = tracks.len();
    drop(scenes);

    if cfg.stages.select {
        let sel = select::extract_pairs(&tracks, &cfg.selection);
        counts.candidates = sel.candidates;
        counts.pairs_ha = sel.ha.len();
        counts.pairs_hh = sel.hh.len();
        counts.av_followers = sel.av_followers;
        let pairs: Vec<&CFPair> = sel.all_pairs().collect();
        write_selection(&out, &sel, &pairs)?;
        write_file(&out.join("summary.csv"), &dataset_summary(&pairs))?;

        if cfg.stages.assess {
            let reports: Vec<Result<[AnomalyReport; 2]>> =
                pairs.par_iter().map(|p| assess_raw_pair(p, &cfg.limits)).collect();
            let mut body = format!("{ASSESSMENT_HEADER}\n");
            for (p, r) in pairs.iter().zip(&reports) {
                match r {
                    Ok(r) => {
                        assessment_rows(&mut body, &p.pair_id, r);
                        counts.assessed_raw += 1;
                    }
                    Err(e) => log.fail("assess_raw", &p.pair_id, e),
                }
            }
            write_file(&out.join("assessment_raw.csv"), &body)?;
        }

        if cfg.stages.enhance {
            let enhanced = enhance_all(cfg, &out, &pairs, &mut counts, &mut log)?;
            if cfg.stages.regime {
                run_regimes(cfg, &out, &enhanced, &mut counts, &mut log)?;
            }
        }
    }

    let mut body = String::from("stage,subject,reason\n");
    for f in &log.failures {
        let _ = writeln!(body, "{},{},{}", f.stage, f.subject, f.reason.replace(',', ";"));
    }
    write_file(&out.join("failures.csv"), &body)?;

    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: cfg.fingerprint(),
        created_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        stages: cfg.stages,
        counts: counts.clone(),
        failures: log.failures.clone(),
        threshold_k: cfg.regime.threshold_k,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Numerical(e.to_string()))?;
    write_file(&out.join(MANIFEST), &text)?;
    let resolved = toml::to_string_pretty(cfg).map_err(|e| Error::Numerical(e.to_string()))?;
    write_file(&out.join("config.resolved.toml"), &resolved)?;

    Ok(RunReport {
        output_dir: out,
        counts,
        failures: log.failures,
    })
}

fn write_selection(out: &Path, sel: &select::SelectionOutput, pairs: &[&CFPair]) -> Result<()> {
    let raw_dir = out.join("pairs").join("raw");
    create_dir(&raw_dir)?;
    let mut index = format!("{INDEX_HEADER}\n");
    for p in pairs {
        let _ = writeln!(
            index,
            "{},{},{},{},{},{},{}",
            p.pair_id,
            p.leader_type.label(),
            p.t_start(),
            p.t_end(),
            p.duration(),
            p.len(),
            p.mean_gap()
        );
    }
    write_file(&out.join("pairs").join("index.csv"), &index)?;
    pairs
        .par_iter()
        .map(|p| write_file(&raw_dir.join(format!("{}.csv", p.pair_id)), &raw_csv(p)))
        .collect::<Result<Vec<()>>>()?;

    let mut body = String::from("leader,follower,rule,t\n");
    for r in &sel.rejections {
        let _ = writeln!(body, "{},{},{},{}", r.leader, r.follower, r.rule, r.t);
    }
    write_file(&out.join("selection_rejections.csv"), &body)
}

fn enhance_all(
    cfg: &PipelineConfig,
    out: &Path,
    pairs: &[&CFPair],
    counts: &mut StageCounts,
    log: &mut Collector,
) -> Result<Vec<EnhancedPair>> {
    let dir = out.join("enhanced");
    create_dir(&dir)?;
    let specs = cfg.enhance_specs();
    let results: Vec<Result<EnhancedPair>> = pairs
        .par_iter()
        .map(|p| {
            let e = enhance::enhance_pair(p, &specs)?;
            write_file(&dir.join(format!("{}.csv", e.pair_id)), &enhanced_csv(&e))?;
            let meta = serde_json::to_string_pretty(&enhanced_meta(&e)).map_err(|e| Error::Numerical(e.to_string()))?;
            write_file(&dir.join(format!("{}.meta.json", e.pair_id)), &meta)?;
            Ok(e)
        })
        .collect();
    let mut enhanced = Vec::with_capacity(results.len());
    for (p, r) in pairs.iter().zip(results) {
        match r {
            Ok(e) => enhanced.push(e),
            Err(e @ Error::Io { .. }) => return Err(e),
            Err(e) => log.fail("enhance", &p.pair_id, &e),
        }
    }
    counts.enhanced = enhanced.len();

    if cfg.stages.assess {
        let reports: Vec<Result<[AnomalyReport; 2]>> = enhanced
            .par_iter()
            .map(|p| assess_enhanced_pair(p, &cfg.limits))
            .collect();
        let mut body = format!("{ASSESSMENT_HEADER}\n");
        for (p, r) in enhanced.iter().zip(&reports) {
            match r {
                Ok(r) => {
                    assessment_rows(&mut body, &p.pair_id, r);
                    counts.assessed_enhanced += 1;
                }
                Err(e) => log.fail("assess_enhanced", &p.pair_id, e),
            }
        }
        write_file(&out.join("assessment_enhanced.csv"), &body)?;
    }
    Ok(enhanced)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn run_regimes(
    cfg: &PipelineConfig,
    out: &Path,
    enhanced: &[EnhancedPair],
    counts: &mut StageCounts,
    log: &mut Collector,
) -> Result<()> {
    let rc = &cfg.regime;
    let dir = out.join("regime");
    create_dir(&dir)?;
    let fits: Vec<Result<NewellFit>> = enhanced.par_iter().map(|p| regime::calibrate_pair(p, rc)).collect();

    let mut fits_csv = String::from("pair_id,dataset,tau,delta,rmse_fit,at_boundary\n");
    // pair order is pair_id order, so each subset reduces in id order
    let mut by_set: BTreeMap<&str, Vec<(&EnhancedPair, NewellFit)>> = BTreeMap::new();
    for (p, f) in enhanced.iter().zip(fits) {
        match f {
            Ok(f) => {
                let _ = writeln!(
                    fits_csv,
                    "{},{},{},{},{},{}",
                    p.pair_id,
                    p.leader_type.dataset(),
                    f.tau,
                    f.delta,
                    f.rmse_fit,
                    f.at_boundary
                );
                by_set.entry(p.leader_type.dataset()).or_default().push((p, f));
            }
            Err(e) => log.fail("newell", &p.pair_id, &e),
        }
    }
    counts.newell_fits = by_set.values().map(Vec::len).sum();
    write_file(&out.join("newell_fits.csv"), &fits_csv)?;

    let mut thresholds = String::from("dataset,n_fits,tau_mean,tau_std,k,tau_star\n");
    let mut proportions = String::from("dataset,regime,fraction\n");
    let mut adf = String::from("dataset,group,count\n");
    let mut hist = String::from("dataset,bin_start,bin_end,count\n");
    for lt in [LeaderType::Av, LeaderType::Hv] {
        let name = lt.dataset();
        let members = by_set.get(name).map(Vec::as_slice).unwrap_or(&[]);
        let taus: Vec<f64> = members.iter().map(|(_, f)| f.tau).collect();
        for (bin, n) in regime::tau_histogram(&taus, TAU_BIN) {
            let _ = writeln!(
                hist,
                "{name},{:.2},{:.2},{n}",
                bin as f64 * TAU_BIN,
                (bin + 1) as f64 * TAU_BIN
            );
        }
        let tau_star = match regime::fleet_gap_threshold(&taus, rc.threshold_k, rc.min_fits) {
            Ok(t) => t,
            Err(e) => {
                log.fail("regime", name, &e);
                let _ = writeln!(thresholds, "{name},{},,,{},", taus.len(), rc.threshold_k);
                continue;
            }
        };
        let (mean, std) = mean_std(&taus);
        let _ = writeln!(
            thresholds,
            "{name},{},{mean},{std},{},{tau_star}",
            taus.len(),
            rc.threshold_k
        );

        let labelled: Vec<Result<RegimeSequence>> = members
            .par_iter()
            .map(|(p, _)| {
                let seq = label_pair(p, tau_star, rc)?;
                let mut body = String::from("t,label\n");
                for (t, l) in seq.t.iter().zip(&seq.labels) {
                    let _ = writeln!(body, "{t},{l}");
                }
                write_file(&dir.join(format!("{}.csv", p.pair_id)), &body)?;
                Ok(seq)
            })
            .collect();
        let mut seqs = Vec::new();
        for ((p, _), r) in members.iter().zip(labelled) {
            match r {
                Ok(s) => seqs.push(s),
                Err(e @ Error::Io { .. }) => return Err(e),
                Err(e) => log.fail("regime", &p.pair_id, &e),
            }
        }
        counts.labelled += seqs.len();
        match regime::regime_time_proportions(&seqs) {
            Ok(props) => {
                for r in Regime::ALL {
                    let _ = writeln!(proportions, "{name},{r},{}", props[&r]);
                }
            }
            Err(e) => log.fail("regime", name, &e),
        }
        let mut groups: BTreeMap<AdfClass, usize> = (0..=ADF_GROUPS).map(|n| (AdfClass::Adf(n), 0)).collect();
        groups.insert(AdfClass::Others, 0);
        for s in &seqs {
            *groups.entry(regime::classify_adf(s)).or_insert(0) += 1;
        }
        for (g, n) in groups {
            let _ = writeln!(adf, "{name},{g},{n}");
        }
    }
    write_file(&out.join("regime_thresholds.csv"), &thresholds)?;
    write_file(&out.join("regime_proportions.csv"), &proportions)?;
    write_file(&out.join("adf_groups.csv"), &adf)?;
    write_file(&out.join("tau_histogram.csv"), &hist)
}
