//! Read-only report over a finished run directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::pipeline::run::{
    EnhancedMeta, Manifest, ASSESSMENT_HEADER, ENHANCED_HEADER, INDEX_HEADER, MANIFEST, RAW_HEADER, SUMMARY_HEADER,
};

const DATASETS: [&str; 2] = ["H-A", "H-H"];

fn integrity(path: &Path, reason: impl Into<String>) -> Error {
    Error::Integrity {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Header and records of a CSV artifact; every record must have the
/// header's field count.
fn read_table(path: &Path, expected_header: &str) -> Result<Vec<csv::StringRecord>> {
    if !path.is_file() {
        return Err(integrity(path, "missing artifact"));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| integrity(path, e.to_string()))?;
    let header = rdr.headers().map_err(|e| integrity(path, e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>().join(",") != expected_header {
        return Err(integrity(path, format!("header is not {expected_header}")));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| integrity(path, e.to_string()))?;
        if rec.len() != header.len() {
            return Err(integrity(
                path,
                format!("row {} has {} fields, expected {}", i + 2, rec.len(), header.len()),
            ));
        }
        rows.push(rec);
    }
    Ok(rows)
}

fn num<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, i: usize) -> Result<T> {
    rec.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| integrity(path, format!("unparsable field {} in {:?}", i + 1, rec)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRow {
    pub dataset: String,
    pub pairs: usize,
    pub distance_km: f64,
    pub duration_h: f64,
}

/// Frame-weighted anomaly fractions of one (phase, dataset) cell; `None`
/// when the stage was not run or the subset is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyRow {
    pub phase: String,
    pub dataset: String,
    pub frames: usize,
    pub fractions: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeSummary {
    /// dataset -> regime code -> share of time.
    pub proportions: BTreeMap<String, BTreeMap<String, f64>>,
    /// dataset -> group -> share of labelled pairs.
    pub adf: BTreeMap<String, Vec<(String, f64)>>,
    /// dataset -> threshold, empty when not computed.
    pub thresholds: BTreeMap<String, Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub datasets: Vec<DatasetRow>,
    pub anomalies: Vec<AnomalyRow>,
    pub regimes: Option<RegimeSummary>,
    pub failures: usize,
}

struct IndexRow {
    pair_id: String,
    dataset: &'static str,
    n_frames: usize,
}

fn read_index(dir: &Path) -> Result<Vec<IndexRow>> {
    let path = dir.join("pairs").join("index.csv");
    let rows = read_table(&path, INDEX_HEADER)?;
    let mut seen = BTreeSet::new();
    rows.iter()
        .map(|r| {
            let pair_id = r[0].to_string();
            if !seen.insert(pair_id.clone()) {
                return Err(integrity(&path, format!("duplicate pair id {pair_id}")));
            }
            let dataset = match &r[1] {
                "AV" => DATASETS[0],
                "HV" => DATASETS[1],
                other => return Err(integrity(&path, format!("unknown leader type {other}"))),
            };
            Ok(IndexRow {
                pair_id,
                dataset,
                n_frames: num(&path, r, 5)?,
            })
        })
        .collect()
}

fn check_series(path: &Path, header: &str, expected_rows: usize) -> Result<()> {
    let rows = read_table(path, header)?;
    if rows.len() != expected_rows {
        return Err(integrity(
            path,
            format!("{} rows, expected {expected_rows}", rows.len()),
        ));
    }
    for r in &rows {
        // payload columns may be empty (missing speed or size), never garbled
        if r.iter().any(|f| !f.is_empty() && f.parse::<f64>().is_err()) {
            return Err(integrity(path, format!("non-numeric record {r:?}")));
        }
    }
    Ok(())
}

fn listed_files(dir: &Path, suffix: &str) -> Result<BTreeSet<String>> {
    let mut out = BTreeSet::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    for e in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let name = e
            .map_err(|e| Error::io(dir, e))?
            .file_name()
            .to_string_lossy()
            .into_owned();
        if let Some(id) = name.strip_suffix(suffix) {
            if !id.contains('.') {
                out.insert(id.to_string());
            }
        }
    }
    Ok(out)
}

fn anomaly_rows(path: &Path, phase: &str, dataset_of: &BTreeMap<&str, &str>) -> Result<Vec<AnomalyRow>> {
    let table = if path.is_file() {
        Some(read_table(path, ASSESSMENT_HEADER)?)
    } else {
        None
    };
    let mut acc: BTreeMap<&str, (usize, [f64; 3])> = BTreeMap::new();
    if let Some(rows) = &table {
        for r in rows {
            let ds = dataset_of
                .get(&r[0])
                .ok_or_else(|| integrity(path, format!("pair {} not in index", &r[0])))?;
            let n: usize = num(path, r, 6)?;
            let e = acc.entry(ds).or_insert((0, [0.0; 3]));
            e.0 += n;
            for k in 0..3 {
                e.1[k] += num::<f64>(path, r, 3 + k)? * n as f64;
            }
        }
    }
    Ok(DATASETS
        .iter()
        .map(|ds| {
            let (frames, sums) = acc.get(ds).copied().unwrap_or((0, [0.0; 3]));
            AnomalyRow {
                phase: phase.to_string(),
                dataset: ds.to_string(),
                frames,
                fractions: (table.is_some() && frames > 0).then(|| sums.map(|s| s / frames as f64)),
            }
        })
        .collect())
}

fn regime_summary(dir: &Path) -> Result<Option<RegimeSummary>> {
    let props_path = dir.join("regime_proportions.csv");
    if !props_path.is_file() {
        return Ok(None);
    }
    let mut proportions: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for r in read_table(&props_path, "dataset,regime,fraction")? {
        proportions
            .entry(r[0].to_string())
            .or_default()
            .insert(r[1].to_string(), num(&props_path, &r, 2)?);
    }
    let adf_path = dir.join("adf_groups.csv");
    let mut counts: BTreeMap<String, Vec<(String, usize)>> = BTreeMap::new();
    for r in read_table(&adf_path, "dataset,group,count")? {
        counts
            .entry(r[0].to_string())
            .or_default()
            .push((r[1].to_string(), num(&adf_path, &r, 2)?));
    }
    let adf = counts
        .into_iter()
        .map(|(ds, groups)| {
            let total: usize = groups.iter().map(|g| g.1).sum();
            let shares = groups
                .into_iter()
                .map(|(g, n)| (g, if total > 0 { n as f64 / total as f64 } else { 0.0 }))
                .collect();
            (ds, shares)
        })
        .collect();
    let th_path = dir.join("regime_thresholds.csv");
    let mut thresholds = BTreeMap::new();
    for r in read_table(&th_path, "dataset,n_fits,tau_mean,tau_std,k,tau_star")? {
        thresholds.insert(r[0].to_string(), r[5].parse().ok());
    }
    Ok(Some(RegimeSummary {
        proportions,
        adf,
        thresholds,
    }))
}

/// Validates the artifacts of a run and aggregates them.
pub fn summarize(dir: &Path) -> Result<RunSummary> {
    let manifest_path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| integrity(&manifest_path, e.to_string()))?;
    if !manifest.stages.select {
        return Err(integrity(&manifest_path, "run did not select pairs"));
    }

    let index = read_index(dir)?;
    let raw_dir = dir.join("pairs").join("raw");
    for row in &index {
        check_series(&raw_dir.join(format!("{}.csv", row.pair_id)), RAW_HEADER, row.n_frames)?;
    }
    let indexed: BTreeSet<String> = index.iter().map(|r| r.pair_id.clone()).collect();
    if let Some(extra) = listed_files(&raw_dir, ".csv")?.difference(&indexed).next() {
        return Err(integrity(
            &raw_dir.join(format!("{extra}.csv")),
            "raw series not in index",
        ));
    }

    if manifest.stages.enhance {
        let enh_dir = dir.join("enhanced");
        let failed: BTreeSet<&str> = manifest
            .failures
            .iter()
            .filter(|f| f.stage == "enhance")
            .map(|f| f.subject.as_str())
            .collect();
        for row in &index {
            let csv_path = enh_dir.join(format!("{}.csv", row.pair_id));
            let meta_path = enh_dir.join(format!("{}.meta.json", row.pair_id));
            if failed.contains(row.pair_id.as_str()) {
                if csv_path.exists() {
                    return Err(integrity(
                        &csv_path,
                        "enhanced series for a pair whose enhancement failed",
                    ));
                }
                continue;
            }
            let meta_text =
                std::fs::read_to_string(&meta_path).map_err(|_| integrity(&meta_path, "missing artifact"))?;
            let meta: EnhancedMeta =
                serde_json::from_str(&meta_text).map_err(|e| integrity(&meta_path, e.to_string()))?;
            check_series(&csv_path, ENHANCED_HEADER, meta.n_frames)?;
        }
        if let Some(extra) = listed_files(&enh_dir, ".csv")?.difference(&indexed).next() {
            return Err(integrity(
                &enh_dir.join(format!("{extra}.csv")),
                "enhanced series not in index",
            ));
        }
    }

    let summary_path = dir.join("summary.csv");
    let mut datasets = Vec::new();
    for r in read_table(&summary_path, SUMMARY_HEADER)? {
        datasets.push(DatasetRow {
            dataset: r[0].to_string(),
            pairs: num(&summary_path, &r, 1)?,
            distance_km: num(&summary_path, &r, 2)?,
            duration_h: num(&summary_path, &r, 3)?,
        });
    }
    for d in &datasets {
        let n = index.iter().filter(|r| r.dataset == d.dataset).count();
        if n != d.pairs {
            return Err(integrity(
                &summary_path,
                format!("{} lists {} pairs, index has {n}", d.dataset, d.pairs),
            ));
        }
    }

    let dataset_of: BTreeMap<&str, &str> = index.iter().map(|r| (r.pair_id.as_str(), r.dataset)).collect();
    let mut anomalies = anomaly_rows(&dir.join("assessment_raw.csv"), "raw", &dataset_of)?;
    anomalies.extend(anomaly_rows(
        &dir.join("assessment_enhanced.csv"),
        "enhanced",
        &dataset_of,
    )?);

    let regimes = if manifest.stages.regime {
        regime_summary(dir)?
    } else {
        None
    };
    Ok(RunSummary {
        datasets,
        anomalies,
        regimes,
        failures: manifest.failures.len(),
    })
}

fn pct(v: f64) -> String {
    format!("{:.3}%", 100.0 * v)
}

impl fmt::Display for RunSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "pairs")?;
        writeln!(
            f,
            "  {:<8} {:>7} {:>12} {:>11}",
            "dataset", "pairs", "distance_km", "duration_h"
        )?;
        for d in &self.datasets {
            writeln!(
                f,
                "  {:<8} {:>7} {:>12.3} {:>11.3}",
                d.dataset, d.pairs, d.distance_km, d.duration_h
            )?;
        }
        writeln!(f, "anomalies")?;
        writeln!(
            f,
            "  {:<9} {:<8} {:>8} {:>10} {:>10} {:>10}",
            "phase", "dataset", "frames", "acc", "jerk", "jsi"
        )?;
        for r in &self.anomalies {
            let [a, j, s] = match r.fractions {
                Some(fr) => fr.map(pct),
                None => ["not computed".to_string(), String::new(), String::new()],
            };
            writeln!(
                f,
                "  {:<9} {:<8} {:>8} {:>10} {:>10} {:>10}",
                r.phase, r.dataset, r.frames, a, j, s
            )?;
        }
        writeln!(f, "regimes")?;
        match &self.regimes {
            None => writeln!(f, "  not computed")?,
            Some(rs) => {
                for ds in DATASETS {
                    let tau = match rs.thresholds.get(ds).copied().flatten() {
                        Some(t) => format!("{t:.3} s"),
                        None => "not computed".into(),
                    };
                    writeln!(f, "  {ds} threshold {tau}")?;
                    if let Some(p) = rs.proportions.get(ds) {
                        let parts: Vec<String> = p.iter().map(|(r, v)| format!("{r} {}", pct(*v))).collect();
                        writeln!(f, "    time share  {}", parts.join("  "))?;
                    }
                    if let Some(g) = rs.adf.get(ds) {
                        let parts: Vec<String> = g.iter().map(|(name, v)| format!("{name} {}", pct(*v))).collect();
                        writeln!(f, "    pair groups {}", parts.join("  "))?;
                    }
                }
            }
        }
        writeln!(f, "failures: {}", self.failures)
    }
}
