use std::path::Path;

use cfkit::pipeline::{self, PipelineConfig, RunSummary};
use cfkit::synth::{self, ArtifactSpec, CorpusSpec, NoiseSpec};
use cfkit::Error;

fn config(scenes: &Path, out: &Path, extra: &str) -> PipelineConfig {
    let text = format!(
        "[input]\npaths = [{:?}]\n[output]\ndir = {:?}\n{extra}",
        scenes.display().to_string(),
        out.display().to_string()
    );
    PipelineConfig::from_toml_str(&text).unwrap()
}

fn corpus(dir: &Path, spec: CorpusSpec) {
    synth::write_corpus(&synth::corpus_scenarios(&spec), dir).unwrap();
}

fn follower_distance_km(out: &Path) -> f64 {
    let mut total = 0.0;
    for e in std::fs::read_dir(out.join("pairs").join("raw")).unwrap() {
        let mut rdr = csv::Reader::from_path(e.unwrap().path()).unwrap();
        let xs: Vec<f64> = rdr.records().map(|r| r.unwrap()[6].parse().unwrap()).collect();
        total += xs[xs.len() - 1] - xs[0];
    }
    total / 1000.0
}

fn indexed_duration_h(out: &Path) -> f64 {
    let mut rdr = csv::Reader::from_path(out.join("pairs").join("index.csv")).unwrap();
    rdr.records()
        .map(|r| r.unwrap()[4].parse::<f64>().unwrap())
        .sum::<f64>()
        / 3600.0
}

fn total_pairs(s: &RunSummary) -> usize {
    s.datasets.iter().map(|d| d.pairs).sum()
}

#[test]
fn summary_matches_the_generated_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let spec = CorpusSpec {
        n_pairs: 50,
        duration: 30.0,
        seed: 11,
        ..CorpusSpec::default()
    };
    corpus(&dir.path().join("corpus"), spec);
    let out = dir.path().join("out");
    let report = pipeline::run(&config(&dir.path().join("corpus/scenes"), &out, "")).unwrap();
    assert_eq!(report.counts.scene_files, 50);

    let s = pipeline::summarize(&out).unwrap();
    assert_eq!(total_pairs(&s), 50);
    let km: f64 = s.datasets.iter().map(|d| d.distance_km).sum();
    assert!((km - follower_distance_km(&out)).abs() < 1e-9, "{km}");
    let hours: f64 = s.datasets.iter().map(|d| d.duration_h).sum();
    assert!((hours - indexed_duration_h(&out)).abs() < 1e-9, "{hours}");
    assert!(hours <= 50.0 * 30.0 / 3600.0 + 1e-9);

    assert_eq!(s.anomalies.len(), 4);
    let phases: Vec<(&str, &str)> = s
        .anomalies
        .iter()
        .map(|a| (a.phase.as_str(), a.dataset.as_str()))
        .collect();
    assert_eq!(phases[0].0, "raw");
    assert_eq!(phases[3].0, "enhanced");
    assert_ne!(phases[0].1, phases[1].1);
    for a in &s.anomalies {
        let f = a.fractions.unwrap();
        assert!(f.iter().all(|x| (0.0..=1.0).contains(x)));
    }
    // 50 short pairs split across two datasets leave too few Newell fits for a threshold
    assert!(s.failures > 0);
}

#[test]
fn empty_input_directory_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = dir.path().join("scenes");
    std::fs::create_dir(&scenes).unwrap();
    let err = pipeline::run(&config(&scenes, &dir.path().join("out"), "")).unwrap_err();
    assert!(matches!(err, Error::InsufficientData(_)), "{err}");
    assert!(err.to_string().contains("no scene files"), "{err}");
}

#[test]
fn disabled_regime_stage_is_not_computed() {
    let dir = tempfile::tempdir().unwrap();
    corpus(
        &dir.path().join("corpus"),
        CorpusSpec {
            n_pairs: 4,
            duration: 30.0,
            ..CorpusSpec::default()
        },
    );
    let out = dir.path().join("out");
    pipeline::run(&config(
        &dir.path().join("corpus/scenes"),
        &out,
        "[stages]\nregime = false\n",
    ))
    .unwrap();
    let s = pipeline::summarize(&out).unwrap();
    assert!(s.regimes.is_none());
    assert!(s.to_string().contains("not computed"));
}

#[test]
fn truncated_enhanced_series_fails_integrity() {
    let dir = tempfile::tempdir().unwrap();
    corpus(
        &dir.path().join("corpus"),
        CorpusSpec {
            n_pairs: 3,
            duration: 30.0,
            ..CorpusSpec::default()
        },
    );
    let out = dir.path().join("out");
    pipeline::run(&config(&dir.path().join("corpus/scenes"), &out, "")).unwrap();
    pipeline::summarize(&out).unwrap();

    let victim = std::fs::read_dir(out.join("enhanced"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|x| x == "csv"))
        .unwrap();
    let text = std::fs::read_to_string(&victim).unwrap();
    let cut = text.len() - text.len() / 3;
    std::fs::write(&victim, &text[..cut]).unwrap();

    let err = pipeline::summarize(&out).unwrap_err();
    assert!(matches!(err, Error::Integrity { .. }), "{err}");
    let name = victim.file_name().unwrap().to_string_lossy().into_owned();
    assert!(err.to_string().contains(&name), "{err}");
}

#[test]
fn rerun_replaces_previous_outputs() {
    let dir = tempfile::tempdir().unwrap();
    corpus(
        &dir.path().join("corpus"),
        CorpusSpec {
            n_pairs: 3,
            duration: 30.0,
            ..CorpusSpec::default()
        },
    );
    let out = dir.path().join("out");
    let cfg = config(&dir.path().join("corpus/scenes"), &out, "");
    pipeline::run(&cfg).unwrap();
    std::fs::write(out.join("pairs/raw/HH-99999.csv"), "stale\n").unwrap();
    pipeline::run(&cfg).unwrap();
    assert!(!out.join("pairs/raw/HH-99999.csv").exists());
    pipeline::summarize(&out).unwrap();
}

#[test]
fn clean_trajectories_show_no_anomalies() {
    let dir = tempfile::tempdir().unwrap();
    corpus(
        &dir.path().join("corpus"),
        CorpusSpec {
            n_pairs: 6,
            duration: 40.0,
            seed: 3,
            stops: false,
            noise: NoiseSpec::default(),
            artifacts: ArtifactSpec::default(),
            ..CorpusSpec::default()
        },
    );
    let out = dir.path().join("out");
    let stages = "[stages]\nenhance = false\nregime = false\n";
    pipeline::run(&config(&dir.path().join("corpus/scenes"), &out, stages)).unwrap();
    let s = pipeline::summarize(&out).unwrap();
    assert_eq!(total_pairs(&s), 6);
    for a in &s.anomalies {
        match a.phase.as_str() {
            "raw" if a.frames > 0 => assert_eq!(a.fractions.unwrap(), [0.0; 3], "{}", a.dataset),
            "raw" => {}
            _ => assert!(a.fractions.is_none()),
        }
    }
}
