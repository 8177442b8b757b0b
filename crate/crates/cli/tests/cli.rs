use std::path::Path;
use std::process::{Command, Output};

fn cfkit(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cfkit"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn synth_corpus(dir: &Path, pairs: usize) {
    std::fs::write(
        dir.join("scenario.toml"),
        format!("[corpus]\nn_pairs = {pairs}\nduration = 30.0\nseed = 2\n"),
    )
    .unwrap();
    let out = cfkit(&["synth", "--scenario", "scenario.toml", "--out", "corpus"], dir);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains(&format!("{pairs} pairs")));
}

#[test]
fn synth_run_and_summarize() {
    let dir = tempfile::tempdir().unwrap();
    synth_corpus(dir.path(), 4);
    assert!(dir.path().join("corpus/truth/pair_0000.csv").is_file());
    std::fs::write(
        dir.path().join("run.toml"),
        "[input]\npaths = [\"corpus/scenes\"]\n[output]\ndir = \"out\"\n",
    )
    .unwrap();

    let run = cfkit(&["run", "--config", "run.toml"], dir.path());
    assert_eq!(run.status.code(), Some(0), "{}", text(&run.stderr));
    assert!(dir.path().join("out/manifest.json").is_file());

    let summary = cfkit(&["summarize", "out"], dir.path());
    assert_eq!(summary.status.code(), Some(0), "{}", text(&summary.stderr));
    let s = text(&summary.stdout);
    for section in ["pairs", "anomalies", "regimes", "failures:"] {
        assert!(s.contains(section), "{s}");
    }
}

#[test]
fn empty_scene_directory_exits_with_data_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("scenes")).unwrap();
    std::fs::write(dir.path().join("run.toml"), "[input]\npaths = [\"scenes\"]\n").unwrap();
    let out = cfkit(&["run", "--config", "run.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("no scene files"), "{}", text(&out.stderr));
}

#[test]
fn bad_config_exits_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), "[input]\npaths = []\n[nonsense]\nx = 1\n").unwrap();
    let out = cfkit(&["run", "--config", "run.toml"], dir.path());
    assert_eq!(out.status.code(), Some(1), "{}", text(&out.stderr));
}

#[test]
fn env_override_reaches_the_run() {
    let dir = tempfile::tempdir().unwrap();
    synth_corpus(dir.path(), 2);
    std::fs::write(dir.path().join("run.toml"), "[input]\npaths = [\"corpus/scenes\"]\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_cfkit"))
        .args(["run", "--config", "run.toml"])
        .current_dir(dir.path())
        .env("CFKIT_OUTPUT__DIR", "elsewhere")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(dir.path().join("elsewhere/manifest.json").is_file());
}

#[test]
fn validate_reports_malformed_records() {
    let dir = tempfile::tempdir().unwrap();
    synth_corpus(dir.path(), 1);
    let good = cfkit(&["validate", "corpus/scenes/pair_0000.csv"], dir.path());
    assert_eq!(good.status.code(), Some(0), "{}", text(&good.stderr));
    assert!(text(&good.stdout).contains("0 malformed"));

    let scene = std::fs::read_to_string(dir.path().join("corpus/scenes/pair_0000.csv")).unwrap();
    let mut lines: Vec<&str> = scene.lines().collect();
    lines.insert(2, "garbage,row");
    std::fs::write(dir.path().join("bad.csv"), lines.join("\n") + "\n").unwrap();
    let bad = cfkit(&["validate", "bad.csv"], dir.path());
    assert_eq!(bad.status.code(), Some(0));
    assert!(text(&bad.stdout).contains("1 malformed"), "{}", text(&bad.stdout));

    let missing = cfkit(&["validate", "nope.csv"], dir.path());
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn summarize_of_a_non_run_directory_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = cfkit(&["summarize", "."], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_scenario_exits_with_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("s.toml"), "[[pair]]\nduration = -5.0\n").unwrap();
    let out = cfkit(&["synth", "--scenario", "s.toml", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(1), "{}", text(&out.stderr));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cfkit(&["frobnicate"], dir.path()).status.code(), Some(1));
    assert_eq!(cfkit(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn seed_override_drives_synth() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("s.toml"), "[corpus]\nn_pairs = 1\nduration = 20.0\n").unwrap();
    let scene = |seed: &str, out: &str| {
        let o = Command::new(env!("CARGO_BIN_EXE_cfkit"))
            .args(["synth", "--scenario", "s.toml", "--out", out])
            .current_dir(dir.path())
            .env("CFKIT_RUN__SEED", seed)
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", text(&o.stderr));
        std::fs::read(dir.path().join(out).join("scenes/pair_0000.csv")).unwrap()
    };
    assert_eq!(scene("5", "a"), scene("5", "b"));
    assert_ne!(scene("5", "a"), scene("6", "c"));

    let bad = Command::new(env!("CARGO_BIN_EXE_cfkit"))
        .args(["synth", "--scenario", "s.toml", "--out", "d"])
        .current_dir(dir.path())
        .env("CFKIT_RUN__SEED", "many")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
}
