//! Run configuration: a TOML file with one table per stage, overridable
//! from the environment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::assess::KinematicLimits;
use crate::enhance::{EnhanceConfig, EnhanceSpecs, KalmanSpec, WaveletSpec};
use crate::error::{Error, Result};
use crate::ingest::StitchConfig;
use crate::regime::RegimeConfig;
use crate::select::SelectionConfig;

/// `CFKIT_<SECTION>__<KEY>=<value>` overrides `[section] key`; deeper
/// tables chain further `__` segments.
pub const ENV_PREFIX: &str = "CFKIT_";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    /// Files, directories (every `*.csv` inside) or glob patterns.
    pub paths: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageToggles {
    pub select: bool,
    pub assess: bool,
    pub enhance: bool,
    pub regime: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        Self {
            select: true,
            assess: true,
            enhance: true,
            regime: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    /// Seed for generated corpora; read by the synth subcommand.
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: InputConfig,
    pub output: OutputConfig,
    pub stages: StageToggles,
    pub run: RunConfig,
    pub stitch: StitchConfig,
    pub selection: SelectionConfig,
    pub limits: KinematicLimits,
    pub kalman: KalmanSpec,
    pub wavelet: WaveletSpec,
    pub enhance: EnhanceConfig,
    pub regime: RegimeConfig,
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Applies `CFKIT_*` overrides to a parsed document. Values are read as
/// TOML literals, falling back to plain strings.
pub fn apply_env_overrides<I, K, V>(doc: &mut toml::Table, vars: I) -> Result<()>
where
    I: IntoIterator<Item = (K, V)>,
    K: AsRef<str>,
    V: AsRef<str>,
{
    let mut vars: Vec<(String, String)> = vars
        .into_iter()
        .filter_map(|(k, v)| {
            k.as_ref()
                .strip_prefix(ENV_PREFIX)
                .map(|rest| (rest.to_string(), v.as_ref().to_string()))
        })
        .collect();
    vars.sort();
    for (key, raw) in vars {
        let path: Vec<String> = key.split("__").map(str::to_lowercase).collect();
        if path.len() < 2 || path.iter().any(String::is_empty) {
            return Err(Error::Config(format!(
                "environment override {ENV_PREFIX}{key}: expected {ENV_PREFIX}<SECTION>__<KEY>"
            )));
        }
        let mut table = &mut *doc;
        for seg in &path[..path.len() - 1] {
            let entry = table
                .entry(seg.clone())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            table = entry.as_table_mut().ok_or_else(|| {
                Error::Config(format!("environment override {ENV_PREFIX}{key}: {seg} is not a table"))
            })?;
        }
        let mut value = parse_value(&raw);
        // `paths` is a list; a bare override is a comma-separated list
        if path == ["input", "paths"] {
            if let toml::Value::String(s) = &value {
                value = toml::Value::Array(
                    s.split(',')
                        .map(|p| toml::Value::String(p.trim().to_string()))
                        .collect(),
                );
            }
        }
        table.insert(path[path.len() - 1].clone(), value);
    }
    Ok(())
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::with_overrides(text, std::iter::empty::<(String, String)>())
    }

    /// Parses `text`, applies overrides and validates.
    pub fn with_overrides<I, K, V>(text: &str, vars: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let mut doc: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        apply_env_overrides(&mut doc, vars)?;
        let cfg: PipelineConfig = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file with overrides from the process environment.
    /// Relative input and output paths resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::with_overrides(&text, std::env::vars())?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        for p in &mut self.input.paths {
            if Path::new(p).is_relative() {
                *p = base.join(&*p).to_string_lossy().into_owned();
            }
        }
        if self.output.dir.is_relative() {
            self.output.dir = base.join(&self.output.dir);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.selection.validate()?;
        self.limits.validate()?;
        self.kalman.validate()?;
        self.wavelet.validate()?;
        self.enhance.validate()?;
        self.regime.validate()?;
        let s = &self.stitch;
        if !(s.max_gap > 0.0 && s.max_position_error > 0.0 && (0.0..=1.0).contains(&s.min_class_prob)) {
            return Err(Error::Config(format!("invalid stitch settings: {s:?}")));
        }
        let st = &self.stages;
        if (st.assess || st.enhance) && !st.select {
            return Err(Error::Config("assess and enhance stages require select".into()));
        }
        if st.regime && !st.enhance {
            return Err(Error::Config("regime stage requires enhance".into()));
        }
        if self.output.dir.as_os_str().is_empty() {
            return Err(Error::Config("output.dir is empty".into()));
        }
        Ok(())
    }

    pub fn enhance_specs(&self) -> EnhanceSpecs {
        EnhanceSpecs {
            kalman: self.kalman,
            wavelet: self.wavelet,
            enhance: self.enhance,
        }
    }

    /// Hex SHA-256 of the resolved settings that affect outputs (worker
    /// count and output location excluded).
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.run.workers = 0;
        c.output.dir = PathBuf::new();
        let text = serde_json::to_string(&c).expect("config serialises");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    /// Expands input entries into a sorted, de-duplicated file list.
    pub fn resolve_inputs(&self) -> Result<Vec<PathBuf>> {
        let mut files = Vec::new();
        for entry in &self.input.paths {
            let p = Path::new(entry);
            if p.is_dir() {
                let rd = std::fs::read_dir(p).map_err(|e| Error::io(p, e))?;
                for item in rd {
                    let path = item.map_err(|e| Error::io(p, e))?.path();
                    if path.is_file() && path.extension().is_some_and(|e| e == "csv") {
                        files.push(path);
                    }
                }
            } else if entry.contains(['*', '?', '[']) {
                let paths = glob::glob(entry).map_err(|e| Error::Config(format!("bad pattern {entry}: {e}")))?;
                for path in paths {
                    let path = path.map_err(|e| {
                        let at = e.path().to_path_buf();
                        Error::io(at, e.into())
                    })?;
                    if path.is_file() {
                        files.push(path);
                    }
                }
            } else {
                files.push(p.to_path_buf());
            }
        }
        files.sort();
        files.dedup();
        if files.is_empty() {
            return Err(Error::InsufficientData(format!(
                "no scene files found in {}",
                if self.input.paths.is_empty() {
                    "(no input paths)".to_string()
                } else {
                    self.input.paths.join(", ")
                }
            )));
        }
        Ok(files)
    }
}

/// Default configuration rendered as TOML.
pub fn default_config_toml() -> String {
    toml::to_string_pretty(&PipelineConfig::default()).expect("config serialises")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let text = default_config_toml();
        let cfg = PipelineConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg, PipelineConfig::default());
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg = PipelineConfig::from_toml_str("[selection]\nmin_duration = 20.0\n").unwrap();
        assert_eq!(cfg.selection.min_duration, 20.0);
        assert_eq!(cfg.limits, KinematicLimits::default());
    }

    #[test]
    fn unknown_key_is_a_config_error() {
        let e = PipelineConfig::from_toml_str("[selection]\nmin_durration = 20.0\n").unwrap_err();
        assert!(matches!(e, Error::Config(_)));
    }

    #[test]
    fn env_overrides_apply_typed_values() {
        let vars = [
            ("CFKIT_SELECTION__MIN_DURATION", "22.5"),
            ("CFKIT_STAGES__REGIME", "false"),
            ("CFKIT_OUTPUT__DIR", "/tmp/x"),
            ("CFKIT_ENHANCE__REPAIR__AFTER", "1.0"),
            ("CFKIT_INPUT__PATHS", "a.csv, b.csv"),
            ("OTHER", "1"),
        ];
        let cfg = PipelineConfig::with_overrides("", vars).unwrap();
        assert_eq!(cfg.selection.min_duration, 22.5);
        assert!(!cfg.stages.regime);
        assert_eq!(cfg.output.dir, PathBuf::from("/tmp/x"));
        assert_eq!(cfg.enhance.repair.after, 1.0);
        assert_eq!(cfg.input.paths, vec!["a.csv", "b.csv"]);
    }

    #[test]
    fn bad_override_is_rejected() {
        let e = PipelineConfig::with_overrides("", [("CFKIT_WORKERS", "3")]).unwrap_err();
        assert!(matches!(e, Error::Config(_)));
        let e = PipelineConfig::with_overrides("", [("CFKIT_LIMITS__A_MAX", "fast")]).unwrap_err();
        assert!(matches!(e, Error::Config(_)));
    }

    #[test]
    fn stage_dependencies_are_checked() {
        let e = PipelineConfig::from_toml_str("[stages]\nenhance = false\n").unwrap_err();
        assert!(e.to_string().contains("regime stage requires enhance"));
    }

    #[test]
    fn fingerprint_ignores_workers() {
        let mut a = PipelineConfig::default();
        let mut b = a.clone();
        b.run.workers = 8;
        assert_eq!(a.fingerprint(), b.fingerprint());
        a.selection.min_duration += 1.0;
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn inputs_resolve_from_dirs_and_globs() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["b.csv", "a.csv", "notes.txt"] {
            std::fs::write(dir.path().join(name), "").unwrap();
        }
        let mut cfg = PipelineConfig::default();
        cfg.input.paths = vec![
            dir.path().to_string_lossy().into_owned(),
            format!("{}/*.csv", dir.path().display()),
        ];
        let files = cfg.resolve_inputs().unwrap();
        let names: Vec<_> = files.iter().map(|p| p.file_name().unwrap().to_str().unwrap()).collect();
        assert_eq!(names, ["a.csv", "b.csv"]);

        cfg.input.paths = vec![dir.path().join("empty*").to_string_lossy().into_owned()];
        let e = cfg.resolve_inputs().unwrap_err();
        assert!(e.to_string().contains("no scene files"));
    }
}
