//! Experiment registry, configuration, artifact emission and replay.

mod experiments;
mod io;

pub use experiments::{
    BackwardRate, BackwardRateSummary, BasePair, DichotomySweep, Experiment, FixtureVerdict, HeatFixture, ScaleSummary,
    Scaling, ShiftSummary, TangentBasepoint, TangentRow, TimeShift,
};
pub use io::{fmt_f64, load, snapshot, CsvTable, FORMAT_VERSION};

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub format: u64,
    pub experiment: String,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub params: toml::Table,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentInfo {
    pub id: &'static str,
    pub summary: &'static str,
}

/// Every experiment the runner knows, in listing order.
pub fn list_experiments() -> Vec<ExperimentInfo> {
    fn info<E: Experiment>() -> ExperimentInfo {
        ExperimentInfo { id: E::ID, summary: E::SUMMARY }
    }
    vec![
        info::<BackwardRate>(),
        info::<DichotomySweep>(),
        info::<TimeShift>(),
        info::<Scaling>(),
        info::<TangentBasepoint>(),
    ]
}

/// A config whose parameters have been parsed and range-checked.
#[derive(Clone, Debug, PartialEq)]
pub enum Plan {
    BackwardRate(BackwardRate),
    DichotomySweep(DichotomySweep),
    TimeShift(TimeShift),
    Scaling(Scaling),
    TangentBasepoint(TangentBasepoint),
}

fn parse_params<E: Experiment>(table: &toml::Table) -> Result<E> {
    let p: E = toml::Value::Table(table.clone())
        .try_into()
        .map_err(|e: toml::de::Error| Error::Validation(format!("params for `{}`: {}", E::ID, e.message())))?;
    p.validate()?;
    Ok(p)
}

impl ExperimentConfig {
    /// Parses TOML; syntax errors report the byte offset.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e: toml::de::Error| Error::Parse {
            offset: e.span().map_or(0, |s| s.start),
            msg: e.message().to_string(),
        })
    }

    /// Reads a config file; a relative `output_dir` is taken relative to the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut cfg = Self::from_toml_str(&text)?;
        if cfg.output_dir.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.output_dir = dir.join(&cfg.output_dir);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<Plan> {
        if self.format != FORMAT_VERSION {
            return Err(Error::Version { found: self.format, expected: FORMAT_VERSION });
        }
        let t = &self.params;
        Ok(match self.experiment.as_str() {
            BackwardRate::ID => Plan::BackwardRate(parse_params(t)?),
            DichotomySweep::ID => Plan::DichotomySweep(parse_params(t)?),
            TimeShift::ID => Plan::TimeShift(parse_params(t)?),
            Scaling::ID => Plan::Scaling(parse_params(t)?),
            TangentBasepoint::ID => Plan::TangentBasepoint(parse_params(t)?),
            other => {
                let known: Vec<&str> = list_experiments().iter().map(|e| e.id).collect();
                return Err(Error::Validation(format!("unknown experiment `{other}`; known: {}", known.join(", "))));
            }
        })
    }

    /// SHA-256 over the experiment id, format and parameters (not the output location).
    pub fn hash(&self) -> String {
        let canonical = serde_json::json!({
            "format": self.format,
            "experiment": self.experiment,
            "params": self.params,
        });
        hex::encode(Sha256::digest(canonical.to_string().as_bytes()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "kebab-case")]
pub enum RunStatus {
    Completed,
    Failed { stage: String, message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: u64,
    pub tool_version: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub wall_clock_seconds: f64,
    pub artifacts: Vec<ArtifactRecord>,
    pub status: RunStatus,
}

impl RunManifest {
    pub fn succeeded(&self) -> bool {
        self.status == RunStatus::Completed
    }
}

fn execute(plan: &Plan) -> std::result::Result<Vec<experiments::Artifact>, experiments::StageError> {
    match plan {
        Plan::BackwardRate(p) => p.run(),
        Plan::DichotomySweep(p) => p.run(),
        Plan::TimeShift(p) => p.run(),
        Plan::Scaling(p) => p.run(),
        Plan::TangentBasepoint(p) => p.run(),
    }
}

/// Validates, runs the pipeline and writes artifacts plus `manifest.json` into
/// the output directory. Validation errors return `Err` before anything is
/// written; pipeline errors are recorded in the manifest.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunManifest> {
    let plan = config.validate()?;
    let start = Instant::now();
    let outcome = execute(&plan);
    fs::create_dir_all(&config.output_dir)?;
    let (artifacts, status) = match outcome {
        Ok(files) => {
            let mut records = Vec::with_capacity(files.len());
            for (name, data) in files {
                fs::write(config.output_dir.join(&name), &data)?;
                records.push(ArtifactRecord {
                    path: name,
                    sha256: hex::encode(Sha256::digest(&data)),
                    bytes: data.len() as u64,
                });
            }
            (records, RunStatus::Completed)
        }
        Err(e) => (Vec::new(), RunStatus::Failed { stage: e.stage.to_string(), message: e.error.to_string() }),
    };
    let manifest = RunManifest {
        format: FORMAT_VERSION,
        tool_version: TOOL_VERSION.to_string(),
        config_hash: config.hash(),
        config: config.clone(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        artifacts,
        status,
    };
    snapshot(&config.output_dir.join(MANIFEST_NAME), "run-manifest", &manifest)?;
    Ok(manifest)
}

pub fn load_manifest(path: &Path) -> Result<RunManifest> {
    load(path, "run-manifest")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub original: RunManifest,
    pub replay: RunManifest,
    pub matching: Vec<String>,
    pub differing: Vec<String>,
}

impl ReplayReport {
    pub fn identical(&self) -> bool {
        self.differing.is_empty() && self.original.status == self.replay.status
    }
}

/// Reruns the manifest's config into `output_dir` (default: `replay/` beside
/// the manifest) and compares artifact checksums.
pub fn replay(manifest_path: &Path, output_dir: Option<PathBuf>) -> Result<ReplayReport> {
    let original = load_manifest(manifest_path)?;
    if original.tool_version != TOOL_VERSION {
        return Err(Error::Validation(format!(
            "manifest written by version {}, this is {TOOL_VERSION}",
            original.tool_version
        )));
    }
    let mut cfg = original.config.clone();
    cfg.output_dir = output_dir.unwrap_or_else(|| manifest_path.parent().unwrap_or(Path::new(".")).join("replay"));
    let replay = run_experiment(&cfg)?;
    let mut matching = Vec::new();
    let mut differing = Vec::new();
    for a in &original.artifacts {
        match replay.artifacts.iter().find(|b| b.path == a.path) {
            Some(b) if b.sha256 == a.sha256 => matching.push(a.path.clone()),
            _ => differing.push(a.path.clone()),
        }
    }
    for b in &replay.artifacts {
        if !original.artifacts.iter().any(|a| a.path == b.path) {
            differing.push(b.path.clone());
        }
    }
    Ok(ReplayReport { original, replay, matching, differing })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(dir: &Path, experiment: &str, params: &str) -> ExperimentConfig {
        let text = format!(
            "format = 1\nexperiment = \"{experiment}\"\noutput_dir = \"{}\"\n[params]\n{params}",
            dir.display()
        );
        ExperimentConfig::from_toml_str(&text).unwrap()
    }

    #[test]
    fn unknown_experiment_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let cfg = config(&out, "no-such-thing", "");
        assert!(matches!(run_experiment(&cfg), Err(Error::Validation(_))));
        assert!(!out.exists());
    }

    #[test]
    fn parameter_ranges_are_checked() {
        let dir = tempfile::tempdir().unwrap();
        assert!(config(dir.path(), "timeshift-continuity", "sigmas = [0.1, 0.2]").validate().is_err());
        assert!(config(dir.path(), "timeshift-continuity", "bogus = 1").validate().is_err());
        assert!(config(dir.path(), "scaling-continuity", "lambdas = [1.2, 1.1]").validate().is_ok());
    }

    #[test]
    fn syntax_errors_carry_offsets() {
        let text = "format = 1\nexperiment = \"x\nouput = 3";
        match ExperimentConfig::from_toml_str(text) {
            Err(Error::Parse { offset, .. }) => assert!(offset >= 11 && offset <= text.len(), "{offset}"),
            other => panic!("{other:?}"),
        }
        let cfg = ExperimentConfig::from_toml_str("format = 2\nexperiment = \"dichotomy-sweep\"\noutput_dir = \"o\"")
            .unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Version { found: 2, .. })));
    }

    #[test]
    fn identical_configs_give_identical_checksums() {
        let dir = tempfile::tempdir().unwrap();
        let params = "samples = 6";
        let a = run_experiment(&config(&dir.path().join("a"), "dichotomy-sweep", params)).unwrap();
        let b = run_experiment(&config(&dir.path().join("b"), "dichotomy-sweep", params)).unwrap();
        assert!(a.succeeded());
        assert_eq!(a.config_hash, b.config_hash);
        assert_eq!(a.artifacts, b.artifacts);
        let rep = replay(&dir.path().join("a").join(MANIFEST_NAME), None).unwrap();
        assert!(rep.identical());
        assert_eq!(rep.matching.len(), 2);
    }

    #[test]
    fn pipeline_failure_is_recorded() {
        let dir = tempfile::tempdir().unwrap();
        // a vanishing scale sends the rescaled grid to infinity
        let cfg = config(
            dir.path(),
            "tangent-basepoint",
            "points = 4\npairs = [{ t0 = -0.05, x0 = 1, t1 = -0.05, y0 = 2 }]\nlambdas = [1e-300]",
        );
        let m = run_experiment(&cfg).unwrap();
        assert!(matches!(m.status, RunStatus::Failed { .. }), "{:?}", m.status);
        assert!(dir.path().join(MANIFEST_NAME).exists());
    }
}
