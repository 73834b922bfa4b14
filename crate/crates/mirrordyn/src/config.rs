//! Experiment configuration files and the canonical config fingerprint.
//!
//! Configs are TOML with sections `[problem]`, `[geometry]`, `[schedule]`,
//! `[run]`, `[experiment]`, `[output]`. Files are the reproducibility
//! artifact: every run artifact embeds the fingerprint, a SHA-256 prefix of
//! the canonicalized (sorted-key JSON) scientific sections. The `[output]`
//! section is excluded from the fingerprint so the same experiment written
//! to two directories yields identical data files.
//!
//! Seed precedence: a `--seed` flag beats the `MIRRORDYN_SEED` environment
//! variable, which beats `run.base_seed` from the file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{MirrorError, Result};
use crate::geometry::MirrorMap;
use crate::optimizer::{OracleOrder, StepSchedule};
use crate::problems::{build_problem, ProblemConfig, ProblemSpec};

/// Environment variable consulted for the base seed (lowest precedence
/// among overrides).
pub const SEED_ENV_VAR: &str = "MIRRORDYN_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapChoice {
    Entropy,
    Euclidean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryConfig {
    pub map: MapChoice,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            map: MapChoice::Entropy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    InvSqrt,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    pub a: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleOrderChoice {
    #[default]
    GradientFirst,
    TransitionFirst,
}

fn default_n_runs() -> usize {
    1
}

fn default_stride() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSection {
    pub n_iters: usize,
    #[serde(default = "default_n_runs")]
    pub n_runs: usize,
    pub base_seed: u64,
    #[serde(default = "default_stride")]
    pub checkpoint_stride: usize,
    #[serde(default)]
    pub oracle_order: OracleOrderChoice,
}

fn default_p() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub eps_grid: Vec<f64>,
    #[serde(default = "default_p")]
    pub p: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            eps_grid: Vec::new(),
            p: default_p(),
        }
    }
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_formats() -> Vec<String> {
    vec!["csv".into(), "json".into()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputConfig {
    #[serde(default = "default_out_dir")]
    pub directory: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<String>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: default_out_dir(),
            formats: default_formats(),
        }
    }
}

/// Full experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    #[serde(default)]
    pub geometry: GeometryConfig,
    pub schedule: ScheduleConfig,
    pub run: RunSection,
    #[serde(default)]
    pub experiment: ExperimentConfig,
    #[serde(default)]
    pub output: OutputConfig,
    /// Directory of the config file; relative kernel paths resolve here.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// The fingerprinted view: scientific sections only.
#[derive(Serialize)]
struct FingerprintView<'a> {
    problem: &'a ProblemConfig,
    geometry: &'a GeometryConfig,
    schedule: &'a ScheduleConfig,
    run: &'a RunSection,
    experiment: &'a ExperimentConfig,
}

impl RunConfig {
    /// Loads and validates a config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            MirrorError::InvalidConfig(format!("cannot read {}: {e}", path.display()))
        })?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| {
            MirrorError::InvalidConfig(format!("cannot parse {}: {e}", path.display()))
        })?;
        cfg.base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.run.n_iters == 0 {
            return Err(MirrorError::InvalidConfig("run.n_iters must be >= 1".into()));
        }
        if self.run.n_runs == 0 {
            return Err(MirrorError::InvalidConfig("run.n_runs must be >= 1".into()));
        }
        if self.run.checkpoint_stride == 0 {
            return Err(MirrorError::InvalidConfig(
                "run.checkpoint_stride must be >= 1".into(),
            ));
        }
        if !self.schedule.a.is_finite() || self.schedule.a <= 0.0 {
            return Err(MirrorError::InvalidConfig(
                "schedule.a must be positive".into(),
            ));
        }
        if !(self.experiment.p > 0.0 && self.experiment.p < 1.0) {
            return Err(MirrorError::InvalidConfig(
                "experiment.p must lie in (0, 1)".into(),
            ));
        }
        if self
            .experiment
            .eps_grid
            .iter()
            .any(|e| !e.is_finite() || *e < 0.0)
        {
            return Err(MirrorError::InvalidConfig(
                "experiment.eps_grid entries must be finite and nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// Stable 16-hex-digit hash of the canonicalized scientific sections.
    pub fn fingerprint(&self) -> String {
        let view = FingerprintView {
            problem: &self.problem,
            geometry: &self.geometry,
            schedule: &self.schedule,
            run: &self.run,
            experiment: &self.experiment,
        };
        let value = serde_json::to_value(&view).expect("config serializes");
        let canon = canonical_json(&value);
        let digest = Sha256::digest(canon.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn mirror_map(&self) -> MirrorMap {
        match self.geometry.map {
            MapChoice::Entropy => MirrorMap::negative_entropy(),
            MapChoice::Euclidean => MirrorMap::squared_euclidean(),
        }
    }

    pub fn step_schedule(&self) -> StepSchedule {
        match self.schedule.kind {
            ScheduleKind::InvSqrt => StepSchedule::InvSqrt { a: self.schedule.a },
            ScheduleKind::Constant => StepSchedule::Constant { a: self.schedule.a },
        }
    }

    pub fn oracle_order(&self) -> OracleOrder {
        match self.run.oracle_order {
            OracleOrderChoice::GradientFirst => OracleOrder::GradientFirst,
            OracleOrderChoice::TransitionFirst => OracleOrder::TransitionFirst,
        }
    }

    /// Builds the problem, resolving a relative kernel path against the
    /// config file's directory.
    pub fn build_problem(&self) -> Result<ProblemSpec> {
        let mut pc = self.problem.clone();
        if let Some(k) = &pc.kernel_file {
            if k.is_relative() {
                pc.kernel_file = Some(self.base_dir.join(k));
            }
        }
        build_problem(&pc)
    }

    /// Applies the CLI seed override chain: flag, then environment, then
    /// the file value. Mutates `run.base_seed` so the fingerprint reflects
    /// the seed actually used.
    pub fn resolve_base_seed(&mut self, flag: Option<u64>) -> Result<u64> {
        if let Some(s) = flag {
            self.run.base_seed = s;
        } else if let Ok(text) = std::env::var(SEED_ENV_VAR) {
            let s: u64 = text.parse().map_err(|_| {
                MirrorError::InvalidConfig(format!(
                    "{SEED_ENV_VAR} must be an unsigned integer, got {text:?}"
                ))
            })?;
            self.run.base_seed = s;
        }
        Ok(self.run.base_seed)
    }
}

/// Canonical JSON: objects with sorted keys, arrays in order, scientific
/// float formatting left to `serde_json`'s shortest round-trip form.
pub fn canonical_json(value: &serde_json::Value) -> String {
    use serde_json::Value;
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            let inner: Vec<String> = keys
                .iter()
                .map(|k| {
                    format!(
                        "{}:{}",
                        serde_json::to_string(k).expect("string"),
                        canonical_json(&map[*k])
                    )
                })
                .collect();
            format!("{{{}}}", inner.join(","))
        }
        Value::Array(items) => {
            let inner: Vec<String> = items.iter().map(canonical_json).collect();
            format!("[{}]", inner.join(","))
        }
        other => serde_json::to_string(other).expect("scalar"),
    }
}
