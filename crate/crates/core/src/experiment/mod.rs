//! Configuration-driven runs: the four training studies and the
//! verification studies, each writing CSV artifacts and a manifest that is
//! itself a valid config for re-running.

mod presets;
mod report;
mod studies;
mod training;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::energy::ProblemSpec;
use crate::metrics::Aggregates;
use crate::network::ArchSpec;
use crate::quadrature::Axis;
use crate::reference::Family;
use crate::trainer::Schedule;

pub use presets::{preset, PRESET_NAMES};
pub use report::{report, report_csv, ReportRow};
pub use studies::{
    penalty_boundary_norm, sandwich_perturbation, FdOracleConfig, LemmasConfig, PenaltyRateConfig, SandwichConfig,
};
pub use training::{build_problem, errors_for};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl ExperimentError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 2,
            ExperimentError::Numeric(_) => 3,
            ExperimentError::Io { .. } => 1,
        }
    }
}

fn config_err(what: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::Config(what.to_string())
}

fn numeric_err(what: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::Numeric(what.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Vrhs,
    Vexp,
    Vdom,
    Mixed7d,
    Sandwich,
    Lemmas,
    PenaltyRate,
    FdOracle,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Vrhs => "vrhs",
            Kind::Vexp => "vexp",
            Kind::Vdom => "vdom",
            Kind::Mixed7d => "mixed7d",
            Kind::Sandwich => "sandwich",
            Kind::Lemmas => "lemmas",
            Kind::PenaltyRate => "penalty_rate",
            Kind::FdOracle => "fd_oracle",
        }
    }

    pub fn is_training(self) -> bool {
        matches!(self, Kind::Vrhs | Kind::Vexp | Kind::Vdom | Kind::Mixed7d)
    }
}

/// The two sources of randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    /// Network initialization, and sampling in the verification studies.
    pub init: u64,
    /// Random parameter points and random evaluation slices.
    pub quadrature: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub kind: Kind,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sandwich: Option<SandwichConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lemmas: Option<LemmasConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub penalty_rate: Option<PenaltyRateConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fd_oracle: Option<FdOracleConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub problem: ProblemSpec,
    pub arch: ArchSpec,
    pub quadrature: QuadratureConfig,
    /// Endpoints carrying the penalty term, for penalty problems.
    #[serde(default)]
    pub boundary: Option<(f64, f64)>,
    pub schedule: Schedule,
    pub evaluation: EvaluationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpatialGrid {
    Tensor { axes: Vec<Axis> },
    Disk { radius: f64, n_per_axis: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum QuadratureConfig {
    /// Parameter axes first, then spatial axes.
    TensorGrid { axes: Vec<Axis> },
    /// `round(n_x_per_unit * p)` spatial midpoints of `(-p, p)` per parameter midpoint.
    VariableDomain { p_axis: Axis, n_x_per_unit: f64 },
    /// Uniform parameter draws crossed with a fixed spatial grid, redrawn on schedule.
    RandomParameters { n_p: usize, spatial: SpatialGrid },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReferenceConfig {
    /// Closed form of a one-dimensional family, with the family parameter
    /// read from the first problem parameter or fixed by `k`.
    Exact {
        family: Family,
        #[serde(default)]
        k: Option<f64>,
    },
    /// The network at the checkpoint before the final one.
    PreviousCheckpoint,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SliceConfig {
    List { params: Vec<Vec<f64>> },
    /// Uniform draws from the parameter box.
    Random { n: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EvalGrid {
    Interval { lo: f64, hi: f64, n: usize },
    /// `n` midpoints of `(-p, p)` for the slice parameter `p`.
    VariableInterval { n: usize },
    Disk { radius: f64, n_per_axis: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    pub reference: ReferenceConfig,
    pub slices: SliceConfig,
    pub grid: EvalGrid,
    /// Parameters written to `slices.csv`; empty means the error slices
    /// when those are listed, else none.
    #[serde(default)]
    pub plot_slices: Vec<Vec<f64>>,
}

/// Options from the command line.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub reproducible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureInfo {
    pub interior: usize,
    pub boundary: usize,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_version: u32,
    pub library_version: String,
    pub config: RunConfig,
    pub reproducible: bool,
    #[serde(default)]
    pub quadrature: Option<QuadratureInfo>,
    #[serde(default)]
    pub param_count: Option<usize>,
    pub wall_clock_seconds: f64,
    #[serde(default)]
    pub final_loss: Option<f64>,
    #[serde(default)]
    pub errors: Option<Aggregates>,
    pub artifacts: Vec<String>,
    /// Study-specific summary values.
    #[serde(default)]
    pub summary: Value,
}

/// What a run produced, besides the files.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub quadrature: Option<QuadratureInfo>,
    pub param_count: Option<usize>,
    pub final_loss: Option<f64>,
    pub errors: Option<Aggregates>,
    pub summary: Value,
    pub artifacts: Vec<String>,
}

impl RunConfig {
    pub fn name(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.kind.name().to_string())
    }

    /// Checks that exactly the section for `kind` is present and that its
    /// values are admissible.
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let present: Vec<&str> = [
            ("training", self.training.is_some()),
            ("sandwich", self.sandwich.is_some()),
            ("lemmas", self.lemmas.is_some()),
            ("penalty_rate", self.penalty_rate.is_some()),
            ("fd_oracle", self.fd_oracle.is_some()),
        ]
        .iter()
        .filter(|(_, on)| *on)
        .map(|(n, _)| *n)
        .collect();
        let wanted = if self.kind.is_training() { "training" } else { self.kind.name() };
        if present != [wanted] {
            return Err(config_err(format!(
                "kind `{}` needs exactly the section `{wanted}`, found {present:?}",
                self.kind.name()
            )));
        }
        match self.kind {
            Kind::Sandwich => self.sandwich.as_ref().map(|c| c.validate()),
            Kind::Lemmas => self.lemmas.as_ref().map(|c| c.validate()),
            Kind::PenaltyRate => self.penalty_rate.as_ref().map(|c| c.validate()),
            Kind::FdOracle => self.fd_oracle.as_ref().map(|c| c.validate()),
            _ => self.training.as_ref().map(training::validate),
        }
        .unwrap_or(Ok(()))
    }
}

/// Parses a config, or the config embedded in a manifest.
pub fn parse_config(text: &str) -> Result<(RunConfig, bool), ExperimentError> {
    let value: Value = serde_json::from_str(text).map_err(config_err)?;
    if value.get("manifest_version").is_some() {
        let m: Manifest = serde_json::from_value(value).map_err(config_err)?;
        Ok((m.config, m.reproducible))
    } else {
        Ok((serde_json::from_value(value).map_err(config_err)?, false))
    }
}

pub fn load_config(path: &Path) -> Result<(RunConfig, bool), ExperimentError> {
    let text = fs::read_to_string(path).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text)
}

pub(crate) fn write(dir: &Path, name: &str, contents: &str) -> Result<String, ExperimentError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| ExperimentError::Io { path, source })?;
    Ok(name.to_string())
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Runs `config` and writes its artifacts. Returns the output directory.
pub fn run(mut config: RunConfig, opts: &RunOptions) -> Result<(PathBuf, Manifest), ExperimentError> {
    if let Some(seed) = opts.seed {
        config.seeds.init = seed;
    }
    config.validate()?;
    let out = opts
        .out
        .clone()
        .or_else(|| config.output.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(config.name()));
    fs::create_dir_all(&out).map_err(|source| ExperimentError::Io {
        path: out.clone(),
        source,
    })?;
    let start = Instant::now();
    let outcome = if opts.reproducible {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .map_err(|e| numeric_err(format!("thread pool: {e}")))?;
        pool.install(|| dispatch(&config, &out))?
    } else {
        dispatch(&config, &out)?
    };
    let mut artifacts = outcome.artifacts;
    artifacts.push("manifest.json".into());
    let manifest = Manifest {
        manifest_version: MANIFEST_VERSION,
        library_version: env!("CARGO_PKG_VERSION").to_string(),
        config,
        reproducible: opts.reproducible,
        quadrature: outcome.quadrature,
        param_count: outcome.param_count,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        final_loss: outcome.final_loss,
        errors: outcome.errors,
        artifacts,
        summary: outcome.summary,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write(&out, "manifest.json", &text)?;
    Ok((out, manifest))
}

fn dispatch(config: &RunConfig, out: &Path) -> Result<Outcome, ExperimentError> {
    let seeds = config.seeds;
    match config.kind {
        Kind::Sandwich => studies::sandwich(config.sandwich.as_ref().expect("validated"), seeds, out),
        Kind::Lemmas => studies::lemmas(config.lemmas.as_ref().expect("validated"), seeds, out),
        Kind::PenaltyRate => studies::penalty_rate(config.penalty_rate.as_ref().expect("validated"), out),
        Kind::FdOracle => studies::fd_oracle(config.fd_oracle.as_ref().expect("validated"), out),
        _ => training::run_training(config.training.as_ref().expect("validated"), seeds, out),
    }
}
