//! Batch front end: scenario loading with overrides, ensemble runs, check
//! suites and report writers.

use std::path::{Path, PathBuf};

use levy_spde::scenario::{heat_example_nonlinearities, validate, Origin, HEAT_EXAMPLE_TOML};
use levy_spde::{Scenario, ScenarioConfig};
use thiserror::Error;

pub mod output;
pub mod pipeline;
pub mod stability;

pub use pipeline::{
    default_epsilon, reproduce_example, run_check, run_command, run_ergodic, run_picard, run_simulate,
    run_stability_stage, ErgodicOutcome, RunOutcome,
};
pub use stability::{run_local_stability, run_stability, LocalStabilityReport, StabilityReport};

/// Exit status for successful runs.
pub const EXIT_OK: i32 = 0;
/// Exit status when a run completes but one of its assertions fails.
pub const EXIT_ASSERTION: i32 = 1;
/// Exit status for configuration and I/O errors.
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("assertion failed: {0}")]
    Assertion(String),
    #[error(transparent)]
    Model(#[from] levy_spde::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use levy_spde::Error as E;
        match self {
            CliError::Assertion(_) => EXIT_ASSERTION,
            CliError::Model(
                E::Divergence { .. }
                | E::NonFinite(_)
                | E::LevelSetViolation { .. }
                | E::EnvelopeViolated { .. }
                | E::LipschitzExceeded { .. },
            ) => EXIT_ASSERTION,
            _ => EXIT_CONFIG,
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Simulate,
    Picard,
    Stability,
    Ergodic,
    Check,
    ReproduceExample,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Picard => "picard",
            Command::Stability => "stability",
            Command::Ergodic => "ergodic",
            Command::Check => "check",
            Command::ReproduceExample => "reproduce-example",
        }
    }
}

/// One invocation: which command, on which scenario, writing where.
#[derive(Debug, Clone, PartialEq)]
pub struct RunPlan {
    pub command: Command,
    /// `None` selects the shipped heat example.
    pub scenario_path: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Dotted-key overrides, applied in order.
    pub overrides: Vec<(String, String)>,
    /// Exponential weight for stability gaps; defaults to `0.05·δ`.
    pub epsilon: Option<f64>,
}

impl RunPlan {
    pub fn new(command: Command, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            command,
            scenario_path: None,
            out_dir: out_dir.into(),
            overrides: Vec::new(),
            epsilon: None,
        }
    }

    pub fn with_override(mut self, key: &str, value: impl ToString) -> Self {
        self.overrides.push((key.to_string(), value.to_string()));
        self
    }
}

/// Parses `key=value`.
pub fn parse_override(s: &str) -> CliResult<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{s}` is not key=value")))?;
    let k = k.trim();
    if k.is_empty() || k.split('.').any(str::is_empty) {
        return Err(CliError::Config(format!("bad override key `{k}`")));
    }
    Ok((k.to_string(), v.trim().to_string()))
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(root: &mut toml::Value, key: &str, value: toml::Value) -> CliResult<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut node = root;
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        node = match node {
            toml::Value::Table(t) => {
                if last {
                    t.insert((*part).to_string(), value);
                    return Ok(());
                }
                t.entry((*part).to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            }
            toml::Value::Array(a) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| CliError::Config(format!("`{part}` in `{key}` is not an array index")))?;
                let len = a.len();
                let slot = a
                    .get_mut(idx)
                    .ok_or_else(|| CliError::Config(format!("index {idx} out of range ({len}) in `{key}`")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(CliError::Config(format!("`{key}` descends into a scalar"))),
        };
    }
    Ok(())
}

/// Reads a scenario (the shipped heat example by default), applies the
/// overrides and returns the effective configuration.
///
/// For heat-example scenarios an override of `origin.a` regenerates the
/// nonlinearities and the declared `L`, unless those are overridden too.
pub fn load_config(path: Option<&Path>, overrides: &[(String, String)]) -> CliResult<ScenarioConfig> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| CliError::Config(format!("cannot read scenario {}: {e}", p.display())))?,
        None => HEAT_EXAMPLE_TOML.to_string(),
    };
    let mut value: toml::Value =
        toml::from_str(&text).map_err(|e| CliError::Config(format!("scenario does not parse: {e}")))?;
    for (k, v) in overrides {
        set_path(&mut value, k, parse_value(v))?;
    }
    let mut cfg: ScenarioConfig = value
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(format!("scenario does not parse: {e}")))?;
    let touched = |prefix: &str| overrides.iter().any(|(k, _)| k.starts_with(prefix));
    if let Origin::HeatExample { a } = cfg.origin {
        if touched("origin") && !touched("nonlinearities") && !touched("constants.L") {
            cfg.nonlinearities = heat_example_nonlinearities(a)?;
            cfg.constants.lipschitz = cfg.nonlinearities.lipschitz;
        }
    }
    Ok(cfg)
}

/// Loads, validates and builds the scenario for a plan.
pub fn load_scenario(plan: &RunPlan) -> CliResult<Scenario> {
    let cfg = load_config(plan.scenario_path.as_deref(), &plan.overrides)?;
    let diags = validate(&cfg);
    if !diags.is_empty() {
        return Err(CliError::Config(diags.join("; ")));
    }
    Ok(cfg.build()?)
}
