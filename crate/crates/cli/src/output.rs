//! Output directory handling and the run manifest.

use std::fmt::Display;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use levy_spde::ScenarioConfig;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::{CliError, CliResult, Command, RunPlan};

/// Directory receiving every file of one run; remembers what was written.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }

    /// Creates `name` and hands a buffered writer to `fill`.
    pub fn write_with<E, F>(&mut self, name: &str, fill: F) -> CliResult<()>
    where
        E: Display,
        F: FnOnce(&mut BufWriter<File>) -> Result<(), E>,
    {
        let path = self.path(name);
        let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        let mut w = BufWriter::new(file);
        fill(&mut w).map_err(|e| CliError::io(&path, std::io::Error::other(e.to_string())))?;
        w.flush().map_err(|e| CliError::io(&path, e))?;
        if !self.written.iter().any(|n| n == name) {
            self.written.push(name.to_string());
        }
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        self.write_with(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value).map_err(|e| e.to_string())?;
            writeln!(w).map_err(|e| e.to_string())
        })
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> CliResult<()> {
        self.write_with(name, |w| w.write_all(text.as_bytes()))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Everything needed to rerun a command bit-for-bit: the effective scenario
/// is saved next to the manifest as `scenario.toml`, and its hash is taken
/// over that canonical text.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: Command,
    pub scenario_file: Option<String>,
    pub effective_scenario: String,
    pub scenario_sha256: String,
    pub overrides: Vec<(String, String)>,
    pub root_seed: u64,
    /// Path `i` draws its noise from `splitmix64`-derived seed `(root_seed, i)`.
    pub seed_derivation: String,
    pub n_paths: usize,
    pub dt: f64,
    pub horizon: f64,
    pub burn_in: f64,
    pub epsilon: Option<f64>,
    pub outputs: Vec<String>,
}

pub const SCENARIO_FILE: &str = "scenario.toml";
pub const MANIFEST_FILE: &str = "manifest.json";

impl Manifest {
    pub fn new(plan: &RunPlan, cfg: &ScenarioConfig, canonical: &str, burn_in: f64) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: plan.command,
            scenario_file: plan.scenario_path.as_ref().map(|p| p.display().to_string()),
            effective_scenario: SCENARIO_FILE.to_string(),
            scenario_sha256: sha256_hex(canonical.as_bytes()),
            overrides: plan.overrides.clone(),
            root_seed: cfg.mc.root_seed,
            seed_derivation: "derive_seed(root_seed, path_index)".to_string(),
            n_paths: cfg.mc.n_paths,
            dt: cfg.mc.dt,
            horizon: cfg.mc.horizon,
            burn_in,
            epsilon: plan.epsilon,
            outputs: Vec::new(),
        }
    }
}
