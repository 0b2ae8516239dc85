// SPDX-License-Identifier: MIT OR Apache-2.0

//! Manifest: the JSON document driving `decompose` and `recompose`. Relative
//! paths inside it are resolved against the manifest file's directory, so a
//! manifest can travel with its inputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use taskvec_core::decompose::{self, Mode};

use crate::run::CliError;

fn default_tau() -> f64 {
    decompose::DEFAULT_TAU
}

fn default_rank_tol() -> f64 {
    decompose::DEFAULT_RANK_TOL
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
#[clap(rename_all = "lowercase")]
pub enum ModeName {
    #[default]
    Chain,
    Pairwise,
}

impl From<ModeName> for Mode {
    fn from(m: ModeName) -> Mode {
        match m {
            ModeName::Chain => Mode::Chain,
            ModeName::Pairwise => Mode::Pairwise,
        }
    }
}

impl ModeName {
    pub fn as_str(self) -> &'static str {
        match self {
            ModeName::Chain => "chain",
            ModeName::Pairwise => "pairwise",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VectorEntry {
    pub name: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(default)]
    pub base_model: Option<PathBuf>,
    pub task_vectors: Vec<VectorEntry>,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_rank_tol")]
    pub rank_tol: f64,
    #[serde(default)]
    pub mode: ModeName,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

impl Manifest {
    /// Reads, validates, and resolves a manifest.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read manifest {}: {e}", path.display())))?;
        let mut manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| CliError::Input(format!("invalid manifest {}: {e}", path.display())))?;
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        if let Some(base) = &mut manifest.base_model {
            *base = resolve(dir, base);
        }
        for entry in &mut manifest.task_vectors {
            entry.path = resolve(dir, &entry.path);
        }
        manifest.output_dir = resolve(dir, &manifest.output_dir);
        manifest.validate()?;
        Ok(manifest)
    }

    fn validate(&self) -> Result<(), CliError> {
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(CliError::Input(format!("tau {} must lie in (0, 1]", self.tau)));
        }
        if !(self.rank_tol >= 0.0 && self.rank_tol.is_finite()) {
            return Err(CliError::Input(format!(
                "rank_tol {} must be nonnegative and finite",
                self.rank_tol
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for entry in &self.task_vectors {
            if entry.name.is_empty()
                || entry.name.contains(['/', '\\'])
                || entry.name.starts_with('.')
            {
                return Err(CliError::Input(format!(
                    "task vector name {:?} is not a plain file stem",
                    entry.name
                )));
            }
            if !seen.insert(&entry.name) {
                return Err(CliError::Input(format!(
                    "task vector name {:?} appears twice",
                    entry.name
                )));
            }
        }
        Ok(())
    }
}

fn resolve(dir: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        dir.join(path)
    }
}
