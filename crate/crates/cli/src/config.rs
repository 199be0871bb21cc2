//! JSON run configuration.
//!
//! One document configures every subcommand. All sections are optional and
//! default to the reference protocol; unknown keys anywhere are rejected so
//! typos fail loudly instead of silently running the defaults.

use crate::error::{CliError, Result};
use flocknet_core::controllers::Arch;
use flocknet_core::experiments::{BestCell, ExperimentSpec};
use flocknet_core::flocking::FlockingConfig;
use flocknet_core::training::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CONFIG_VERSION: u32 = 1;

/// Dataset split sizes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSizes {
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
}

impl Default for DatasetSizes {
    fn default() -> Self {
        DatasetSizes {
            n_train: 400,
            n_valid: 20,
            n_test: 20,
        }
    }
}

/// Which controller to train / evaluate.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub arch: Arch,
    pub g: usize,
    pub k: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            arch: Arch::Gcnn,
            g: 64,
            k: 3,
        }
    }
}

/// Experiment grids; scenario and optimizer settings come from the
/// top-level sections.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub architectures: Vec<Arch>,
    pub g_values: Vec<usize>,
    pub k_values: Vec<usize>,
    pub velocity_grid: Vec<f64>,
    pub radius_grid: Vec<f64>,
    pub team_sizes: Vec<usize>,
    pub n_realizations: usize,
    pub best_gc: BestCell,
    pub best_gcnn: BestCell,
    pub best_grnn: BestCell,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        let spec = ExperimentSpec::default();
        ExperimentSection {
            architectures: spec.architectures,
            g_values: spec.g_values,
            k_values: spec.k_values,
            velocity_grid: spec.velocity_grid,
            radius_grid: spec.radius_grid,
            team_sizes: spec.team_sizes,
            n_realizations: spec.n_realizations,
            best_gc: spec.best_gc,
            best_gcnn: spec.best_gcnn,
            best_grnn: spec.best_grnn,
        }
    }
}

/// The whole configuration document.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    /// Base seed for dataset generation and experiment realizations.
    /// `--seed` overrides it.
    pub seed: u64,
    pub flocking: FlockingConfig,
    pub training: TrainConfig,
    pub dataset: DatasetSizes,
    pub model: ModelSpec,
    pub experiment: ExperimentSection,
}

impl RunConfig {
    /// Built-in defaults (reference protocol).
    pub fn defaults() -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            ..Default::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: RunConfig =
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("bad config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    /// Load from `path`, or fall back to defaults.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::defaults()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(CliError::Config(format!(
                "config version must be {CONFIG_VERSION}, got {}",
                self.version
            )));
        }
        self.flocking.validate()?;
        self.training.validate()?;
        if self.model.g == 0 || self.model.k == 0 {
            return Err(CliError::Config("model g and k must be positive".into()));
        }
        Ok(())
    }

    /// Assemble the experiment description from the grids plus the shared
    /// scenario/optimizer sections.
    pub fn experiment_spec(&self, base_seed: u64) -> ExperimentSpec {
        ExperimentSpec {
            architectures: self.experiment.architectures.clone(),
            g_values: self.experiment.g_values.clone(),
            k_values: self.experiment.k_values.clone(),
            velocity_grid: self.experiment.velocity_grid.clone(),
            radius_grid: self.experiment.radius_grid.clone(),
            team_sizes: self.experiment.team_sizes.clone(),
            n_realizations: self.experiment.n_realizations,
            n_train: self.dataset.n_train,
            n_valid: self.dataset.n_valid,
            n_test: self.dataset.n_test,
            best_gc: self.experiment.best_gc,
            best_gcnn: self.experiment.best_gcnn,
            best_grnn: self.experiment.best_grnn,
            flocking: self.flocking.clone(),
            training: TrainConfig {
                seed: base_seed,
                ..self.training.clone()
            },
            base_seed,
        }
    }
}
