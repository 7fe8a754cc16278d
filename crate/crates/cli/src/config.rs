//! Run configuration loaded from TOML. Every section is optional and falls
//! back to the library defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sag_twin::drift::DetectionConfig;
use sag_twin::narx::{Activation, TrainingConfig};
use sag_twin::regulatory::{EstimationConfig, IdentificationConfig};
use sag_twin::scenario::PlantConfig;
use sag_twin::twin::{Bounds, FeasibleRegion, HorizonConfig, Interval, QualityGate};
use sag_twin::ValidityCriteria;

use crate::CliError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub rulebase: Option<PathBuf>,
    pub scenario: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentificationSettings {
    pub orders: Vec<usize>,
    pub threshold: f64,
    /// Leading records of the training set used for identification.
    pub max_records: usize,
    pub random_starts: usize,
    pub max_iter: usize,
    pub tie_feedthrough_to_b: bool,
}

impl Default for IdentificationSettings {
    fn default() -> Self {
        let d = IdentificationConfig::default();
        Self {
            orders: vec![1, 2, 3, 4],
            threshold: 0.05,
            max_records: 2000,
            random_starts: d.random_starts,
            max_iter: d.max_iter,
            tie_feedthrough_to_b: d.tie_feedthrough_to_b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NarxSettings {
    /// Candidate lag counts (CV and MV lags are tied).
    pub lags: Vec<usize>,
    pub widths: Vec<usize>,
    pub threshold: f64,
    pub restarts: usize,
    pub max_iter: usize,
    pub activation: Activation,
}

impl Default for NarxSettings {
    fn default() -> Self {
        let d = TrainingConfig::default();
        Self { lags: vec![12], widths: vec![2], threshold: 0.05, restarts: d.restarts, max_iter: d.max_iter, activation: d.activation }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupervisorSettings {
    pub enabled: bool,
    pub y1_grid: Vec<f64>,
    pub y2_grid: Vec<f64>,
    pub region: FeasibleRegion,
}

impl Default for SupervisorSettings {
    fn default() -> Self {
        let mut region = FeasibleRegion::default();
        region.y[0] = Interval { lower: 0.0, upper: 1320.0 };
        Self { enabled: false, y1_grid: vec![1200.0, 1230.0, 1260.0, 1290.0], y2_grid: vec![9500.0], region }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub format_version: u32,
    pub seed: u64,
    /// CV operating limits used when the supervisor is off.
    pub y_lim: [f64; 2],
    pub paths: Paths,
    pub horizon: HorizonConfig,
    pub detection: DetectionConfig,
    pub estimation: EstimationConfig,
    pub validity: ValidityCriteria,
    pub identification: IdentificationSettings,
    pub narx: NarxSettings,
    pub supervisor: SupervisorSettings,
    pub quality_gate: QualityGate,
    pub plant: PlantConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let plant = PlantConfig::default();
        Self {
            format_version: CONFIG_VERSION,
            seed: 7,
            y_lim: plant.y_lim,
            paths: Paths::default(),
            horizon: HorizonConfig::default(),
            detection: DetectionConfig::default(),
            estimation: EstimationConfig::default(),
            validity: ValidityCriteria::default(),
            identification: IdentificationSettings::default(),
            narx: NarxSettings::default(),
            supervisor: SupervisorSettings::default(),
            quality_gate: QualityGate::default(),
            plant,
        }
    }
}

impl RunConfig {
    pub fn from_toml(s: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(s).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.format_version != CONFIG_VERSION {
            return Err(CliError::Config(format!(
                "config format_version {} is not supported (expected {CONFIG_VERSION})",
                self.format_version
            )));
        }
        if self.horizon.steps == 0 {
            return Err(CliError::Config("horizon.steps must be at least 1".into()));
        }
        self.detection.validate()?;
        self.validity.validate()?;
        for p in [&self.paths.rulebase, &self.paths.scenario].into_iter().flatten() {
            if !p.exists() {
                return Err(CliError::Config(format!("referenced file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn identification_config(&self) -> IdentificationConfig {
        IdentificationConfig {
            random_starts: self.identification.random_starts,
            max_iter: self.identification.max_iter,
            seed: self.seed,
            tie_feedthrough_to_b: self.identification.tie_feedthrough_to_b,
        }
    }

    pub fn training_config(&self) -> TrainingConfig {
        TrainingConfig {
            restarts: self.narx.restarts,
            max_iter: self.narx.max_iter,
            seed: self.seed,
            activation: self.narx.activation,
            ..TrainingConfig::default()
        }
    }

    pub fn bounds(&self) -> Bounds {
        Bounds {
            y_lim_grid: [self.supervisor.y1_grid.clone(), self.supervisor.y2_grid.clone()],
            region: self.supervisor.region,
        }
    }
}
