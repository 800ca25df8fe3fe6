//! Run configuration loaded from JSON. Every field has a default, and
//! unknown keys are rejected.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::belief::BetaPreset;
use crate::brs::{BrsGrid, RelativeSystem, SolverConfig};
use crate::dynamics::{InputRanges, VehicleGeometry};
use crate::error::{Error, Result};
use crate::framework::{FrameworkConfig, Variant};
use crate::frs::{FrsConfig, FrsEngine};
use crate::grid::{InputConstraints, InputGrid, StateGrid};
use crate::predictor::{GenerativeParams, HeuristicParams, Horizon, Predictor};
use crate::scenario::ScenarioConfig;

/// Which reachable-set grid preset to use unless axes are given explicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BrsGridChoice {
    Desk,
    Full,
    Custom(BrsGrid),
}

impl BrsGridChoice {
    pub fn grid(&self) -> BrsGrid {
        match self {
            BrsGridChoice::Desk => BrsGrid::desk(),
            BrsGridChoice::Full => BrsGrid::full(),
            BrsGridChoice::Custom(g) => g.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BrsSettings {
    pub grid: BrsGridChoice,
    pub solver: SolverConfig,
    /// Point-mass ranges the bicycle/unicycle input bounds are derived from.
    pub point_mass: InputRanges,
}

impl Default for BrsSettings {
    fn default() -> Self {
        Self {
            grid: BrsGridChoice::Desk,
            solver: SolverConfig::default(),
            point_mass: InputRanges::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSettings {
    pub v_min: f64,
    pub v_max: f64,
    pub v_step: f64,
    pub thresholds: Vec<f64>,
    pub variants: Vec<Variant>,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            v_min: 20.0,
            v_max: 35.0,
            v_step: 1.0,
            thresholds: (1..=10).map(|i| i as f64 * 0.05).collect(),
            variants: Variant::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub state_grid: StateGrid,
    pub input_grid: InputGrid,
    pub constraints: InputConstraints,
    pub geometry: VehicleGeometry,
    pub horizon: Horizon,
    pub frs: FrsConfig,
    pub variant: Variant,
    pub heuristic: HeuristicParams,
    pub generative: GenerativeParams,
    /// Overrides the variant's coefficient set when given.
    pub beta_preset: Option<BetaPreset>,
    pub belief_window: usize,
    pub framework: FrameworkConfig,
    pub scenario: ScenarioConfig,
    pub brs: BrsSettings,
    pub sweep: SweepSettings,
    /// Cached value table.
    pub table_path: PathBuf,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            state_grid: StateGrid::default(),
            input_grid: InputGrid::default(),
            constraints: InputConstraints::default(),
            geometry: VehicleGeometry::default(),
            horizon: Horizon::default(),
            frs: FrsConfig::default(),
            variant: Variant::Psrs5,
            heuristic: HeuristicParams::default(),
            generative: GenerativeParams::default(),
            beta_preset: None,
            belief_window: 2,
            framework: FrameworkConfig::default(),
            scenario: ScenarioConfig::default(),
            brs: BrsSettings::default(),
            sweep: SweepSettings::default(),
            table_path: PathBuf::from("brs.bin"),
            output_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.scenario.validate()?;
        self.framework.validate()?;
        self.brs.solver.validate()?;
        if self.horizon.steps == 0 || !(self.horizon.dt > 0.0) {
            return Err(Error::Config(
                "forecast horizon must have at least one positive step".into(),
            ));
        }
        if (self.horizon.dt - self.framework.tick).abs() > 1e-9 {
            return Err(Error::Config("assessment tick must equal the forecast step".into()));
        }
        if self.belief_window == 0 {
            return Err(Error::Config("belief window must be at least 1".into()));
        }
        self.input_grid
            .validate_constraints(&self.state_grid, &self.constraints, self.horizon.dt)?;
        RelativeSystem::from_point_mass(&self.brs.point_mass, self.geometry)?;
        let s = &self.sweep;
        if !(s.v_step > 0.0 && s.v_max >= s.v_min) || s.thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::Config("invalid sweep settings".into()));
        }
        Ok(())
    }

    pub fn preset(&self) -> BetaPreset {
        self.beta_preset.unwrap_or(self.variant.preset())
    }

    pub fn engine(&self, workers: usize) -> Result<FrsEngine> {
        FrsEngine::new(
            self.state_grid.clone(),
            self.input_grid.clone(),
            self.constraints,
            self.horizon.dt,
            self.frs,
        )?
        .with_workers(workers)
    }

    pub fn relative_system(&self) -> Result<RelativeSystem> {
        RelativeSystem::from_point_mass(&self.brs.point_mass, self.geometry)
    }

    pub fn predictor(&self, variant: Variant, scenario: &ScenarioConfig) -> Result<Box<dyn Predictor>> {
        variant.predictor(
            Arc::new(scenario.clone()),
            self.heuristic,
            self.generative,
            self.horizon,
        )
    }
}
