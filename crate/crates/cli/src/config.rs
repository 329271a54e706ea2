//! Run configuration. The on-disk format is JSON: nested objects, arrays of
//! numbers, matrices as arrays of rows.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use nrfmpc::design::{ConstraintSpec, DesignOptions, StageCost};
use nrfmpc::linsys::{AreaPartition, StateSpace};
use nrfmpc::nrf::{build_nrf_layer, NrfBlock, NrfLayer};
use nrfmpc::optim::SolverSettings;
use nrfmpc::runtime::{InitialState, RuntimeOptions, Scenario};
use nrfmpc::sets::SetSettings;

use crate::platoon::{build_platoon, scenario_v0, Platoon, PlatoonParams};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot parse {path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SystemConfig {
    /// The vehicle platoon, started at the equilibrium of `initial_speed`.
    Platoon { params: PlatoonParams, initial_speed: f64 },
    /// Any network-form plant with an explicit first layer.
    Custom {
        plant: StateSpace,
        partition: AreaPartition,
        blocks: Vec<NrfBlock>,
        spec: ConstraintSpec,
        costs: Vec<StageCost>,
        initial_x: Vec<f64>,
        #[serde(default)]
        initial_w: Option<Vec<f64>>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScenarioConfig {
    /// Leader speed profile of the platoon benchmark.
    PlatoonV0,
    /// Uniform samples on the disturbance box.
    Sampled,
    /// No exogenous disturbance.
    Zero,
    /// Explicit values, one array per step; the last entry is held.
    Sequence { values: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignConfig {
    pub rho_max: usize,
    /// `[T, T̄]` applied to every area.
    pub horizon_override: Option<[usize; 2]>,
    pub tail: usize,
    pub generator_cap: Option<usize>,
    pub eps_mem: f64,
    pub parallel: bool,
}

impl Default for DesignConfig {
    fn default() -> Self {
        DesignConfig { rho_max: 5, horizon_override: None, tail: 0, generator_cap: None, eps_mem: 1e-9, parallel: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuntimeConfig {
    pub eps_reg: f64,
    pub kkt_tol: f64,
    pub warm_start: bool,
    pub allow_uncertified: bool,
    /// Slack above which a step counts as quiescent.
    pub quiescence_margin: f64,
    /// Largest command magnitude allowed on quiescent steps.
    pub quiescence_tol: f64,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        RuntimeConfig { eps_reg: 1e-12, kkt_tol: 1e-6, warm_start: true, allow_uncertified: false, quiescence_margin: 0.5, quiescence_tol: 1e-6 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemConfig,
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub design: DesignConfig,
    #[serde(default)]
    pub runtime: RuntimeConfig,
    pub seeds: Vec<u64>,
    pub steps: usize,
    pub out_dir: PathBuf,
    pub artifacts: PathBuf,
}

impl RunConfig {
    /// The platoon benchmark with the horizons `T_i = 1`, `T̄_i = 0`.
    pub fn platoon_default() -> Self {
        RunConfig {
            system: SystemConfig::Platoon { params: PlatoonParams::default(), initial_speed: 10.0 },
            scenario: ScenarioConfig::PlatoonV0,
            design: DesignConfig { horizon_override: Some([1, 0]), ..DesignConfig::default() },
            runtime: RuntimeConfig { allow_uncertified: true, ..RuntimeConfig::default() },
            seeds: vec![1, 2, 3, 4, 5],
            steps: 2000,
            out_dir: PathBuf::from("out"),
            artifacts: PathBuf::from("out/artifacts.json"),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        let cfg = Self::parse(&text).map_err(|source| ConfigError::Parse { path: path.into(), source })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serialises")
    }

    /// Structural checks that need no set computations.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.steps == 0 {
            return bad("steps must be positive".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.design.rho_max == 0 {
            return bad("rho_max must be positive".into());
        }
        if let Some([t, _]) = self.design.horizon_override {
            if t == 0 {
                return bad("constrained horizon must be positive".into());
            }
        }
        match &self.system {
            SystemConfig::Platoon { params, .. } => params.validate().map_err(|e| ConfigError::Invalid(e.to_string())),
            SystemConfig::Custom { plant, partition, blocks, spec, costs, initial_x, initial_w } => {
                plant.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
                if !plant.is_network_form() {
                    return bad("plant must have C = I and no feedthrough".into());
                }
                partition.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
                if partition.n_x != plant.n_x() || partition.n_u != plant.n_u() {
                    return bad("partition does not cover the plant".into());
                }
                if blocks.len() != partition.n_u || costs.len() != partition.n_areas() || spec.x.len() != partition.n_areas() {
                    return bad("one block per command row and one cost and constraint set per area are required".into());
                }
                if initial_x.len() != plant.n_x() {
                    return bad(format!("initial_x has {} entries, expected {}", initial_x.len(), plant.n_x()));
                }
                let n_w: usize = blocks.iter().map(NrfBlock::order).sum();
                if initial_w.as_ref().is_some_and(|w| w.len() != n_w) {
                    return bad(format!("initial_w must have {n_w} entries"));
                }
                Ok(())
            }
        }
    }

    pub fn design_options(&self, costs: &[StageCost]) -> DesignOptions {
        DesignOptions {
            rho_max: self.design.rho_max,
            horizon_override: self.design.horizon_override.map(|[t, tb]| (t, tb)),
            tail: self.design.tail,
            costs: Some(costs.to_vec()),
            sets: SetSettings { eps_mem: self.design.eps_mem, generator_cap: self.design.generator_cap, ..SetSettings::default() },
            parallel: self.design.parallel,
        }
    }

    pub fn runtime_options(&self) -> RuntimeOptions {
        RuntimeOptions {
            eps_reg: self.runtime.eps_reg,
            solver: SolverSettings { kkt_tol: self.runtime.kkt_tol, ..SolverSettings::default() },
            parallel: true,
            warm_start: self.runtime.warm_start,
            allow_uncertified: self.runtime.allow_uncertified,
        }
    }
}

/// Everything the commands need, built from a configuration.
#[derive(Clone, Debug)]
pub struct System {
    pub plant: StateSpace,
    pub layer: NrfLayer,
    pub spec: ConstraintSpec,
    pub costs: Vec<StageCost>,
    pub initial: InitialState,
    pub platoon: Option<Platoon>,
}

impl System {
    pub fn build(cfg: &SystemConfig) -> Result<Self, ConfigError> {
        match cfg {
            SystemConfig::Platoon { params, initial_speed } => {
                let p = build_platoon(params).map_err(|e| ConfigError::Invalid(e.to_string()))?;
                Ok(System {
                    plant: p.model.reduced.clone(),
                    layer: p.layer.clone(),
                    spec: p.spec.clone(),
                    costs: p.costs.clone(),
                    initial: p.equilibrium(*initial_speed),
                    platoon: Some(p),
                })
            }
            SystemConfig::Custom { plant, partition, blocks, spec, costs, initial_x, initial_w } => {
                let layer = build_nrf_layer(partition, blocks.clone()).map_err(|e| ConfigError::Invalid(e.to_string()))?;
                let w = initial_w.clone().map(DVector::from_vec).unwrap_or_else(|| DVector::zeros(layer.n_w()));
                Ok(System {
                    plant: plant.clone(),
                    layer,
                    spec: spec.clone(),
                    costs: costs.clone(),
                    initial: InitialState { x: DVector::from_column_slice(initial_x), w },
                    platoon: None,
                })
            }
        }
    }

    pub fn scenario(&self, cfg: &ScenarioConfig, steps: usize) -> Result<Scenario, ConfigError> {
        let n_d = self.plant.n_d();
        Ok(match cfg {
            ScenarioConfig::Sampled => Scenario::Sampled,
            ScenarioConfig::Zero => Scenario::Sequence(vec![DVector::zeros(n_d); steps]),
            ScenarioConfig::PlatoonV0 => {
                let ts = self.platoon.as_ref().map(|p| p.params.ts).ok_or_else(|| ConfigError::Invalid("platoon-v0 needs the platoon system".into()))?;
                Scenario::Sequence((0..steps).map(|k| DVector::from_element(1, ts * scenario_v0(k))).collect())
            }
            ScenarioConfig::Sequence { values } => {
                if values.is_empty() || values.iter().any(|v| v.len() != n_d) {
                    return Err(ConfigError::Invalid(format!("sequence entries must have {n_d} values")));
                }
                Scenario::Sequence((0..steps).map(|k| DVector::from_column_slice(&values[k.min(values.len() - 1)])).collect())
            }
        })
    }
}
