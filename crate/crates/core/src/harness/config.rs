use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{SignalParams, TileParams};
use crate::control::ControllerKind;
use crate::drl::DqnParams;
use crate::error::{ConfigError, Error};
use crate::geometry::{build_layout, GeometryParams, MOVEMENT_COUNT};
use crate::platooning::max_uniform_size;
use crate::simcore::{DynamicsParams, FlowSpec, FuelModel};

/// Environment variable that, when set, prefixes relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "AIM_OUTPUT_ROOT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Simulated seconds per episode.
    pub horizon: f64,
    /// Training episodes.
    pub episodes: usize,
    pub controller: ControllerKind,
    pub eval_seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Keep a line per protocol message (debugging only, memory hungry).
    pub trace_protocol: bool,
    pub geometry: GeometryParams,
    pub dynamics: DynamicsParams,
    pub fuel: FuelModel,
    pub flows: FlowSpec,
    pub dqn: DqnParams,
    pub signal: SignalParams,
    pub tiles: TileParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            horizon: 3600.0,
            episodes: 100,
            controller: ControllerKind::Proposed,
            eval_seeds: vec![101, 102, 103, 104, 105],
            output_dir: PathBuf::from("runs/default"),
            trace_protocol: false,
            geometry: GeometryParams::default(),
            dynamics: DynamicsParams::default(),
            fuel: FuelModel::default(),
            flows: FlowSpec::reference(),
            dqn: DqnParams::default(),
            signal: SignalParams::default(),
            tiles: TileParams::default(),
        }
    }
}

/// Sets `dotted.key` to `raw` inside a TOML table, parsing `raw` as a TOML
/// value and falling back to a plain string.
fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<(), ConfigError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError::Invalid(format!("override `{assignment}` is not key=value")))?;
    let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {}", raw.trim()))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut table = root;
    for p in &parts[..parts.len() - 1] {
        table = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| ConfigError::Invalid(format!("override `{key}`: `{p}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Self = table.try_into().map_err(|e: toml::de::Error| ConfigError::Invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, Error> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|source| Error::Io { path: p.display().to_string(), source })?,
            None => String::new(),
        };
        Ok(Self::from_toml(&text, overrides)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical TOML rendering. The output directory is
    /// left out: it says where results go, not what produced them.
    pub fn hash(&self) -> String {
        let identity = Self { output_dir: PathBuf::new(), ..self.clone() };
        let digest = Sha256::digest(identity.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if self.output_dir.is_relative() => PathBuf::from(root).join(&self.output_dir),
            _ => self.output_dir.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let layout = build_layout(&self.geometry)?;
        self.dynamics.validate()?;
        self.flows.validate()?;
        self.dqn.validate()?;
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(ConfigError::NonPositive { field: "horizon", value: self.horizon });
        }
        let d = &self.dynamics;
        if d.vehicle_length + d.min_headway > layout.approach_length() {
            return Err(ConfigError::Invalid("approach too short for a single vehicle".into()));
        }
        let n_max = max_uniform_size(d.vehicle_length, d.platoon_headway, layout.params().control_zone_radius)?;
        let net = &self.dqn.network;
        if net.outputs < n_max {
            return Err(ConfigError::Invalid(format!(
                "network has {} outputs but platoons of up to {n_max} vehicles fit in the control zone",
                net.outputs
            )));
        }
        if net.channels != crate::drl::CHANNELS || net.rows != MOVEMENT_COUNT || net.cols != self.dqn.encoder.cells {
            return Err(ConfigError::Invalid(format!(
                "network input {}x{}x{} does not match the {}x{}x{} state grid",
                net.channels,
                net.rows,
                net.cols,
                crate::drl::CHANNELS,
                MOVEMENT_COUNT,
                self.dqn.encoder.cells
            )));
        }
        if self.signal.saturation_flow <= 0.0 {
            return Err(ConfigError::NonPositive { field: "signal.saturation_flow", value: self.signal.saturation_flow });
        }
        if !(self.tiles.request_horizon > 0.0) {
            return Err(ConfigError::NonPositive { field: "tiles.request_horizon", value: self.tiles.request_horizon });
        }
        if self.eval_seeds.is_empty() {
            return Err(ConfigError::Invalid("eval_seeds must not be empty".into()));
        }
        Ok(())
    }
}
