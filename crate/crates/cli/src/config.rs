//! Experiment configuration: a JSON document, optional `--set` overrides
//! and the checks that run before anything is computed.

use std::path::{Path, PathBuf};

use edgesched_core::learning::{LearningMode, SgdConfig};
use edgesched_core::model::{CompactState, ModelParams};
use edgesched_core::policies::PolicyKind;
use edgesched_core::stochastic::pathloss_from_distance;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    Paper,
    Desk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub preset: Preset,
    /// Model parameters replacing the preset's, by field name.
    #[serde(default)]
    pub params: Map<String, Value>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub workers: usize,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
    pub simulate: Option<SimulateSection>,
    pub value: Option<ValueSection>,
    pub learn: Option<LearnSection>,
    pub bound_check: Option<BoundCheckSection>,
}

/// One device of an initial edge set, in FCFS order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSpec {
    pub distance_m: f64,
    pub queue_segments: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub policies: Vec<PolicyKind>,
    pub arrival_probs: Vec<f64>,
    /// Empty means the model's `receive_power_w`.
    #[serde(default)]
    pub receive_powers: Vec<f64>,
    /// Multipliers on the task-size range, run at the first arrival
    /// probability and receive power.
    #[serde(default)]
    pub task_size_scales: Vec<f64>,
    pub episodes: u64,
    #[serde(default)]
    pub horizon: Option<u32>,
    #[serde(default)]
    pub initial_state: Vec<DeviceSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValueSection {
    #[serde(default = "empty_state_list")]
    pub states: Vec<Vec<DeviceSpec>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnSection {
    pub mode: LearningMode,
    pub frames: u64,
    #[serde(default)]
    pub max_sgd_steps: Option<u64>,
    #[serde(default = "one_u64")]
    pub record_every: u64,
    #[serde(default)]
    pub stream_id: u64,
    #[serde(default)]
    pub sgd: SgdConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundCheckSection {
    #[serde(default = "empty_state_list")]
    pub states: Vec<Vec<DeviceSpec>>,
    pub episodes: u64,
    /// Allowed relative gap between the simulated and analytic baseline
    /// value, on top of the confidence half-width.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default)]
    pub horizon: Option<u32>,
}

fn one() -> usize {
    1
}

fn one_u64() -> u64 {
    1
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn empty_state_list() -> Vec<Vec<DeviceSpec>> {
    vec![Vec::new()]
}

fn default_tolerance() -> f64 {
    0.03
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub set: Vec<String>,
}

/// A checked configuration and the hash that identifies it in outputs.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: ExperimentConfig,
    pub params: ModelParams,
    pub sha256: String,
}

pub fn load(path: &Path, overrides: &Overrides) -> Result<Loaded, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut raw: Value =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    for item in &overrides.set {
        apply_set(&mut raw, item)?;
    }
    if let Some(seed) = overrides.seed {
        set_path(&mut raw, "seed", Value::from(seed))?;
    }
    if let Some(workers) = overrides.workers {
        set_path(&mut raw, "workers", Value::from(workers))?;
    }
    if let Some(out) = &overrides.out {
        set_path(&mut raw, "output_dir", Value::from(out.to_string_lossy().into_owned()))?;
    }
    let config: ExperimentConfig = serde_json::from_value(raw).map_err(|e| CliError::Config(e.to_string()))?;
    let params = resolve_params(&config)?;
    // Worker count and destination do not change any result, so they stay
    // out of the hash.
    let hashed = ExperimentConfig {
        workers: 1,
        output_dir: PathBuf::new(),
        ..config.clone()
    };
    let canonical = serde_json::to_vec(&hashed).map_err(|e| CliError::Other(e.to_string()))?;
    let sha256 = format!("{:x}", Sha256::digest(&canonical));
    Ok(Loaded { config, params, sha256 })
}

/// Preset values overlaid with the `params` object.
fn resolve_params(config: &ExperimentConfig) -> Result<ModelParams, CliError> {
    let preset = match config.preset {
        Preset::Paper => ModelParams::paper_scale(),
        Preset::Desk => ModelParams::desk_scale(),
    };
    let mut merged = serde_json::to_value(preset).map_err(|e| CliError::Other(e.to_string()))?;
    let obj = merged.as_object_mut().expect("params serialize to an object");
    for (k, v) in &config.params {
        obj.insert(k.clone(), v.clone());
    }
    let params: ModelParams =
        serde_json::from_value(merged).map_err(|e| CliError::Config(format!("params: {e}")))?;
    params.validate().map_err(|e| CliError::Config(e.to_string()))?;
    if config.workers == 0 {
        return Err(CliError::Config("workers must be >= 1".into()));
    }
    Ok(params)
}

/// `a.b.c=value`; the value is parsed as JSON and falls back to a string.
fn apply_set(raw: &mut Value, item: &str) -> Result<(), CliError> {
    let (key, value) = item
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got {item:?}")))?;
    let value = serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
    set_path(raw, key, value)
}

fn set_path(raw: &mut Value, key: &str, value: Value) -> Result<(), CliError> {
    let mut node = raw;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("bad override key {key:?}")));
    }
    for part in &parts[..parts.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("override {key:?} descends into a non-object")))?;
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    node.as_object_mut()
        .ok_or_else(|| CliError::Config(format!("override {key:?} descends into a non-object")))?
        .insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

pub fn compact_state(devices: &[DeviceSpec], params: &ModelParams) -> Result<CompactState, CliError> {
    for d in devices {
        if !(d.distance_m > 0.0 && d.distance_m <= params.cell_radius_m) {
            return Err(CliError::Config(format!(
                "device distance {} m is outside (0, {}]",
                d.distance_m, params.cell_radius_m
            )));
        }
    }
    let queues: Vec<(f64, u32)> = devices
        .iter()
        .map(|d| (pathloss_from_distance(d.distance_m, params), d.queue_segments))
        .collect();
    CompactState::from_queues(&queues).map_err(|e| CliError::Config(e.to_string()))
}

/// `50m:4;300m:6`, or `empty`.
pub fn describe_state(devices: &[DeviceSpec]) -> String {
    if devices.is_empty() {
        return "empty".into();
    }
    devices
        .iter()
        .map(|d| format!("{}m:{}", d.distance_m, d.queue_segments))
        .collect::<Vec<_>>()
        .join(";")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_creates_nested_keys_and_parses_json() {
        let mut v = serde_json::json!({"params": {}});
        apply_set(&mut v, "params.arrival_prob=0.3").unwrap();
        apply_set(&mut v, "simulate.policies=[\"baseline\"]").unwrap();
        apply_set(&mut v, "output_dir=runs/a").unwrap();
        assert_eq!(v["params"]["arrival_prob"], 0.3);
        assert_eq!(v["simulate"]["policies"][0], "baseline");
        assert_eq!(v["output_dir"], "runs/a");
        assert!(apply_set(&mut v, "novalue").is_err());
        assert!(apply_set(&mut v, "params..x=1").is_err());
    }

    #[test]
    fn params_overlay_preset() {
        let config: ExperimentConfig = serde_json::from_value(serde_json::json!({
            "preset": "desk",
            "params": {"arrival_prob": 0.7}
        }))
        .unwrap();
        let p = resolve_params(&config).unwrap();
        assert_eq!(p.arrival_prob, 0.7);
        assert_eq!(p.seg_max, ModelParams::desk_scale().seg_max);
    }

    #[test]
    fn unknown_param_rejected() {
        let config: ExperimentConfig =
            serde_json::from_value(serde_json::json!({"params": {"arival_prob": 0.7}})).unwrap();
        assert!(matches!(resolve_params(&config), Err(CliError::Config(_))));
    }

    #[test]
    fn state_description() {
        let d = [
            DeviceSpec {
                distance_m: 50.0,
                queue_segments: 4,
            },
            DeviceSpec {
                distance_m: 300.5,
                queue_segments: 6,
            },
        ];
        assert_eq!(describe_state(&d), "50m:4;300.5m:6");
        assert_eq!(describe_state(&[]), "empty");
    }
}
