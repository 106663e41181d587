//! Run configuration: JSON document, validation and `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{DatasetSpec, SyntheticSpec};
use crate::error::{Error, Result};
use crate::learner::OptimizerSpec;
use crate::ota::PowerSchedule;
use crate::packing::num_blocks;
use crate::registry;
use crate::rng::MAX_COORD;

/// How gains on different subchannels of one symbol relate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelCorrelation {
    #[default]
    Iid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    /// Training rows given to each device.
    pub per_device: usize,
    /// Rows per local gradient; `None` uses the whole local set.
    #[serde(default)]
    pub batch_size: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Devices.
    #[serde(rename = "M")]
    pub devices: usize,
    /// Parameter-server antennas.
    #[serde(rename = "K")]
    pub antennas: usize,
    /// Subchannels per OFDM symbol.
    pub s: usize,
    /// Model dimension; must equal `(F + 1) * C` of the dataset.
    pub d: usize,
    /// Iterations.
    #[serde(rename = "T")]
    pub iterations: usize,
    pub sigma_h_sq: f64,
    pub sigma_z_sq: f64,
    pub power: PowerSchedule,
    pub optimizer: OptimizerSpec,
    pub dataset: DatasetSpec,
    pub partition: PartitionSpec,
    /// Registered gradient link, `"ota"` or `"error_free"`.
    pub mode: String,
    pub seed: u64,
    #[serde(default)]
    pub metrics_path: Option<PathBuf>,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default)]
    pub channel_correlation: ChannelCorrelation,
}

fn default_eval_every() -> usize {
    10
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl RunConfig {
    /// OFDM symbols per iteration, `ceil(d / 2s)`.
    pub fn symbols(&self) -> usize {
        num_blocks(self.d, self.s)
    }

    pub fn is_over_the_air(&self) -> bool {
        self.mode == "ota"
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("M", self.devices),
            ("K", self.antennas),
            ("s", self.s),
            ("d", self.d),
            ("T", self.iterations),
            ("eval_every", self.eval_every),
            ("partition.per_device", self.partition.per_device),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(config_err(format!("{name} must be at least 1")));
        }
        if self.s > self.d {
            return Err(config_err(format!("s = {} exceeds d = {}", self.s, self.d)));
        }
        if self.devices > MAX_COORD || self.antennas > MAX_COORD || self.symbols() > MAX_COORD {
            return Err(config_err("M, K or N exceeds the supported range"));
        }
        if let Some(b) = self.partition.batch_size {
            if b == 0 || b > self.partition.per_device {
                return Err(config_err(format!(
                    "partition.batch_size must be in [1, {}], got {b}",
                    self.partition.per_device
                )));
            }
        }
        if !registry::links().contains(&self.mode) {
            return Err(config_err(format!(
                "unknown mode '{}'; known: {}",
                self.mode,
                registry::links().names().join(", ")
            )));
        }
        if self.is_over_the_air() {
            if !(self.sigma_h_sq > 0.0 && self.sigma_h_sq.is_finite()) {
                return Err(config_err("sigma_h_sq must be positive"));
            }
            if !(self.sigma_z_sq >= 0.0 && self.sigma_z_sq.is_finite()) {
                return Err(config_err("sigma_z_sq must be nonnegative"));
            }
            self.power
                .validate(self.iterations)
                .map_err(|e| config_err(e.to_string()))?;
        }
        self.validate_optimizer()?;
        self.dataset.validate().map_err(|e| config_err(e.to_string()))?;
        if let Some((f, c)) = self.dataset.shape_hint() {
            let expected = (f + 1) * c;
            if expected != self.d {
                return Err(config_err(format!(
                    "d = {} but the dataset implies (F + 1) * C = {expected}",
                    self.d
                )));
            }
        }
        Ok(())
    }

    fn validate_optimizer(&self) -> Result<()> {
        let o = &self.optimizer;
        if !registry::optimizers().contains(&o.kind) {
            return Err(config_err(format!(
                "unknown optimizer '{}'; known: {}",
                o.kind,
                registry::optimizers().names().join(", ")
            )));
        }
        if !(o.learning_rate > 0.0 && o.learning_rate.is_finite()) {
            return Err(config_err("optimizer.learning_rate must be positive"));
        }
        let unit = |b: f64| b > 0.0 && b < 1.0;
        if !unit(o.beta1) || !unit(o.beta2) {
            return Err(config_err("optimizer betas must lie in (0, 1)"));
        }
        if !(o.epsilon > 0.0) {
            return Err(config_err("optimizer.epsilon must be positive"));
        }
        Ok(())
    }

    pub fn from_value(value: Value) -> Result<Self> {
        let config: Self =
            serde_json::from_value(value).map_err(|e| config_err(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| config_err(e.to_string()))?;
        Self::from_value(value)
    }

    /// Reads `path`, applies `KEY=VALUE` overrides in order, then validates.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let mut value: Value = serde_json::from_str(&text)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        for o in overrides {
            apply_override_str(&mut value, o)?;
        }
        Self::from_value(value)
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("RunConfig serializes")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("RunConfig serializes")
    }

    /// A seconds-scale synthetic run.
    pub fn minimal() -> Self {
        let (features, classes) = (8, 4);
        Self {
            devices: 4,
            antennas: 8,
            s: 18,
            d: (features + 1) * classes,
            iterations: 50,
            sigma_h_sq: 1.0,
            sigma_z_sq: 1.0,
            power: PowerSchedule::ramp_per_thousand(),
            optimizer: OptimizerSpec::adam(0.05),
            dataset: DatasetSpec::Synthetic(SyntheticSpec {
                classes,
                features,
                train_per_class: 100,
                test_per_class: 50,
                margin: 4.0,
                seed: 1,
            }),
            partition: PartitionSpec {
                per_device: 100,
                batch_size: None,
            },
            mode: "ota".into(),
            seed: 1,
            metrics_path: None,
            eval_every: 10,
            channel_correlation: ChannelCorrelation::Iid,
        }
    }

    /// MNIST at the full experiment scale: M = 20, K = 2M, T = 800, d = 7850,
    /// s = d / 2, sigma_z^2 = 20, alpha_t = 1 + t / 1000.
    pub fn paper_scale() -> Self {
        let d = 785 * 10;
        Self {
            devices: 20,
            antennas: 40,
            s: d / 2,
            d,
            iterations: 800,
            sigma_h_sq: 1.0,
            sigma_z_sq: 20.0,
            power: PowerSchedule::ramp_per_thousand(),
            optimizer: OptimizerSpec::adam(1e-3),
            dataset: DatasetSpec::Idx {
                train_images: "data/train-images-idx3-ubyte".into(),
                train_labels: "data/train-labels-idx1-ubyte".into(),
                test_images: "data/t10k-images-idx3-ubyte".into(),
                test_labels: "data/t10k-labels-idx1-ubyte".into(),
                normalization: Default::default(),
            },
            partition: PartitionSpec {
                per_device: 1000,
                batch_size: None,
            },
            mode: "ota".into(),
            seed: 1,
            metrics_path: None,
            eval_every: 10,
            channel_correlation: ChannelCorrelation::Iid,
        }
    }
}

/// Sets a (dotted) key. The raw value is parsed as JSON, falling back to a string.
pub fn apply_override(value: &mut Value, key: &str, raw: &str) -> Result<()> {
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    set_path(value, key, parsed)
}

pub fn apply_override_str(value: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| config_err(format!("override '{assignment}' is not KEY=VALUE")))?;
    apply_override(value, key.trim(), raw.trim())
}

pub(crate) fn set_path(value: &mut Value, key: &str, new: Value) -> Result<()> {
    let mut cursor = value;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(config_err(format!("bad key '{key}'")));
        }
        let obj = cursor
            .as_object_mut()
            .ok_or_else(|| config_err(format!("'{key}': '{part}' is not inside an object")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), new);
            return Ok(());
        }
        cursor = obj
            .get_mut(*part)
            .ok_or_else(|| config_err(format!("unknown config key '{key}'")))?;
    }
    unreachable!("split yields at least one part")
}

/// Whether `key` (dotted) names a field that exists in the serialized config.
pub fn has_path(value: &Value, key: &str) -> bool {
    key.split('.')
        .try_fold(value, |v, part| v.as_object().and_then(|o| o.get(part)))
        .is_some()
}
