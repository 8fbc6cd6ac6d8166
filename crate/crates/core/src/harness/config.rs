//! Experiment configuration: one TOML file per run, with dotted-key overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{generate_gauss_mixture, generate_mini_shapes, Dataset};
use crate::error::{Error, Result};
use crate::nn::{Activation, AdamConfig};
use crate::plant::PlantConfig;
use crate::schedule::SetPoint;
use crate::vae::{Likelihood, VaeSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// PI controller on the KL weight.
    Controlvae,
    /// PI controller on the total-correlation weight, KL weight fixed at 1.
    ControlFactorvae,
    /// Fixed β = 1.
    PlainVae,
    /// Fixed β from `controller.beta`.
    BetaVae,
    /// Gradient ascent on a KL-equality multiplier.
    Lagrange,
    /// PI controller against the first-order surrogate plant; no network.
    PlantOnly,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Controlvae => "controlvae",
            Mode::ControlFactorvae => "control_factorvae",
            Mode::PlainVae => "plain_vae",
            Mode::BetaVae => "beta_vae",
            Mode::Lagrange => "lagrange",
            Mode::PlantOnly => "plant_only",
        }
    }

    pub fn needs_set_point(self) -> bool {
        matches!(
            self,
            Mode::Controlvae | Mode::ControlFactorvae | Mode::Lagrange | Mode::PlantOnly
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    MiniShapes,
    GaussMixture {
        k: usize,
        dim: usize,
        n: usize,
        seed: u64,
    },
    File {
        path: PathBuf,
    },
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::MiniShapes
    }
}

impl DatasetConfig {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetConfig::MiniShapes => Ok(generate_mini_shapes().into()),
            DatasetConfig::GaussMixture { k, dim, n, seed } => {
                Ok(generate_gauss_mixture(*k, *dim, *n, *seed)?.into())
            }
            DatasetConfig::File { path } => Dataset::load(path),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_latent")]
    pub latent_dim: usize,
    #[serde(default)]
    pub likelihood: Likelihood,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

fn default_hidden() -> Vec<usize> {
    vec![128]
}

fn default_latent() -> usize {
    10
}

fn default_activation() -> Activation {
    Activation::Tanh
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: default_hidden(),
            latent_dim: default_latent(),
            likelihood: Likelihood::default(),
            activation: default_activation(),
        }
    }
}

impl ModelConfig {
    pub fn spec(&self, input_dim: usize) -> VaeSpec {
        VaeSpec {
            input_dim,
            hidden: self.hidden.clone(),
            latent_dim: self.latent_dim,
            likelihood: self.likelihood,
            activation: self.activation,
        }
    }
}

/// Gains and bounds. Which fields are required depends on the mode.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    pub kp: Option<f64>,
    pub ki: Option<f64>,
    pub beta_min: Option<f64>,
    pub beta_max: Option<f64>,
    /// Fixed weight for `beta_vae`.
    pub beta: Option<f64>,
    /// Multiplier step size for `lagrange`.
    pub alpha: Option<f64>,
    #[serde(default)]
    pub lambda0: f64,
    /// Smoothing factor on the fed-back measurement; 0 feeds the raw batch
    /// value.
    #[serde(default)]
    pub kl_ema: f64,
    #[serde(default = "yes")]
    pub anti_windup: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    #[serde(default = "default_window")]
    pub window: u64,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: u64,
}

fn default_window() -> u64 {
    500
}

fn default_rel_tol() -> f64 {
    1e-4
}

fn default_max_steps() -> u64 {
    50_000
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            window: default_window(),
            rel_tol: default_rel_tol(),
            max_steps: default_max_steps(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    /// Compute MIG on encoder means after training (needs factor labels).
    #[serde(default)]
    pub mig: bool,
    #[serde(default = "default_bins")]
    pub bins: usize,
    /// Settling band as a percentage of the set point.
    #[serde(default = "default_band")]
    pub band_pct: f64,
    /// Final fraction of the trace (percent) used for tail statistics.
    #[serde(default = "default_window_pct")]
    pub window_pct: f64,
}

fn default_bins() -> usize {
    crate::metrics::DEFAULT_BINS
}

fn default_band() -> f64 {
    5.0
}

fn default_window_pct() -> f64 {
    10.0
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            mig: false,
            bins: default_bins(),
            band_pct: default_band(),
            window_pct: default_window_pct(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub seed: u64,
    pub steps: u64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Where trace, summary and checkpoint go; nothing is written when unset.
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub controller: ControllerConfig,
    pub set_point: Option<SetPoint>,
    #[serde(default)]
    pub optimizer: AdamConfig,
    #[serde(default)]
    pub plant: PlantConfig,
    #[serde(default)]
    pub reference: ReferenceConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
}

fn default_batch() -> usize {
    32
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_value(toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?)
    }

    pub fn from_value(value: toml::Value) -> Result<Self> {
        let cfg: Self = value.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` and applies `key.path=value` overrides in order.
    pub fn load(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let mut value: toml::Value =
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        Self::from_value(value)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.controller;
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| {
                Error::Config(format!("mode {} requires controller.{name}", self.mode.as_str()))
            })
        };
        if self.mode.needs_set_point() && self.set_point.is_none() {
            return Err(Error::Config(format!(
                "mode {} requires a set_point",
                self.mode.as_str()
            )));
        }
        if let Some(sp) = &self.set_point {
            if let SetPoint::Schedule { schedule } = sp {
                schedule.validate()?;
            }
        }
        match self.mode {
            Mode::Controlvae | Mode::ControlFactorvae | Mode::PlantOnly => {
                need(c.kp, "kp")?;
                need(c.ki, "ki")?;
                need(c.beta_min, "beta_min")?;
                need(c.beta_max, "beta_max")?;
            }
            Mode::BetaVae => {
                need(c.beta, "beta")?;
            }
            Mode::Lagrange => {
                need(c.alpha, "alpha")?;
            }
            Mode::PlainVae => {}
        }
        if !(0.0..1.0).contains(&c.kl_ema) {
            return Err(Error::Config(format!(
                "controller.kl_ema must lie in [0, 1), got {}",
                c.kl_ema
            )));
        }
        if self.mode != Mode::PlantOnly {
            if self.batch_size == 0 {
                return Err(Error::Config("batch_size must be positive".into()));
            }
            if self.model.latent_dim == 0 {
                return Err(Error::Config("model.latent_dim must be positive".into()));
            }
            if self.mode == Mode::ControlFactorvae && self.batch_size <= self.model.latent_dim + 1 {
                return Err(Error::Config(format!(
                    "control_factorvae needs batch_size > latent_dim + 1 to estimate TC, got {}",
                    self.batch_size
                )));
            }
        }
        if self.reference.window == 0 {
            return Err(Error::Config("reference.window must be positive".into()));
        }
        if !(self.metrics.window_pct > 0.0 && self.metrics.window_pct <= 100.0) {
            return Err(Error::Config("metrics.window_pct must lie in (0, 100]".into()));
        }
        Ok(())
    }
}

/// Applies one `a.b.c=value` override. The value is parsed as a TOML
/// literal when possible and taken as a bare string otherwise.
pub fn apply_override(root: &mut toml::Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::Config(format!("override `{assignment}` has an empty key")));
    }
    let value = parse_literal(raw.trim());
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().unwrap_or_default();
    let mut node = root;
    for p in parts {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{key}` descends into a non-table")))?;
        node = table
            .entry(p)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    node.as_table_mut()
        .ok_or_else(|| Error::Config(format!("`{key}` descends into a non-table")))?
        .insert(last.to_owned(), value);
    Ok(())
}

fn parse_literal(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()))
}
