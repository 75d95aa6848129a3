use std::path::Path;

use iocrelax::estimators::{Anchor, Method};
use iocrelax::systems::SystemParams;
use iocrelax::Theta;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::BenchError;

/// Noise levels of the paper-style tables (fractions of the mean input).
pub const TABLE_PCTS: [f64; 3] = [0.0001, 0.05, 0.10];

/// Cutoff used when the config does not set one.
pub fn default_cutoff(pct: f64) -> f64 {
    if pct <= 1e-4 {
        0.0
    } else {
        0.005
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorPolicy {
    /// `theta[index]` pinned to its true value.
    Fixed,
    /// Unit norm, then rescaled to the true `theta[index]`.
    UnitNorm,
}

impl AnchorPolicy {
    pub fn anchor(self, index: usize, theta_star: &Theta) -> Result<Anchor, BenchError> {
        let value = *theta_star
            .as_slice()
            .get(index)
            .ok_or_else(|| BenchError::Config(format!("anchor index {index} out of range")))?;
        Ok(match self {
            AnchorPolicy::Fixed => Anchor::Fixed { index, value },
            AnchorPolicy::UnitNorm => Anchor::UnitNorm { index, value },
        })
    }

    pub fn label(self, index: usize) -> String {
        match self {
            AnchorPolicy::Fixed => format!("fixed:theta[{index}]=true"),
            AnchorPolicy::UnitNorm => format!("unit_norm:rescaled_to_theta[{index}]=true"),
        }
    }
}

impl std::str::FromStr for AnchorPolicy {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fixed" => Ok(AnchorPolicy::Fixed),
            "unit_norm" | "unit-norm" => Ok(AnchorPolicy::UnitNorm),
            other => Err(BenchError::Config(format!(
                "unknown anchor policy `{other}` (expected fixed or unit_norm)"
            ))),
        }
    }
}

/// Estimation-side parameter uncertainty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Robustness {
    /// Field of [`SystemParams`], e.g. `car_length`.
    pub parameter: String,
    /// Relative half-width of the uniform perturbation.
    pub half_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub systems: Vec<String>,
    pub pcts: Vec<f64>,
    pub demos: usize,
    pub repetitions: usize,
    pub seed: u64,
    pub estimators: Vec<Method>,
    /// `None` selects [`default_cutoff`] per noise level.
    pub cutoff: Option<f64>,
    pub anchor: AnchorPolicy,
    pub anchor_index: usize,
    pub robustness: Option<Robustness>,
    pub params: SystemParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            systems: iocrelax::systems::SYSTEM_NAMES.iter().map(|s| s.to_string()).collect(),
            pcts: TABLE_PCTS.to_vec(),
            demos: 10,
            repetitions: 10,
            seed: 7,
            estimators: vec![Method::Kkt, Method::Tr, Method::Ep],
            cutoff: None,
            anchor: AnchorPolicy::Fixed,
            anchor_index: 0,
            robustness: None,
            params: SystemParams::default(),
        }
    }
}

impl ExperimentConfig {
    /// Table II setup: bicycle, estimation-side car length within +-5%.
    pub fn robustness_default() -> Self {
        Self {
            systems: vec!["bicycle".into()],
            robustness: Some(Robustness {
                parameter: "car_length".into(),
                half_width: 0.05,
            }),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.systems.is_empty() {
            return Err(BenchError::Config("no systems selected".into()));
        }
        if self.repetitions == 0 {
            return Err(BenchError::Config("repetitions must be at least 1".into()));
        }
        if self.demos == 0 {
            return Err(BenchError::Config("at least one demonstration is required".into()));
        }
        if let Some(p) = self.pcts.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(BenchError::Config(format!("noise level {p} must be >= 0")));
        }
        if let Some(m) = self
            .estimators
            .iter()
            .find(|m| !matches!(m, Method::Kkt | Method::Tr | Method::Ep))
        {
            return Err(BenchError::Config(format!(
                "{m} needs an optimal trajectory and cannot run on noisy demonstrations"
            )));
        }
        if let Some(r) = &self.robustness {
            if !(0.0..1.0).contains(&r.half_width) {
                return Err(BenchError::Config(format!(
                    "robustness half-width {} must lie in [0, 1)",
                    r.half_width
                )));
            }
        }
        Ok(())
    }

    pub fn from_toml_file(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, BenchError> {
        let cfg: Self = toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Fields present in `text` replace the corresponding fields of `self`;
    /// nested tables merge key by key.
    pub fn overlay_toml(&self, text: &str) -> Result<Self, BenchError> {
        let over: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| BenchError::Config(e.to_string()))?;
        let mut base = toml::Table::try_from(self).map_err(|e| BenchError::Config(e.to_string()))?;
        merge(&mut base, over);
        let cfg: Self = toml::Value::Table(base)
            .try_into()
            .map_err(|e: toml::de::Error| BenchError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn cutoff_for(&self, pct: f64) -> f64 {
        self.cutoff.unwrap_or_else(|| default_cutoff(pct))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
