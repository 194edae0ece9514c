//! JSON instance configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{InstanceParts, Policy, PolicyClass, RcpInstance, ServiceSpec, Utility, XBox};
use crate::dual::DualOptions;
use crate::error::{Error, Result};
use crate::probability::ScenarioSet;
use crate::risk::RiskSpec;

/// Scenario section: inline atoms, or a `w,h_1..` table file whose path is
/// relative to the configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<Vec<f64>>>,
    /// Uniform when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<PathBuf>,
}

/// Utility as written in a configuration. `callback` is accepted by the
/// parser only so that it can be rejected with a precise error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum UtilityConfig {
    WeightedSum {
        weights: Vec<f64>,
        #[serde(default)]
        offset: f64,
    },
    SumLog {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weights: Option<Vec<f64>>,
        offset: f64,
    },
    Min,
    AffineFloor {
        x_min: Vec<f64>,
    },
    Callback {
        #[serde(default)]
        name: String,
    },
}

impl TryFrom<UtilityConfig> for Utility {
    type Error = Error;

    fn try_from(c: UtilityConfig) -> Result<Utility> {
        Ok(match c {
            UtilityConfig::WeightedSum { weights, offset } => Utility::WeightedSum { weights, offset },
            UtilityConfig::SumLog { weights, offset } => Utility::SumLog { weights, offset },
            UtilityConfig::Min => Utility::Min,
            UtilityConfig::AffineFloor { x_min } => Utility::AffineFloor { x_min },
            UtilityConfig::Callback { name } => {
                return Err(Error::NonconcaveUtility(format!(
                    "callback utility {name:?} cannot be verified concave"
                )))
            }
        })
    }
}

impl From<&Utility> for UtilityConfig {
    fn from(u: &Utility) -> Self {
        match u.clone() {
            Utility::WeightedSum { weights, offset } => UtilityConfig::WeightedSum { weights, offset },
            Utility::SumLog { weights, offset } => UtilityConfig::SumLog { weights, offset },
            Utility::Min => UtilityConfig::Min,
            Utility::AffineFloor { x_min } => UtilityConfig::AffineFloor { x_min },
        }
    }
}

/// Slater witness; `policy` holds one row per atom, or a single row used at
/// every atom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WitnessConfig {
    pub x: Vec<f64>,
    pub policy: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceConfig {
    pub scenario: ScenarioConfig,
    pub service: ServiceSpec,
    pub risks: Vec<RiskSpec>,
    pub utility: UtilityConfig,
    #[serde(default)]
    pub constraints: Vec<UtilityConfig>,
    pub x_box: XBox,
    pub policy_class: PolicyClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slater_witness: Option<WitnessConfig>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub dual: DualOptions,
    /// Directory that relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl InstanceConfig {
    pub fn from_json(text: &str) -> Result<InstanceConfig> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<InstanceConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_json(&text)?;
        config.base_dir = path.parent().map(Path::to_path_buf);
        Ok(config)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    fn scenarios(&self) -> Result<ScenarioSet> {
        let s = &self.scenario;
        match (&s.points, &s.table) {
            (Some(points), None) => match &s.weights {
                Some(w) => ScenarioSet::new(points.clone(), w.clone()),
                None => ScenarioSet::uniform(points.clone()),
            },
            (None, Some(table)) => {
                if s.weights.is_some() {
                    return Err(Error::Schema("scenario table carries its own weights".into()));
                }
                let path = match &self.base_dir {
                    Some(dir) if table.is_relative() => dir.join(table),
                    _ => table.clone(),
                };
                let text = std::fs::read_to_string(&path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
                ScenarioSet::from_table(&text)
            }
            _ => Err(Error::Schema("scenario needs exactly one of `points` or `table`".into())),
        }
    }

    /// Validates the configuration and builds the instance.
    pub fn build(&self) -> Result<RcpInstance> {
        let constraints = self
            .constraints
            .iter()
            .cloned()
            .map(Utility::try_from)
            .collect::<Result<Vec<_>>>()?;
        RcpInstance::build(InstanceParts {
            scenarios: self.scenarios()?,
            service: self.service.clone(),
            risks: self.risks.clone(),
            objective: Utility::try_from(self.utility.clone())?,
            constraints,
            x_box: self.x_box.clone(),
            policy_class: self.policy_class.clone(),
            witness: self
                .slater_witness
                .as_ref()
                .map(|w| (w.x.clone(), Policy::from_rows(w.policy.clone()))),
            seed: self.seed,
        })
    }
}
