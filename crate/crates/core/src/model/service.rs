//! Instantaneous service functions `f(p, h)`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Host-supplied service evaluator. Must be pure and reentrant: it is called
/// concurrently and its results are assumed deterministic.
pub type ServiceFn = dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync;

#[derive(Clone)]
pub struct CallbackService {
    pub name: String,
    pub output_dim: usize,
    pub eval: Arc<ServiceFn>,
}

impl fmt::Debug for CallbackService {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CallbackService")
            .field("name", &self.name)
            .field("output_dim", &self.output_dim)
            .finish()
    }
}

/// Explicit lookup table for scalar policies.
///
/// `values[j][g][i]` is component `i` of the service at channel key
/// `points[j]` and policy level `levels[g]`. Lookups snap to the nearest key
/// and level (ties to the lower index).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableService {
    pub points: Vec<Vec<f64>>,
    pub levels: Vec<f64>,
    pub values: Vec<Vec<Vec<f64>>>,
}

impl TableService {
    fn nearest(candidates: impl Iterator<Item = f64>) -> usize {
        let mut best = (0, f64::INFINITY);
        for (i, d) in candidates.enumerate() {
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }

    fn lookup(&self, p: &[f64], h: &[f64]) -> Vec<f64> {
        let j = Self::nearest(
            self.points
                .iter()
                .map(|q| q.iter().zip(h).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()),
        );
        let g = Self::nearest(self.levels.iter().map(|l| (l - p[0]).abs()));
        self.values[j][g].clone()
    }

    fn validate(&self) -> Result<usize> {
        if self.points.is_empty() || self.levels.is_empty() {
            return Err(Error::Schema("table service needs at least one key and one level".into()));
        }
        if self.values.len() != self.points.len() {
            return Err(Error::Schema("table service: one value block per channel key".into()));
        }
        let n = self
            .values
            .first()
            .and_then(|b| b.first())
            .map(Vec::len)
            .unwrap_or(0);
        if n == 0 {
            return Err(Error::Schema("table service has no components".into()));
        }
        for block in &self.values {
            if block.len() != self.levels.len() || block.iter().any(|row| row.len() != n) {
                return Err(Error::Schema("table service: ragged value table".into()));
            }
            if block.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::Schema("table service holds non-finite values".into()));
            }
        }
        Ok(n)
    }
}

/// Family of service functions. The optional `power_cost` appends the
/// component `−Σ_j p_j`, which turns an average-power budget into an
/// ordinary expectation constraint.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ServiceSpec {
    /// `f_i = log2(1 + h_i p_i / (σ² + c Σ_{j≠i} h_j p_j))`.
    InterferenceRate {
        noise: f64,
        coupling: f64,
        #[serde(default)]
        power_cost: bool,
    },
    /// `f_i = log2(1 + h_i p_i / σ²)`.
    AwgnRate {
        #[serde(default = "one")]
        noise: f64,
        #[serde(default)]
        power_cost: bool,
    },
    /// `f_i = w · 1{log2(1 + h_i p_i / σ²) ≥ r}`.
    Outage {
        threshold: f64,
        reward: f64,
        #[serde(default = "one")]
        noise: f64,
        #[serde(default)]
        power_cost: bool,
    },
    /// `f_i = h_i p_i`.
    LinearGain {
        #[serde(default)]
        power_cost: bool,
    },
    Table(TableService),
    #[serde(skip)]
    Callback(CallbackService),
}

fn one() -> f64 {
    1.0
}

impl ServiceSpec {
    /// Number of service components `N` for policies of dimension `policy_dim`.
    pub fn output_dim(&self, policy_dim: usize) -> usize {
        match self {
            ServiceSpec::InterferenceRate { power_cost, .. }
            | ServiceSpec::AwgnRate { power_cost, .. }
            | ServiceSpec::Outage { power_cost, .. }
            | ServiceSpec::LinearGain { power_cost } => policy_dim + usize::from(*power_cost),
            ServiceSpec::Table(t) => t.values.first().and_then(|b| b.first()).map(Vec::len).unwrap_or(0),
            ServiceSpec::Callback(c) => c.output_dim,
        }
    }

    /// Checks the family parameters against the channel and policy dimensions.
    pub fn validate(&self, channel_dim: usize, policy_dim: usize) -> Result<()> {
        let per_user = |what: &str| {
            if channel_dim != policy_dim {
                Err(Error::Schema(format!(
                    "{what} service needs one channel gain per policy dimension ({channel_dim} vs {policy_dim})"
                )))
            } else {
                Ok(())
            }
        };
        match self {
            ServiceSpec::InterferenceRate { noise, coupling, .. } => {
                per_user("interference")?;
                if !(*noise > 0.0) || !(*coupling >= 0.0) {
                    return Err(Error::Schema("interference needs noise > 0 and coupling >= 0".into()));
                }
            }
            ServiceSpec::AwgnRate { noise, .. } => {
                per_user("awgn")?;
                if !(*noise > 0.0) {
                    return Err(Error::Schema("awgn needs noise > 0".into()));
                }
            }
            ServiceSpec::Outage { noise, reward, threshold, .. } => {
                per_user("outage")?;
                if !(*noise > 0.0) || !reward.is_finite() || !threshold.is_finite() {
                    return Err(Error::Schema("outage needs noise > 0 and finite reward/threshold".into()));
                }
            }
            ServiceSpec::LinearGain { .. } => per_user("linear")?,
            ServiceSpec::Table(t) => {
                t.validate()?;
                if policy_dim != 1 {
                    return Err(Error::Schema("table services take scalar policies".into()));
                }
                if t.points.iter().any(|q| q.len() != channel_dim) {
                    return Err(Error::Schema("table keys must match the channel dimension".into()));
                }
            }
            ServiceSpec::Callback(c) => {
                if c.output_dim == 0 {
                    return Err(Error::Schema("callback service must declare its output dimension".into()));
                }
            }
        }
        Ok(())
    }

    pub fn evaluate(&self, p: &[f64], h: &[f64]) -> Vec<f64> {
        let power = |out: &mut Vec<f64>, power_cost: bool| {
            if power_cost {
                out.push(-p.iter().sum::<f64>());
            }
        };
        match self {
            ServiceSpec::InterferenceRate {
                noise,
                coupling,
                power_cost,
            } => {
                let received: Vec<f64> = h.iter().zip(p).map(|(g, q)| g * q).collect();
                let total: f64 = received.iter().sum();
                let mut out: Vec<f64> = received
                    .iter()
                    .map(|own| {
                        let interference = coupling * (total - own);
                        (1.0 + own / (noise + interference)).log2()
                    })
                    .collect();
                power(&mut out, *power_cost);
                out
            }
            ServiceSpec::AwgnRate { noise, power_cost } => {
                let mut out: Vec<f64> = h.iter().zip(p).map(|(g, q)| (1.0 + g * q / noise).log2()).collect();
                power(&mut out, *power_cost);
                out
            }
            ServiceSpec::Outage {
                threshold,
                reward,
                noise,
                power_cost,
            } => {
                let mut out: Vec<f64> = h
                    .iter()
                    .zip(p)
                    .map(|(g, q)| {
                        if (1.0 + g * q / noise).log2() >= *threshold {
                            *reward
                        } else {
                            0.0
                        }
                    })
                    .collect();
                power(&mut out, *power_cost);
                out
            }
            ServiceSpec::LinearGain { power_cost } => {
                let mut out: Vec<f64> = h.iter().zip(p).map(|(g, q)| g * q).collect();
                power(&mut out, *power_cost);
                out
            }
            ServiceSpec::Table(t) => t.lookup(p, h),
            ServiceSpec::Callback(c) => (c.eval)(p, h),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interference_rate_hand_value() {
        let s = ServiceSpec::InterferenceRate {
            noise: 1.0,
            coupling: 1.0,
            power_cost: false,
        };
        let f = s.evaluate(&[1.0, 1.0], &[1.0, 1.0]);
        assert_eq!(f.len(), 2);
        for v in f {
            assert!((v - 1.5f64.log2()).abs() < 1e-15);
        }
    }

    #[test]
    fn awgn_zero_power() {
        let s = ServiceSpec::AwgnRate {
            noise: 1.0,
            power_cost: false,
        };
        assert_eq!(s.evaluate(&[0.0], &[2.0]), vec![0.0]);
    }

    #[test]
    fn outage_threshold_met_exactly() {
        let s = ServiceSpec::Outage {
            threshold: 1.0,
            reward: 1.0,
            noise: 1.0,
            power_cost: true,
        };
        assert_eq!(s.evaluate(&[1.0], &[1.0]), vec![1.0, -1.0]);
        assert_eq!(s.evaluate(&[0.9], &[1.0]), vec![0.0, -0.9]);
        assert_eq!(s.output_dim(1), 2);
    }

    #[test]
    fn table_snaps_to_nearest() {
        let t = TableService {
            points: vec![vec![0.5], vec![2.0]],
            levels: vec![0.0, 1.0],
            values: vec![vec![vec![0.1], vec![0.2]], vec![vec![0.3], vec![0.4]]],
        };
        let s = ServiceSpec::Table(t);
        s.validate(1, 1).unwrap();
        assert_eq!(s.evaluate(&[1.0], &[2.0]), vec![0.4]);
        assert_eq!(s.evaluate(&[0.0], &[0.4]), vec![0.1]);
    }

    #[test]
    fn dimension_checks() {
        let s = ServiceSpec::LinearGain { power_cost: false };
        assert!(s.validate(2, 1).is_err());
        assert!(s.validate(1, 1).is_ok());
    }
}
