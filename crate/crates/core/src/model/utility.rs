//! Closed family of concave utilities on the box `X`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Concave scalar utility of the service vector `x`.
///
/// Every member is concave on its domain, which is what makes the
/// concavity hypothesis checkable at build time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Utility {
    /// `Σ_i w_i x_i + offset`.
    WeightedSum {
        weights: Vec<f64>,
        #[serde(default)]
        offset: f64,
    },
    /// `Σ_i w_i log(x_i + offset)` with `w_i ≥ 0`; unit weights when omitted.
    SumLog {
        #[serde(default)]
        weights: Option<Vec<f64>>,
        offset: f64,
    },
    /// `min_i x_i`.
    Min,
    /// `min_i (x_i − x_min_i)`.
    AffineFloor { x_min: Vec<f64> },
}

impl Utility {
    pub fn validate(&self, n: usize, lower: &[f64]) -> Result<()> {
        let len_ok = |v: &Vec<f64>| {
            if v.len() == n {
                Ok(())
            } else {
                Err(Error::Schema(format!("utility expects {n} components, found {}", v.len())))
            }
        };
        match self {
            Utility::WeightedSum { weights, offset } => {
                len_ok(weights)?;
                if weights.iter().chain([offset]).any(|v| !v.is_finite()) {
                    return Err(Error::Schema("weighted-sum coefficients must be finite".into()));
                }
            }
            Utility::SumLog { weights, offset } => {
                if let Some(w) = weights {
                    len_ok(w)?;
                    if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                        return Err(Error::NonconcaveUtility("sum-log weights must be nonnegative".into()));
                    }
                }
                if !offset.is_finite() {
                    return Err(Error::Schema("sum-log offset must be finite".into()));
                }
                for (i, lo) in lower.iter().enumerate() {
                    if self.log_weight(i) > 0.0 && !(lo + offset > 0.0) {
                        return Err(Error::Schema(format!(
                            "sum-log undefined on X: x_{} + offset reaches {}",
                            i + 1,
                            lo + offset
                        )));
                    }
                }
            }
            Utility::Min => {
                if n == 0 {
                    return Err(Error::Schema("min utility needs at least one component".into()));
                }
            }
            Utility::AffineFloor { x_min } => {
                len_ok(x_min)?;
                if n == 0 || x_min.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Schema("affine floor needs finite x_min".into()));
                }
            }
        }
        Ok(())
    }

    fn log_weight(&self, i: usize) -> f64 {
        match self {
            Utility::SumLog { weights: Some(w), .. } => w[i],
            _ => 1.0,
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Utility::WeightedSum { weights, offset } => offset + crate::probability::dot(weights, x),
            Utility::SumLog { .. } => (0..x.len()).map(|i| self.separable_term(i, x[i])).sum(),
            Utility::Min => x.iter().copied().fold(f64::INFINITY, f64::min),
            Utility::AffineFloor { x_min } => x.iter().zip(x_min).map(|(a, b)| a - b).fold(f64::INFINITY, f64::min),
        }
    }

    /// Whether the utility is a sum of one-dimensional terms.
    pub fn is_separable(&self) -> bool {
        matches!(self, Utility::WeightedSum { .. } | Utility::SumLog { .. })
    }

    /// Term `i` of a separable utility, excluding any constant offset.
    pub fn separable_term(&self, i: usize, xi: f64) -> f64 {
        match self {
            Utility::WeightedSum { weights, .. } => weights[i] * xi,
            Utility::SumLog { offset, .. } => {
                let w = self.log_weight(i);
                if w == 0.0 {
                    0.0
                } else {
                    w * (xi + offset).ln()
                }
            }
            _ => f64::NAN,
        }
    }

    /// Constant part of a separable utility.
    pub fn separable_constant(&self) -> f64 {
        match self {
            Utility::WeightedSum { offset, .. } => *offset,
            _ => 0.0,
        }
    }
}
