//! Decomposable policy classes and policy tables.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ADMISSIBLE_TOL: f64 = 1e-9;

/// Feasible set `Π` described per scenario; the admissible set of `p(h_k)`
/// depends on `h_k` only, so splicing two admissible policies along any set
/// of atoms is admissible.
///
/// All classes use nonnegative allocations. `grid` is the number of
/// equispaced levels per dimension used by the inner searches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicyClass {
    /// `0 ≤ p_j ≤ U` for every dimension.
    UniformBox { dim: usize, upper: f64, grid: usize },
    /// `0 ≤ p_j ≤ U_j`.
    RectangularBox { upper: Vec<f64>, grid: usize },
    /// `p ≥ 0`, `Σ_j p_j ≤ total + slope · Σ_j h_j`.
    PerScenarioBudget {
        dim: usize,
        total: f64,
        #[serde(default)]
        slope: f64,
        grid: usize,
    },
}

impl PolicyClass {
    pub fn dim(&self) -> usize {
        match self {
            PolicyClass::UniformBox { dim, .. } | PolicyClass::PerScenarioBudget { dim, .. } => *dim,
            PolicyClass::RectangularBox { upper, .. } => upper.len(),
        }
    }

    pub fn grid(&self) -> usize {
        match self {
            PolicyClass::UniformBox { grid, .. }
            | PolicyClass::RectangularBox { grid, .. }
            | PolicyClass::PerScenarioBudget { grid, .. } => *grid,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim() == 0 {
            return Err(Error::Schema("policy class needs at least one dimension".into()));
        }
        if self.grid() < 2 {
            return Err(Error::Schema("policy grid resolution must be at least 2".into()));
        }
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        let ok = match self {
            PolicyClass::UniformBox { upper, .. } => finite_nonneg(*upper),
            PolicyClass::RectangularBox { upper, .. } => upper.iter().all(|u| finite_nonneg(*u)),
            PolicyClass::PerScenarioBudget { total, slope, .. } => total.is_finite() && slope.is_finite(),
        };
        if !ok {
            return Err(Error::Schema("policy bounds must be finite and nonnegative".into()));
        }
        Ok(())
    }

    fn budget(&self, h: &[f64]) -> Option<f64> {
        match self {
            PolicyClass::PerScenarioBudget { total, slope, .. } => Some((total + slope * h.iter().sum::<f64>()).max(0.0)),
            _ => None,
        }
    }

    /// Per-dimension upper bounds at channel state `h`.
    pub fn upper_bounds(&self, h: &[f64]) -> Vec<f64> {
        match self {
            PolicyClass::UniformBox { dim, upper, .. } => vec![*upper; *dim],
            PolicyClass::RectangularBox { upper, .. } => upper.clone(),
            PolicyClass::PerScenarioBudget { dim, .. } => vec![self.budget(h).unwrap_or(0.0); *dim],
        }
    }

    pub fn admissible(&self, row: &[f64], h: &[f64]) -> bool {
        if row.len() != self.dim() || row.iter().any(|v| !v.is_finite()) {
            return false;
        }
        let ub = self.upper_bounds(h);
        let in_box = row
            .iter()
            .zip(&ub)
            .all(|(v, u)| *v >= -ADMISSIBLE_TOL && *v <= u + ADMISSIBLE_TOL);
        match self.budget(h) {
            Some(b) => in_box && row.iter().sum::<f64>() <= b + ADMISSIBLE_TOL,
            None => in_box,
        }
    }

    fn levels(upper: f64, grid: usize) -> Vec<f64> {
        (0..grid)
            .map(|j| {
                if j + 1 == grid {
                    upper
                } else {
                    upper * j as f64 / (grid - 1) as f64
                }
            })
            .collect()
    }

    /// Admissible grid points at `h`, in lexicographic order of level indices
    /// (first dimension most significant).
    pub fn grid_points(&self, h: &[f64]) -> Vec<Vec<f64>> {
        let levels: Vec<Vec<f64>> = self
            .upper_bounds(h)
            .iter()
            .map(|u| Self::levels(*u, self.grid()))
            .collect();
        let mut out = Vec::new();
        let mut idx = vec![0usize; levels.len()];
        loop {
            let row: Vec<f64> = idx.iter().zip(&levels).map(|(i, l)| l[*i]).collect();
            if self.admissible(&row, h) {
                out.push(row);
            }
            let mut d = levels.len();
            loop {
                if d == 0 {
                    return out;
                }
                d -= 1;
                idx[d] += 1;
                if idx[d] < levels[d].len() {
                    break;
                }
                idx[d] = 0;
            }
        }
    }
}

/// Allocation table: one row `p(h_k)` per atom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    rows: Vec<Vec<f64>>,
}

impl Policy {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        Policy { rows }
    }

    pub fn constant(atoms: usize, row: Vec<f64>) -> Self {
        Policy { rows: vec![row; atoms] }
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.rows[k]
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// The same policy on `refine(S, m)`.
    pub fn refine(&self, m: usize) -> Policy {
        Policy {
            rows: crate::probability::duplicate_rows(&self.rows, m),
        }
    }

    /// `1_E p + 1_{E^c} other`, with `E` given as a membership mask.
    pub fn splice(&self, other: &Policy, in_set: &[bool]) -> Policy {
        let rows = self
            .rows
            .iter()
            .zip(&other.rows)
            .zip(in_set)
            .map(|((a, b), inside)| if *inside { a.clone() } else { b.clone() })
            .collect();
        Policy { rows }
    }

    /// Pointwise convex combination `α p + (1 − α) other`.
    pub fn blend(&self, other: &Policy, alpha: f64) -> Policy {
        let rows = self
            .rows
            .iter()
            .zip(&other.rows)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| alpha * x + (1.0 - alpha) * y).collect())
            .collect();
        Policy { rows }
    }
}
