//! Finite weighted-atom models of the channel distribution.
//!
//! A [`ScenarioSet`] is a list of channel states with strictly positive
//! probabilities. Nonatomic distributions are approached by [`ScenarioSet::refine`],
//! which splits every atom into equal-weight copies at the same point.
//!
//! Refined sets remember their unrefined root. Reductions over a refined set
//! first collapse the random variable onto the coarsest refinement level on
//! which it is block-constant, so a quantity duplicated by refinement reduces
//! to bit-for-bit the same value as on the original set.

use std::borrow::Cow;
use std::fmt::Write as _;
use std::ops::Deref;
use std::sync::Arc;

use crate::error::{Error, Result};

const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Finite probability space over channel states `h_k ∈ R^{N_H}`.
#[derive(Debug, Clone)]
pub struct ScenarioSet {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
    root: Option<Arc<ScenarioSet>>,
    factor: usize,
}

impl PartialEq for ScenarioSet {
    fn eq(&self, other: &Self) -> bool {
        self.points == other.points && self.weights == other.weights
    }
}

/// Values of a real random variable, one per atom of a scenario set.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RandomVariable(pub Vec<f64>);

impl RandomVariable {
    pub fn constant(len: usize, value: f64) -> Self {
        RandomVariable(vec![value; len])
    }

    /// Extension to `refine(S, m)`: every value repeated `m` times in place.
    pub fn duplicate(&self, m: usize) -> Self {
        RandomVariable(duplicate_rows(&self.0, m))
    }

    pub fn negated(&self) -> Self {
        RandomVariable(self.0.iter().map(|v| -v).collect())
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for RandomVariable {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for RandomVariable {
    fn from(v: Vec<f64>) -> Self {
        RandomVariable(v)
    }
}

pub(crate) fn duplicate_rows<T: Clone>(rows: &[T], m: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(rows.len() * m);
    for r in rows {
        for _ in 0..m {
            out.push(r.clone());
        }
    }
    out
}

/// A random variable restricted to the coarsest refinement level on which it
/// is block-constant, together with the matching atom weights.
pub(crate) struct Collapsed<'a> {
    pub weights: Cow<'a, [f64]>,
    pub values: Cow<'a, [f64]>,
    /// Number of consecutive atoms of the full set represented by one entry.
    pub block: usize,
}

impl ScenarioSet {
    /// Builds a scenario set, rescaling the weights when their sum is within
    /// `1e-9` of one.
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(Error::LengthMismatch {
                expected: points.len(),
                found: weights.len(),
            });
        }
        if points.is_empty() {
            return Err(Error::EmptyScenarioSet);
        }
        let dim = points[0].len();
        if dim == 0 {
            return Err(Error::Schema("channel points must have at least one coordinate".into()));
        }
        for (index, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    index,
                    expected: dim,
                    found: p.len(),
                });
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::Schema(format!("channel point {index} is not finite")));
            }
        }
        for (index, &weight) in weights.iter().enumerate() {
            if !(weight > 0.0) || !weight.is_finite() {
                return Err(Error::NonPositiveWeight { index, weight });
            }
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::WeightSumOutOfRange { sum });
        }
        let weights = if sum == 1.0 {
            weights
        } else {
            weights.iter().map(|w| w / sum).collect()
        };
        Ok(ScenarioSet {
            points,
            weights,
            root: None,
            factor: 1,
        })
    }

    /// Equal-weight atoms at the given points.
    pub fn uniform(points: Vec<Vec<f64>>) -> Result<Self> {
        let k = points.len().max(1);
        let weights = vec![1.0 / k as f64; points.len()];
        Self::new(points, weights)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.points[k]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Total refinement factor relative to the unrefined root (1 if unrefined).
    pub fn refinement_factor(&self) -> usize {
        self.factor
    }

    /// The unrefined set this one was refined from (itself when unrefined).
    pub fn root(&self) -> &ScenarioSet {
        self.root.as_deref().unwrap_or(self)
    }

    /// Index of the root atom that atom `k` was split from.
    pub fn root_index(&self, k: usize) -> usize {
        k / self.factor
    }

    pub fn max_weight(&self) -> f64 {
        self.weights.iter().copied().fold(0.0, f64::max)
    }

    /// Splits every atom into `m` copies of weight `w_k / m` at the same point.
    ///
    /// Copies of atom `k` occupy indices `k*m .. k*m + m`. Weights are always
    /// computed from the unrefined root, so `refine(refine(S, a), b)` and
    /// `refine(S, a*b)` coincide exactly.
    pub fn refine(&self, m: usize) -> Result<ScenarioSet> {
        if m == 0 {
            return Err(Error::Domain("refinement factor must be at least 1".into()));
        }
        if m == 1 {
            return Ok(self.clone());
        }
        let root = match &self.root {
            Some(r) => Arc::clone(r),
            None => Arc::new(self.clone()),
        };
        let factor = self.factor * m;
        let div = factor as f64;
        let mut points = Vec::with_capacity(root.len() * factor);
        let mut weights = Vec::with_capacity(root.len() * factor);
        for (p, w) in root.points.iter().zip(&root.weights) {
            let w = w / div;
            for _ in 0..factor {
                points.push(p.clone());
                weights.push(w);
            }
        }
        Ok(ScenarioSet {
            points,
            weights,
            root: Some(root),
            factor,
        })
    }

    pub(crate) fn check_aligned(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.len() {
            return Err(Error::Misalignment {
                expected: self.len(),
                found: z.len(),
            });
        }
        Ok(())
    }

    /// Largest block size `d | factor` such that `z` is constant on every
    /// aligned run of `d` atoms.
    pub(crate) fn constant_block(&self, z: &[f64]) -> usize {
        self.constant_block_all(&[z])
    }

    /// Largest block size on which every slice in `zs` is constant.
    pub(crate) fn constant_block_all(&self, zs: &[&[f64]]) -> usize {
        if self.factor == 1 {
            return 1;
        }
        let mut divisors: Vec<usize> = (2..=self.factor).filter(|d| self.factor.is_multiple_of(*d)).collect();
        divisors.reverse();
        for d in divisors {
            if zs.iter().all(|z| blocks_constant(z, d)) {
                return d;
            }
        }
        1
    }

    pub(crate) fn collapse<'a>(&'a self, z: &'a [f64]) -> Collapsed<'a> {
        self.collapse_at(z, self.constant_block(z))
    }

    /// Collapses `z` onto blocks of size `d`; `z` must be constant on them.
    pub(crate) fn collapse_at<'a>(&'a self, z: &'a [f64], d: usize) -> Collapsed<'a> {
        if d == 1 {
            return Collapsed {
                weights: Cow::Borrowed(&self.weights),
                values: Cow::Borrowed(z),
                block: 1,
            };
        }
        let root = self.root();
        let coarse = self.factor / d;
        let values: Vec<f64> = z.iter().step_by(d).copied().collect();
        let weights: Vec<f64> = if coarse == 1 {
            root.weights.clone()
        } else {
            let div = coarse as f64;
            root.weights
                .iter()
                .flat_map(|w| std::iter::repeat_n(w / div, coarse))
                .collect()
        };
        Collapsed {
            weights: Cow::Owned(weights),
            values: Cow::Owned(values),
            block: d,
        }
    }

    /// `Σ_k w_k Z_k`, accumulated in ascending atom order.
    pub fn expectation(&self, z: &[f64]) -> Result<f64> {
        self.check_aligned(z)?;
        let c = self.collapse(z);
        Ok(dot(&c.weights, &c.values))
    }

    /// Writes the set as a text table with columns `w,h_1..h_{N_H}`.
    pub fn to_table(&self) -> String {
        let mut out = String::from("w");
        for j in 1..=self.dim() {
            let _ = write!(out, ",h_{j}");
        }
        out.push('\n');
        for (p, w) in self.points.iter().zip(&self.weights) {
            let _ = write!(out, "{w:.17e}");
            for v in p {
                let _ = write!(out, ",{v:.17e}");
            }
            out.push('\n');
        }
        out
    }

    /// Parses the format written by [`ScenarioSet::to_table`]. A header row
    /// and `#` comment lines are optional.
    pub fn from_table(text: &str) -> Result<Self> {
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with('w') {
                continue;
            }
            let mut fields = line.split(',').map(|f| f.trim().parse::<f64>());
            let w = match fields.next() {
                Some(Ok(w)) => w,
                _ => return Err(Error::Schema(format!("bad weight on line {}", lineno + 1))),
            };
            let p: std::result::Result<Vec<f64>, _> = fields.collect();
            let p = p.map_err(|e| Error::Schema(format!("line {}: {e}", lineno + 1)))?;
            weights.push(w);
            points.push(p);
        }
        Self::new(points, weights)
    }
}

pub(crate) fn blocks_constant(v: &[f64], d: usize) -> bool {
    v.chunks(d).all(|c| c.iter().all(|x| x.to_bits() == c[0].to_bits()))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}
