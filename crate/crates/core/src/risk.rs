//! Positively homogeneous risk measures with bounded risk envelopes.
//!
//! Every supported measure is evaluated through its envelope,
//! `ρ(Z) = sup_{ζ ∈ A} E{ζ Z}`, by an exact sort-and-fill over the atoms.
//! The lower form `−ρ(−Z) = inf_{ζ ∈ A} E{ζ Z}` is obtained by negation.
//!
//! | kind         | envelope                                            | γ          |
//! |--------------|-----------------------------------------------------|------------|
//! | expectation  | `{1}`                                               | 1          |
//! | cvar(β)      | `0 ≤ ζ ≤ 1/β`, `E ζ = 1`                            | 1/β        |
//! | mad(λ)       | `ζ = 1 + ζ' − E ζ'`, `|ζ'| ≤ λ`                     | 1 + 2λ     |
//! | mean_cvar    | `θ·1 + (1−θ)·A_cvar(β)`                             | max(1,1/β) |
//! | box_mean     | `a_k ≤ ζ_k ≤ b_k`, `E ζ = 1`                        | max |a|,|b| |

use std::cmp::Ordering;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probability::{dot, RandomVariable, ScenarioSet};
use crate::rng::Rng;

const ENVELOPE_TOL: f64 = 1e-12;

/// One risk measure acting on a single service component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum RiskSpec {
    Expectation,
    Cvar { beta: f64 },
    Mad { lambda: f64 },
    MeanCvar { theta: f64, beta: f64 },
    /// Per-atom density bounds plus the mean-one constraint.
    BoxMean { a: Vec<f64>, b: Vec<f64> },
}

/// One risk measure per service component, `ρ_i(Z) = ρ_i(Z_i)`.
pub type RiskVector = Vec<RiskSpec>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Maximizing density, attains `ρ(Z)`.
    Sup,
    /// Minimizing density, attains `−ρ(−Z)`.
    Inf,
}

impl RiskSpec {
    pub fn cvar(beta: f64) -> Result<Self> {
        let r = RiskSpec::Cvar { beta };
        r.validate()?;
        Ok(r)
    }

    pub fn mad(lambda: f64) -> Result<Self> {
        let r = RiskSpec::Mad { lambda };
        r.validate()?;
        Ok(r)
    }

    pub fn mean_cvar(theta: f64, beta: f64) -> Result<Self> {
        let r = RiskSpec::MeanCvar { theta, beta };
        r.validate()?;
        Ok(r)
    }

    pub fn box_mean(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        let r = RiskSpec::BoxMean { a, b };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let level_ok = |beta: f64| beta > 0.0 && beta <= 1.0;
        match self {
            RiskSpec::Expectation => Ok(()),
            RiskSpec::Cvar { beta } if level_ok(*beta) => Ok(()),
            RiskSpec::Cvar { beta } => Err(Error::InvalidRisk(format!("cvar level {beta} outside (0, 1]"))),
            RiskSpec::Mad { lambda } if *lambda >= 0.0 && lambda.is_finite() => Ok(()),
            RiskSpec::Mad { lambda } => Err(Error::InvalidRisk(format!("mad trade-off {lambda} is negative"))),
            RiskSpec::MeanCvar { theta, beta } => {
                if !(0.0..=1.0).contains(theta) {
                    return Err(Error::InvalidRisk(format!("mixing weight {theta} outside [0, 1]")));
                }
                if !level_ok(*beta) {
                    return Err(Error::InvalidRisk(format!("cvar level {beta} outside (0, 1]")));
                }
                Ok(())
            }
            RiskSpec::BoxMean { a, b } => {
                if a.len() != b.len() || a.is_empty() {
                    return Err(Error::InvalidRisk("box bounds must be non-empty and of equal length".into()));
                }
                for (k, (lo, hi)) in a.iter().zip(b).enumerate() {
                    if !lo.is_finite() || !hi.is_finite() || lo > hi {
                        return Err(Error::InvalidRisk(format!("box bounds at atom {k} are invalid ({lo} > {hi})")));
                    }
                }
                Ok(())
            }
        }
    }

    /// Checks the parts of the specification that depend on the scenario set.
    pub fn validate_on(&self, s: &ScenarioSet) -> Result<()> {
        self.validate()?;
        if let RiskSpec::BoxMean { a, b } = self {
            if a.len() != s.len() {
                return Err(Error::Misalignment {
                    expected: s.len(),
                    found: a.len(),
                });
            }
            let lower = dot(s.weights(), a);
            let upper = dot(s.weights(), b);
            if lower > 1.0 + ENVELOPE_TOL || upper < 1.0 - ENVELOPE_TOL {
                return Err(Error::InfeasibleEnvelope { lower, upper });
            }
        }
        Ok(())
    }

    /// The same measure on `refine(S, m)`; per-atom data is duplicated.
    pub fn refined(&self, m: usize) -> RiskSpec {
        match self {
            RiskSpec::BoxMean { a, b } => RiskSpec::BoxMean {
                a: crate::probability::duplicate_rows(a, m),
                b: crate::probability::duplicate_rows(b, m),
            },
            other => other.clone(),
        }
    }

    /// Whether the lower form admits the variational `t`-representation
    /// `θ E Z + (1−θ) max_t { t − E(t − Z)_+ / β }`.
    pub(crate) fn cvar_family(&self) -> Option<(f64, f64)> {
        match *self {
            RiskSpec::Expectation => Some((1.0, 1.0)),
            RiskSpec::Cvar { beta } => Some((0.0, beta)),
            RiskSpec::MeanCvar { theta, beta } => Some((theta, beta)),
            _ => None,
        }
    }

    pub fn upper(&self, s: &ScenarioSet, z: &[f64]) -> Result<f64> {
        upper_evaluate(self, s, z)
    }

    pub fn lower(&self, s: &ScenarioSet, z: &[f64]) -> Result<f64> {
        lower_evaluate(self, s, z)
    }
}

fn check_input(risk: &RiskSpec, s: &ScenarioSet, z: &[f64]) -> Result<()> {
    s.check_aligned(z)?;
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("random variable has non-finite values".into()));
    }
    if let RiskSpec::BoxMean { .. } = risk {
        risk.validate_on(s)?;
    } else {
        risk.validate()?;
    }
    Ok(())
}

/// Atoms sorted by value descending; ties keep ascending atom index.
fn descending_order(z: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..z.len()).collect();
    idx.sort_by(|&i, &j| z[j].partial_cmp(&z[i]).unwrap_or(Ordering::Equal));
    idx
}

fn cvar_sup_density(w: &[f64], z: &[f64], beta: f64) -> Vec<f64> {
    if beta >= 1.0 {
        return vec![1.0; z.len()];
    }
    let mut zeta = vec![0.0; z.len()];
    let full = 1.0 / beta;
    let mut remaining = beta;
    for k in descending_order(z) {
        if remaining <= 0.0 {
            break;
        }
        if w[k] <= remaining {
            zeta[k] = full;
        } else {
            zeta[k] = remaining / (w[k] * beta);
        }
        remaining -= w[k];
    }
    zeta
}

fn mad_sup_density(w: &[f64], z: &[f64], lambda: f64) -> Vec<f64> {
    let mean = dot(w, z);
    let shift: Vec<f64> = z
        .iter()
        .map(|v| match v.partial_cmp(&mean) {
            Some(Ordering::Greater) => lambda,
            Some(Ordering::Less) => -lambda,
            _ => 0.0,
        })
        .collect();
    let shift_mean = dot(w, &shift);
    shift.iter().map(|d| 1.0 + d - shift_mean).collect()
}

fn box_sup_density(w: &[f64], z: &[f64], a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let mut zeta = a.to_vec();
    let lower = dot(w, a);
    let upper = dot(w, b);
    if lower > 1.0 + ENVELOPE_TOL || upper < 1.0 - ENVELOPE_TOL {
        return Err(Error::InfeasibleEnvelope { lower, upper });
    }
    let mut budget = 1.0 - lower;
    for k in descending_order(z) {
        if budget <= 0.0 {
            break;
        }
        let room = w[k] * (b[k] - a[k]);
        if room <= budget {
            zeta[k] = b[k];
            budget -= room;
        } else {
            zeta[k] = a[k] + budget / w[k];
            budget = 0.0;
        }
    }
    Ok(zeta)
}

fn weighted_density_value(w: &[f64], zeta: &[f64], z: &[f64]) -> f64 {
    let mut acc = 0.0;
    for k in 0..z.len() {
        acc += w[k] * zeta[k] * z[k];
    }
    acc
}

/// Sup-density on a (possibly collapsed) weight/value pair.
fn sup_density_on(risk: &RiskSpec, w: &[f64], z: &[f64], a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    Ok(match *risk {
        RiskSpec::Expectation => vec![1.0; z.len()],
        RiskSpec::Cvar { beta } => cvar_sup_density(w, z, beta),
        RiskSpec::Mad { lambda } => mad_sup_density(w, z, lambda),
        RiskSpec::MeanCvar { theta, beta } => cvar_sup_density(w, z, beta)
            .into_iter()
            .map(|c| theta + (1.0 - theta) * c)
            .collect(),
        RiskSpec::BoxMean { .. } => box_sup_density(w, z, a, b)?,
    })
}

fn upper_on(risk: &RiskSpec, w: &[f64], z: &[f64], a: &[f64], b: &[f64]) -> Result<f64> {
    Ok(match *risk {
        RiskSpec::Expectation => dot(w, z),
        RiskSpec::Cvar { beta } if beta >= 1.0 => dot(w, z),
        RiskSpec::Cvar { beta } => weighted_density_value(w, &cvar_sup_density(w, z, beta), z),
        RiskSpec::Mad { lambda: 0.0 } => dot(w, z),
        RiskSpec::Mad { lambda } => {
            let mean = dot(w, z);
            let mut dev = 0.0;
            for k in 0..z.len() {
                dev += w[k] * (z[k] - mean).abs();
            }
            mean + lambda * dev
        }
        RiskSpec::MeanCvar { theta, beta } => {
            let mean = dot(w, z);
            let tail = if beta >= 1.0 {
                mean
            } else {
                weighted_density_value(w, &cvar_sup_density(w, z, beta), z)
            };
            theta * mean + (1.0 - theta) * tail
        }
        RiskSpec::BoxMean { .. } => weighted_density_value(w, &box_sup_density(w, z, a, b)?, z),
    })
}

/// Runs `f` on the coarsest block-constant view of `z` (and of box bounds).
fn with_collapsed<T>(
    risk: &RiskSpec,
    s: &ScenarioSet,
    z: &[f64],
    f: impl FnOnce(&[f64], &[f64], &[f64], &[f64]) -> Result<T>,
) -> Result<(T, usize)> {
    match risk {
        RiskSpec::BoxMean { a, b } => {
            let d = s.constant_block_all(&[z, a, b]);
            if d == 1 {
                return Ok((f(s.weights(), z, a, b)?, 1));
            }
            let c = s.collapse_at(z, d);
            let ca: Vec<f64> = a.iter().step_by(d).copied().collect();
            let cb: Vec<f64> = b.iter().step_by(d).copied().collect();
            Ok((f(&c.weights, &c.values, &ca, &cb)?, d))
        }
        _ => {
            let c = s.collapse(z);
            Ok((f(&c.weights, &c.values, &[], &[])?, c.block))
        }
    }
}

/// `ρ(Z) = sup_{ζ ∈ A} E{ζ Z}`.
pub fn upper_evaluate(risk: &RiskSpec, s: &ScenarioSet, z: &[f64]) -> Result<f64> {
    check_input(risk, s, z)?;
    with_collapsed(risk, s, z, |w, v, a, b| upper_on(risk, w, v, a, b)).map(|(x, _)| x)
}

/// `−ρ(−Z) = inf_{ζ ∈ A} E{ζ Z}`.
pub fn lower_evaluate(risk: &RiskSpec, s: &ScenarioSet, z: &[f64]) -> Result<f64> {
    let neg: Vec<f64> = z.iter().map(|v| -v).collect();
    Ok(-upper_evaluate(risk, s, &neg)?)
}

/// A density in the envelope attaining the sup (or inf) of `E{ζ Z}`.
pub fn worst_case_density(risk: &RiskSpec, s: &ScenarioSet, z: &[f64], direction: Direction) -> Result<RandomVariable> {
    check_input(risk, s, z)?;
    let owned;
    let target: &[f64] = match direction {
        Direction::Sup => z,
        Direction::Inf => {
            owned = z.iter().map(|v| -v).collect::<Vec<f64>>();
            &owned
        }
    };
    let (zeta, block) = with_collapsed(risk, s, target, |w, v, a, b| sup_density_on(risk, w, v, a, b))?;
    Ok(RandomVariable(crate::probability::duplicate_rows(&zeta, block)))
}

/// `CVaR_β(Z) = inf_t { t + E(Z − t)_+ / β }`, minimized over the atom values.
pub fn primal_cvar(beta: f64, s: &ScenarioSet, z: &[f64]) -> Result<f64> {
    RiskSpec::Cvar { beta }.validate()?;
    s.check_aligned(z)?;
    let w = s.weights();
    let mut best = f64::INFINITY;
    for &t in z {
        let mut excess = 0.0;
        for k in 0..z.len() {
            excess += w[k] * (z[k] - t).max(0.0);
        }
        let value = t + excess / beta;
        if value < best {
            best = value;
        }
    }
    Ok(best)
}

/// Uniform bound `γ` with `|ζ| ≤ γ` for every density in the envelope.
pub fn envelope_gamma(risk: &RiskSpec) -> f64 {
    match risk {
        RiskSpec::Expectation => 1.0,
        RiskSpec::Cvar { beta } => 1.0 / beta,
        RiskSpec::Mad { lambda } => 1.0 + 2.0 * lambda,
        RiskSpec::MeanCvar { beta, .. } => f64::max(1.0, 1.0 / beta),
        RiskSpec::BoxMean { a, b } => a
            .iter()
            .chain(b.iter())
            .fold(0.0, |acc: f64, v| acc.max(v.abs())),
    }
}

/// Whether `zeta` lies in the envelope of `risk` on `s` (within `tol`).
pub fn is_admissible(risk: &RiskSpec, s: &ScenarioSet, zeta: &[f64], tol: f64) -> bool {
    if zeta.len() != s.len() {
        return false;
    }
    let w = s.weights();
    let mean = dot(w, zeta);
    match risk {
        RiskSpec::Expectation => zeta.iter().all(|v| (v - 1.0).abs() <= tol),
        RiskSpec::Cvar { beta } => {
            (mean - 1.0).abs() <= tol && zeta.iter().all(|v| *v >= -tol && *v <= 1.0 / beta + tol)
        }
        RiskSpec::Mad { lambda } => {
            // ζ = 1 + ζ' − Eζ' with |ζ'| ≤ λ  ⇔  E ζ = 1 and max ζ − min ζ ≤ 2λ.
            let hi = zeta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = zeta.iter().copied().fold(f64::INFINITY, f64::min);
            (mean - 1.0).abs() <= tol && hi - lo <= 2.0 * lambda + tol
        }
        RiskSpec::MeanCvar { theta, beta } => {
            let lo = *theta;
            let hi = theta + (1.0 - theta) / beta;
            (mean - 1.0).abs() <= tol && zeta.iter().all(|v| *v >= lo - tol && *v <= hi + tol)
        }
        RiskSpec::BoxMean { a, b } => {
            (mean - 1.0).abs() <= tol
                && zeta
                    .iter()
                    .zip(a.iter().zip(b))
                    .all(|(v, (lo, hi))| *v >= lo - tol && *v <= hi + tol)
        }
    }
}

/// A seeded envelope-feasible density: a random convex combination of
/// envelope vertices picked by random directions.
pub fn sample_density(risk: &RiskSpec, s: &ScenarioSet, rng: &mut Rng) -> Result<RandomVariable> {
    const VERTICES: usize = 3;
    let k = s.len();
    let mut mix = vec![0.0; k];
    let mut coeffs: Vec<f64> = (0..VERTICES).map(|_| rng.random::<f64>() + 1e-3).collect();
    let total: f64 = coeffs.iter().sum();
    coeffs.iter_mut().for_each(|c| *c /= total);
    for c in coeffs {
        let direction: Vec<f64> = (0..k).map(|_| rng.random::<f64>() - 0.5).collect();
        let zeta = worst_case_density(risk, s, &direction, Direction::Sup)?;
        for (m, v) in mix.iter_mut().zip(zeta.iter()) {
            *m += c * v;
        }
    }
    Ok(RandomVariable(mix))
}
