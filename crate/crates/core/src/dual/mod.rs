//! Lagrangian dual of a risk-constrained allocation problem.
//!
//! With multipliers `λ = (λ_g, λ_ρ) ≥ 0`,
//!
//! ```text
//! L(x, p, λ) = g⁰(x) + ⟨λ_g, g(x)⟩ + ⟨λ_ρ, −ρ(−f(p)) − x⟩
//! D(λ)       = sup_{x ∈ X, p ∈ Π} L(x, p, λ)
//! ```
//!
//! `L` separates into an `x`-part, a concave program over the box, and a
//! `p`-part, a nonconvex search over the policy grid. [`solve_dual`] runs
//! projected subgradient descent on `D`; [`recover_primal`] time-shares the
//! policies it visits into a near-feasible primal point.

mod inner;
mod recover;

use std::collections::HashMap;
use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use inner::{maximize_over_policy, maximize_over_x, PolicyMax, XMax, GRID_LIMIT};
pub use recover::{recover_primal, PrimalCandidate};

use crate::error::{Error, Result};
use crate::model::{Policy, RcpInstance};

/// Search strategy for the nonconvex `p`-part of the Lagrangian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum InnerMethod {
    /// Exact global maximization over the policy grid.
    #[default]
    Exhaustive,
    /// Cyclic per-atom improvement with seeded restarts.
    Coordinate,
    /// Alternation between worst-case densities and per-atom maximization.
    Minimax,
}

impl fmt::Display for InnerMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InnerMethod::Exhaustive => "exhaustive",
            InnerMethod::Coordinate => "coordinate",
            InnerMethod::Minimax => "minimax",
        })
    }
}

/// Solver options; the `dual` section of an instance configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DualOptions {
    pub max_iters: usize,
    pub eta0: f64,
    pub method: InnerMethod,
    pub seed: u64,
    pub refine_factor: usize,
    /// Feasibility tolerance on the minimum slack.
    pub tol: f64,
}

impl Default for DualOptions {
    fn default() -> Self {
        DualOptions {
            max_iters: 500,
            eta0: 1.0,
            method: InnerMethod::Exhaustive,
            seed: 0,
            refine_factor: 1,
            tol: 1e-6,
        }
    }
}

impl DualOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Schema("max_iters must be at least 1".into()));
        }
        if !(self.eta0 > 0.0 && self.eta0.is_finite()) {
            return Err(Error::Schema("eta0 must be positive".into()));
        }
        if self.refine_factor == 0 {
            return Err(Error::Schema("refine_factor must be at least 1".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::Schema("tol must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Multipliers of the utility constraints (`util`) and risk constraints (`risk`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Multipliers {
    pub util: Vec<f64>,
    pub risk: Vec<f64>,
}

impl Multipliers {
    pub fn zeros(inst: &RcpInstance) -> Self {
        Multipliers {
            util: vec![0.0; inst.n_constraints()],
            risk: vec![0.0; inst.n_services()],
        }
    }

    /// Checks shapes and signs; indices count utility multipliers first.
    pub fn validate(&self, inst: &RcpInstance) -> Result<()> {
        if self.util.len() != inst.n_constraints() {
            return Err(Error::DimensionMismatch {
                index: 0,
                expected: inst.n_constraints(),
                found: self.util.len(),
            });
        }
        if self.risk.len() != inst.n_services() {
            return Err(Error::DimensionMismatch {
                index: 1,
                expected: inst.n_services(),
                found: self.risk.len(),
            });
        }
        for (index, value) in self.util.iter().chain(&self.risk).enumerate() {
            if !(*value >= 0.0) || !value.is_finite() {
                return Err(Error::NegativeMultiplier { index, value: *value });
            }
        }
        Ok(())
    }

    fn dot(&self, other: &Multipliers) -> f64 {
        crate::probability::dot(&self.util, &other.util) + crate::probability::dot(&self.risk, &other.risk)
    }
}

/// `L(x, p, λ)` evaluated exactly.
pub fn lagrangian(inst: &RcpInstance, x: &[f64], p: &Policy, lambda: &Multipliers) -> Result<f64> {
    lambda.validate(inst)?;
    let slack = inst.constraint_slack(x, p)?;
    let slacks = Multipliers {
        util: slack.util,
        risk: slack.risk,
    };
    Ok(inst.objective().value(x) + lambda.dot(&slacks))
}

/// `D(λ)` together with the maximizers and the subgradient there.
#[derive(Debug, Clone, PartialEq)]
pub struct DualValue {
    pub value: f64,
    pub x: Vec<f64>,
    /// Grid index chosen at each atom.
    pub choice: Vec<usize>,
    /// Risk vector `(−ρ_i(−f_i(p̂)))_i`.
    pub risk: Vec<f64>,
    /// `(g(x̂), −ρ(−f(p̂)) − x̂)`: the constraint values at the maximizers.
    pub subgradient: Multipliers,
    /// Whether both inner problems were solved to global optimality.
    pub exact: bool,
}

/// Evaluates `D(λ)`; `seed` drives the randomized inner methods.
pub fn dual_value(inst: &RcpInstance, lambda: &Multipliers, method: InnerMethod, seed: u64) -> Result<DualValue> {
    lambda.validate(inst)?;
    let xm = maximize_over_x(inst, lambda)?;
    let pm = maximize_over_policy(inst, &lambda.risk, method, seed)?;
    let subgradient = Multipliers {
        util: inst.constraints().iter().map(|g| g.value(&xm.x)).collect(),
        risk: pm.risk.iter().zip(&xm.x).map(|(r, v)| r - v).collect(),
    };
    Ok(DualValue {
        value: xm.value + pm.value,
        exact: xm.exact && pm.exact,
        x: xm.x,
        choice: pm.choice,
        risk: pm.risk,
        subgradient,
    })
}

/// One iteration of the subgradient method.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub iter: usize,
    pub multipliers: Multipliers,
    pub dual: f64,
    pub x: Vec<f64>,
    /// Index into [`DualSolveResult::choices`].
    pub policy: usize,
    pub subgradient: Multipliers,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualSolveResult {
    pub best_dual: f64,
    pub best_multipliers: Multipliers,
    pub best_iter: usize,
    pub trace: Vec<TraceEntry>,
    /// Distinct policy maximizers in order of first appearance, as grid choices.
    pub choices: Vec<Vec<usize>>,
    /// Risk vector of each entry of `choices`.
    pub risk_vectors: Vec<Vec<f64>>,
    pub method: InnerMethod,
    /// Whether every inner solve was exact.
    pub exact: bool,
}

impl DualSolveResult {
    /// Trace as CSV with columns `iter,D,lambda_g*,lambda_r*,slack_g*,slack_r*`.
    pub fn trace_csv(&self) -> String {
        let (ng, nr) = self
            .trace
            .first()
            .map(|e| (e.multipliers.util.len(), e.multipliers.risk.len()))
            .unwrap_or((0, 0));
        let mut out = String::from("iter,D");
        for (prefix, n) in [("lambda_g", ng), ("lambda_r", nr), ("slack_g", ng), ("slack_r", nr)] {
            for i in 1..=n {
                let _ = write!(out, ",{prefix}{i}");
            }
        }
        out.push('\n');
        for e in &self.trace {
            let _ = write!(out, "{},{}", e.iter, e.dual);
            for v in e
                .multipliers
                .util
                .iter()
                .chain(&e.multipliers.risk)
                .chain(&e.subgradient.util)
                .chain(&e.subgradient.risk)
            {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Projected subgradient descent `λ ← max(0, λ − η0/√(t+1) · s)` from `λ = 0`.
pub fn solve_dual(inst: &RcpInstance, options: &DualOptions) -> Result<DualSolveResult> {
    options.validate()?;
    let mut lambda = Multipliers::zeros(inst);
    let mut trace = Vec::with_capacity(options.max_iters);
    let mut choices: Vec<Vec<usize>> = Vec::new();
    let mut risk_vectors = Vec::new();
    let mut index: HashMap<Vec<usize>, usize> = HashMap::new();
    let mut best: Option<(f64, usize)> = None;
    let mut exact = true;
    for t in 0..options.max_iters {
        let dv = dual_value(inst, &lambda, options.method, options.seed.wrapping_add(t as u64))?;
        if !dv.value.is_finite() {
            return Err(Error::Domain(format!("dual value is not finite at iteration {t}")));
        }
        exact &= dv.exact;
        let policy = *index.entry(dv.choice.clone()).or_insert_with(|| {
            choices.push(dv.choice.clone());
            risk_vectors.push(dv.risk.clone());
            choices.len() - 1
        });
        if best.is_none_or(|(b, _)| dv.value < b) {
            best = Some((dv.value, t));
        }
        let eta = options.eta0 / ((t + 1) as f64).sqrt();
        let step = |l: &[f64], s: &[f64]| -> Vec<f64> { l.iter().zip(s).map(|(a, b)| (a - eta * b).max(0.0)).collect() };
        let next = Multipliers {
            util: step(&lambda.util, &dv.subgradient.util),
            risk: step(&lambda.risk, &dv.subgradient.risk),
        };
        trace.push(TraceEntry {
            iter: t,
            multipliers: std::mem::replace(&mut lambda, next),
            dual: dv.value,
            x: dv.x,
            policy,
            subgradient: dv.subgradient,
        });
    }
    let (best_dual, best_iter) = best.ok_or(Error::EmptyTrace)?;
    Ok(DualSolveResult {
        best_dual,
        best_multipliers: trace[best_iter].multipliers.clone(),
        best_iter,
        trace,
        choices,
        risk_vectors,
        method: options.method,
        exact,
    })
}
