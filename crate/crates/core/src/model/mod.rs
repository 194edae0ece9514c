//! Problem instances: utilities, service functions, feasible sets and risks.
//!
//! An [`RcpInstance`] is immutable once built. Building checks dimensions,
//! the concavity of every utility (by membership in the closed [`Utility`]
//! family), finiteness of the service on the policy grid, and a strictly
//! feasible point.

mod config;
mod policy;
mod service;
mod utility;

use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use config::{InstanceConfig, ScenarioConfig, UtilityConfig, WitnessConfig};
pub use policy::{Policy, PolicyClass};
pub use service::{CallbackService, ServiceFn, ServiceSpec, TableService};
pub use utility::Utility;

use crate::error::{Error, Result};
use crate::probability::ScenarioSet;
use crate::risk::{lower_evaluate, RiskSpec, RiskVector};
use crate::rng;

/// Strictness margin required of a Slater point.
pub const SLATER_MARGIN: f64 = 1e-6;
const SLATER_PROBES: usize = 1000;
const BOX_TOL: f64 = 1e-9;

/// Axis-aligned box `X = [lower, upper]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct XBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl XBox {
    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.lower.len() != n || self.upper.len() != n {
            return Err(Error::Schema(format!(
                "x_box must have {n} components, found {} and {}",
                self.lower.len(),
                self.upper.len()
            )));
        }
        for (i, (lo, hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() || lo > hi {
                return Err(Error::Schema(format!("x_box component {} is empty or unbounded", i + 1)));
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= lo - BOX_TOL && *v <= hi + BOX_TOL)
    }

    pub fn clamp(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (lo, hi))| v.clamp(*lo, *hi))
            .collect()
    }
}

/// Risk and utility slacks of a pair `(x, p)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slack {
    pub risk: Vec<f64>,
    pub util: Vec<f64>,
}

impl Slack {
    pub fn min(&self) -> f64 {
        self.risk.iter().chain(&self.util).copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_feasible(&self, tol: f64) -> bool {
        self.min() >= -tol
    }
}

/// Strictly feasible point recorded at build time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlaterWitness {
    pub x: Vec<f64>,
    pub policy: Policy,
    pub margin: f64,
}

/// Admissible policy grid at one unrefined atom, with the service there.
#[derive(Debug, Clone)]
pub struct AtomGrid {
    pub points: Vec<Vec<f64>>,
    pub services: Vec<Vec<f64>>,
}

/// Parts of an instance before validation.
#[derive(Debug, Clone)]
pub struct InstanceParts {
    pub scenarios: ScenarioSet,
    pub service: ServiceSpec,
    pub risks: RiskVector,
    pub objective: Utility,
    pub constraints: Vec<Utility>,
    pub x_box: XBox,
    pub policy_class: PolicyClass,
    /// `(x, policy)`; a one-row policy is broadcast to every atom.
    pub witness: Option<(Vec<f64>, Policy)>,
    pub seed: u64,
}

/// Validated problem instance.
#[derive(Debug, Clone)]
pub struct RcpInstance {
    scenarios: ScenarioSet,
    service: ServiceSpec,
    risks: RiskVector,
    objective: Utility,
    constraints: Vec<Utility>,
    x_box: XBox,
    policy_class: PolicyClass,
    witness: SlaterWitness,
    seed: u64,
    grid: Arc<Vec<AtomGrid>>,
}

impl RcpInstance {
    /// Validates `parts` and establishes a Slater point.
    pub fn build(parts: InstanceParts) -> Result<RcpInstance> {
        let InstanceParts {
            scenarios,
            service,
            risks,
            objective,
            constraints,
            x_box,
            policy_class,
            witness,
            seed,
        } = parts;
        policy_class.validate()?;
        service.validate(scenarios.dim(), policy_class.dim())?;
        let n = service.output_dim(policy_class.dim());
        if risks.len() != n {
            return Err(Error::Schema(format!("{} risk measures for {n} service components", risks.len())));
        }
        for r in &risks {
            r.validate_on(&scenarios)?;
        }
        x_box.validate(n)?;
        objective.validate(n, &x_box.lower)?;
        for g in &constraints {
            g.validate(n, &x_box.lower)?;
        }
        let root = scenarios.root();
        let mut grid = Vec::with_capacity(root.len());
        for (j, h) in root.points().iter().enumerate() {
            let points = policy_class.grid_points(h);
            if points.is_empty() {
                return Err(Error::Schema(format!("policy grid is empty at atom {j}")));
            }
            let services: Vec<Vec<f64>> = points.iter().map(|p| service.evaluate(p, h)).collect();
            if services.iter().any(|f| f.len() != n || f.iter().any(|v| !v.is_finite())) {
                return Err(Error::Schema(format!("service is not finite on the policy grid at atom {j}")));
            }
            grid.push(AtomGrid { points, services });
        }
        let mut inst = RcpInstance {
            scenarios,
            service,
            risks,
            objective,
            constraints,
            x_box,
            policy_class,
            witness: SlaterWitness {
                x: Vec::new(),
                policy: Policy::from_rows(Vec::new()),
                margin: f64::NAN,
            },
            seed,
            grid: Arc::new(grid),
        };
        inst.witness = match witness {
            Some((x, policy)) => inst.verify_witness(x, policy)?,
            None => inst.probe_witness()?,
        };
        Ok(inst)
    }

    fn verify_witness(&self, x: Vec<f64>, policy: Policy) -> Result<SlaterWitness> {
        let policy = if policy.len() == 1 && self.len() != 1 {
            Policy::constant(self.len(), policy.row(0).to_vec())
        } else {
            policy
        };
        if !self.x_box.contains(&x) {
            return Err(Error::Schema("slater witness x lies outside x_box".into()));
        }
        let margin = self.constraint_slack(&x, &policy)?.min();
        if !(margin >= SLATER_MARGIN) {
            return Err(Error::SlaterNotVerified { margin });
        }
        Ok(SlaterWitness { x, policy, margin })
    }

    fn probe_witness(&self) -> Result<SlaterWitness> {
        let mut rng = rng::stream(self.seed, "slater");
        let mut best: Option<SlaterWitness> = None;
        for trial in 0..SLATER_PROBES {
            let choice: Vec<usize> = (0..self.len())
                .map(|k| rng.random_range(0..self.atom_grid(k).points.len()))
                .collect();
            let risk = self.risk_vector(&self.choice_table(&choice))?;
            let x: Vec<f64> = (0..self.x_box.dim())
                .map(|i| {
                    let lo = self.x_box.lower[i];
                    let hi = if trial % 2 == 0 {
                        self.x_box.upper[i]
                    } else {
                        self.x_box.upper[i].min(risk[i]).max(lo)
                    };
                    lo + rng.random::<f64>() * (hi - lo)
                })
                .collect();
            let slack = self.slack_from_risk(&x, &risk);
            let margin = slack.min();
            if best.as_ref().is_none_or(|b| margin > b.margin) {
                best = Some(SlaterWitness {
                    x,
                    policy: self.choice_policy(&choice),
                    margin,
                });
            }
        }
        match best {
            Some(w) if w.margin >= SLATER_MARGIN => Ok(w),
            Some(w) => Err(Error::SlaterNotVerified { margin: w.margin }),
            None => Err(Error::SlaterNotVerified { margin: f64::NEG_INFINITY }),
        }
    }

    pub fn scenarios(&self) -> &ScenarioSet {
        &self.scenarios
    }

    /// Number of atoms `K` (after refinement).
    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    pub fn service(&self) -> &ServiceSpec {
        &self.service
    }

    pub fn risks(&self) -> &[RiskSpec] {
        &self.risks
    }

    pub fn objective(&self) -> &Utility {
        &self.objective
    }

    pub fn constraints(&self) -> &[Utility] {
        &self.constraints
    }

    pub fn x_box(&self) -> &XBox {
        &self.x_box
    }

    pub fn policy_class(&self) -> &PolicyClass {
        &self.policy_class
    }

    pub fn witness(&self) -> &SlaterWitness {
        &self.witness
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of service components `N`.
    pub fn n_services(&self) -> usize {
        self.risks.len()
    }

    /// Number of utility constraints `N_g`.
    pub fn n_constraints(&self) -> usize {
        self.constraints.len()
    }

    /// Policy grid at atom `k`, shared by all copies of the same root atom.
    pub fn atom_grid(&self, k: usize) -> &AtomGrid {
        &self.grid[self.scenarios.root_index(k)]
    }

    /// The same problem on `refine(S, m)`.
    pub fn refined(&self, m: usize) -> Result<RcpInstance> {
        Ok(RcpInstance {
            scenarios: self.scenarios.refine(m)?,
            service: self.service.clone(),
            risks: self.risks.iter().map(|r| r.refined(m)).collect(),
            objective: self.objective.clone(),
            constraints: self.constraints.clone(),
            x_box: self.x_box.clone(),
            policy_class: self.policy_class.clone(),
            witness: SlaterWitness {
                x: self.witness.x.clone(),
                policy: self.witness.policy.refine(m),
                margin: self.witness.margin,
            },
            seed: self.seed,
            grid: Arc::clone(&self.grid),
        })
    }

    /// `f_i(p(h_k), h_k)` as an `N × K` table.
    pub fn service_table(&self, p: &Policy) -> Result<Vec<Vec<f64>>> {
        if p.len() != self.len() {
            return Err(Error::Misalignment {
                expected: self.len(),
                found: p.len(),
            });
        }
        let mut table = vec![Vec::with_capacity(self.len()); self.n_services()];
        for (k, row) in p.rows().iter().enumerate() {
            let h = self.scenarios.point(k);
            if !self.policy_class.admissible(row, h) {
                return Err(Error::InadmissiblePolicy { scenario: k });
            }
            for (i, v) in self.service.evaluate(row, h).into_iter().enumerate() {
                table[i].push(v);
            }
        }
        Ok(table)
    }

    /// Service table of the grid policy choosing point `choice[k]` at atom `k`.
    pub fn choice_table(&self, choice: &[usize]) -> Vec<Vec<f64>> {
        let mut table = vec![Vec::with_capacity(choice.len()); self.n_services()];
        for (k, c) in choice.iter().enumerate() {
            for (i, v) in self.atom_grid(k).services[*c].iter().enumerate() {
                table[i].push(*v);
            }
        }
        table
    }

    pub fn choice_policy(&self, choice: &[usize]) -> Policy {
        Policy::from_rows(
            choice
                .iter()
                .enumerate()
                .map(|(k, c)| self.atom_grid(k).points[*c].clone())
                .collect(),
        )
    }

    /// `(−ρ_i(−f_i))_i` for a service table.
    pub fn risk_vector(&self, table: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.risks
            .iter()
            .zip(table)
            .map(|(r, z)| lower_evaluate(r, &self.scenarios, z))
            .collect()
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.x_box.dim() {
            return Err(Error::DimensionMismatch {
                index: 0,
                expected: self.x_box.dim(),
                found: x.len(),
            });
        }
        if !self.x_box.contains(x) {
            return Err(Error::Domain("x lies outside X".into()));
        }
        Ok(())
    }

    pub(crate) fn slack_from_risk(&self, x: &[f64], risk: &[f64]) -> Slack {
        Slack {
            risk: risk.iter().zip(x).map(|(r, v)| r - v).collect(),
            util: self.constraints.iter().map(|g| g.value(x)).collect(),
        }
    }

    /// Risk slacks `−ρ_i(−f_i) − x_i` and utility slacks `g(x)`.
    pub fn constraint_slack(&self, x: &[f64], p: &Policy) -> Result<Slack> {
        self.check_x(x)?;
        let risk = self.risk_vector(&self.service_table(p)?)?;
        Ok(self.slack_from_risk(x, &risk))
    }

    /// `g⁰(x)` when every slack is at least `−tol`.
    pub fn feasible_value(&self, x: &[f64], p: &Policy, tol: f64) -> Result<Option<f64>> {
        let slack = self.constraint_slack(x, p)?;
        Ok(slack.is_feasible(tol).then(|| self.objective.value(x)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(witness: Option<(Vec<f64>, Policy)>) -> Result<RcpInstance> {
        RcpInstance::build(InstanceParts {
            scenarios: ScenarioSet::uniform(vec![vec![1.0]]).unwrap(),
            service: ServiceSpec::LinearGain { power_cost: false },
            risks: vec![RiskSpec::Expectation],
            objective: Utility::WeightedSum {
                weights: vec![1.0],
                offset: 0.0,
            },
            constraints: vec![],
            x_box: XBox {
                lower: vec![0.0],
                upper: vec![1.0],
            },
            policy_class: PolicyClass::UniformBox {
                dim: 1,
                upper: 1.0,
                grid: 2,
            },
            witness,
            seed: 1,
        })
    }

    #[test]
    fn toy_builds_with_witness() {
        let inst = toy(Some((vec![0.5], Policy::constant(1, vec![1.0])))).unwrap();
        assert_eq!(inst.witness().margin, 0.5);
    }

    #[test]
    fn boundary_witness_rejected() {
        let err = toy(Some((vec![1.0], Policy::constant(1, vec![1.0])))).unwrap_err();
        assert!(matches!(err, Error::SlaterNotVerified { .. }));
    }

    #[test]
    fn probe_finds_witness() {
        let inst = toy(None).unwrap();
        assert!(inst.witness().margin >= SLATER_MARGIN);
    }

    #[test]
    fn slack_and_feasible_value() {
        let inst = toy(None).unwrap();
        let one = Policy::constant(1, vec![1.0]);
        let zero = Policy::constant(1, vec![0.0]);
        assert_eq!(inst.constraint_slack(&[0.5], &one).unwrap().risk, vec![0.5]);
        assert_eq!(inst.constraint_slack(&[1.0], &one).unwrap().risk, vec![0.0]);
        assert_eq!(inst.constraint_slack(&[1.0], &zero).unwrap().risk, vec![-1.0]);
        assert_eq!(inst.feasible_value(&[1.0], &one, 0.0).unwrap(), Some(1.0));
        assert_eq!(inst.feasible_value(&[1.0], &zero, 0.0).unwrap(), None);
        assert_eq!(inst.feasible_value(&[1.0], &zero, 2.0).unwrap(), Some(1.0));
    }

    #[test]
    fn inadmissible_policy_rejected() {
        let inst = toy(None).unwrap();
        let bad = Policy::constant(1, vec![1.5]);
        assert!(matches!(inst.service_table(&bad), Err(Error::InadmissiblePolicy { scenario: 0 })));
    }

    #[test]
    fn refined_table_duplicates_rows() {
        let inst = RcpInstance::build(InstanceParts {
            scenarios: ScenarioSet::uniform(vec![vec![1.0, 0.5], vec![0.2, 2.0]]).unwrap(),
            service: ServiceSpec::InterferenceRate {
                noise: 1.0,
                coupling: 0.5,
                power_cost: true,
            },
            risks: vec![RiskSpec::cvar(0.5).unwrap(), RiskSpec::Expectation, RiskSpec::Expectation],
            objective: Utility::WeightedSum {
                weights: vec![1.0, 1.0, 0.0],
                offset: 0.0,
            },
            constraints: vec![],
            x_box: XBox {
                lower: vec![-1.0; 3],
                upper: vec![2.0; 3],
            },
            policy_class: PolicyClass::UniformBox {
                dim: 2,
                upper: 1.0,
                grid: 3,
            },
            witness: None,
            seed: 3,
        })
        .unwrap();
        let p = Policy::from_rows(vec![vec![0.5, 1.0], vec![1.0, 0.0]]);
        let t = inst.service_table(&p).unwrap();
        let r = inst.refined(3).unwrap();
        let tr = r.service_table(&p.refine(3)).unwrap();
        for (row, rrow) in t.iter().zip(&tr) {
            let dup: Vec<f64> = row.iter().flat_map(|v| [*v; 3]).collect();
            assert_eq!(&dup, rrow);
        }
        assert_eq!(
            inst.risk_vector(&t).unwrap(),
            r.risk_vector(&tr).unwrap(),
            "risk vectors are bitwise invariant under refinement"
        );
    }
}
