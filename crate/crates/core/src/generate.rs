//! Seeded instance generators.

use rand::Rng as _;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::dual::DualOptions;
use crate::error::{Error, Result};
use crate::model::{InstanceConfig, PolicyClass, ScenarioConfig, ServiceSpec, TableService, UtilityConfig, WitnessConfig, XBox};
use crate::risk::RiskSpec;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// Two interfering users plus an average-power budget.
    Interference2,
    /// Three interfering users plus an average-power budget.
    Interference3,
    /// One user with an on/off rate target and an average-power budget.
    Outage,
    /// One user with a concave rate and a log utility.
    ConcaveAwgn,
    /// Tiny table-driven instances with mixed risk measures.
    RandomTable,
}

/// Average power available per atom in the budgeted families.
pub const POWER_BUDGET: f64 = 1.0;

fn fading(rng: &mut rng::Rng, k: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..k)
        .map(|_| (0..dim).map(|_| Exp1.sample(rng)).collect::<Vec<f64>>())
        .collect()
}

fn weighted(weights: Vec<f64>, offset: f64) -> UtilityConfig {
    UtilityConfig::WeightedSum { weights, offset }
}

/// `x_{N} + budget ≥ 0` on the power component.
fn power_constraint(n: usize) -> UtilityConfig {
    let mut w = vec![0.0; n];
    w[n - 1] = 1.0;
    weighted(w, POWER_BUDGET)
}

fn interference(users: usize, k: usize, seed: u64) -> InstanceConfig {
    let mut r = rng::stream(seed, "generate/interference");
    let n = users + 1;
    let mut risks = vec![RiskSpec::Cvar { beta: 0.5 }];
    risks.extend(std::iter::repeat_n(RiskSpec::Expectation, n - 1));
    let mut weights = vec![1.0; users];
    weights.push(0.0);
    let upper = 2.0;
    InstanceConfig {
        scenario: ScenarioConfig {
            points: Some(fading(&mut r, k, users)),
            weights: None,
            table: None,
        },
        service: ServiceSpec::InterferenceRate {
            noise: 1.0,
            coupling: 0.5,
            power_cost: true,
        },
        risks,
        utility: weighted(weights, 0.0),
        constraints: vec![power_constraint(n)],
        x_box: XBox {
            lower: vec![-1.0; n],
            upper: std::iter::repeat_n(10.0, users).chain([0.0]).collect(),
        },
        policy_class: PolicyClass::UniformBox {
            dim: users,
            upper,
            grid: 3,
        },
        slater_witness: Some(WitnessConfig {
            x: vec![-0.5; n],
            policy: vec![vec![0.0; users]],
        }),
        seed,
        dual: DualOptions {
            max_iters: 400,
            eta0: 0.5,
            seed,
            ..DualOptions::default()
        },
        base_dir: None,
    }
}

fn outage(k: usize, seed: u64) -> InstanceConfig {
    let mut r = rng::stream(seed, "generate/outage");
    InstanceConfig {
        scenario: ScenarioConfig {
            points: Some(fading(&mut r, k, 1)),
            weights: None,
            table: None,
        },
        service: ServiceSpec::Outage {
            threshold: 1.0,
            reward: 1.0,
            noise: 1.0,
            power_cost: true,
        },
        risks: vec![RiskSpec::Cvar { beta: 0.5 }, RiskSpec::Expectation],
        utility: weighted(vec![1.0, 0.0], 0.0),
        constraints: vec![power_constraint(2)],
        x_box: XBox {
            lower: vec![-1.0, -5.0],
            upper: vec![1.0, 0.0],
        },
        policy_class: PolicyClass::UniformBox {
            dim: 1,
            upper: 4.0,
            grid: 9,
        },
        slater_witness: Some(WitnessConfig {
            x: vec![-0.5, -0.5],
            policy: vec![vec![0.0]],
        }),
        seed,
        dual: DualOptions {
            max_iters: 400,
            eta0: 0.5,
            seed,
            ..DualOptions::default()
        },
        base_dir: None,
    }
}

fn concave_awgn(k: usize, seed: u64) -> InstanceConfig {
    let mut r = rng::stream(seed, "generate/awgn");
    InstanceConfig {
        scenario: ScenarioConfig {
            points: Some(fading(&mut r, k, 1)),
            weights: None,
            table: None,
        },
        service: ServiceSpec::AwgnRate {
            noise: 1.0,
            power_cost: true,
        },
        risks: vec![RiskSpec::Expectation, RiskSpec::Expectation],
        utility: UtilityConfig::SumLog {
            weights: Some(vec![1.0, 0.0]),
            offset: 1.0,
        },
        constraints: vec![power_constraint(2)],
        x_box: XBox {
            lower: vec![-0.5, -4.0],
            upper: vec![5.0, 0.0],
        },
        policy_class: PolicyClass::UniformBox {
            dim: 1,
            upper: 4.0,
            grid: 33,
        },
        slater_witness: Some(WitnessConfig {
            x: vec![-0.25, -0.5],
            policy: vec![vec![0.0]],
        }),
        seed,
        dual: DualOptions {
            seed,
            eta0: 0.5,
            ..DualOptions::default()
        },
        base_dir: None,
    }
}

fn random_risk(r: &mut rng::Rng) -> RiskSpec {
    match r.random_range(0..4) {
        0 => RiskSpec::Expectation,
        1 => RiskSpec::Cvar {
            beta: r.random_range(0.2..1.0),
        },
        2 => RiskSpec::Mad {
            lambda: r.random_range(0.0..1.0),
        },
        _ => RiskSpec::MeanCvar {
            theta: r.random_range(0.0..1.0),
            beta: r.random_range(0.2..1.0),
        },
    }
}

/// Tiny instances: at most 5 atoms, at most 4 policy levels, scalar policy,
/// one or two service components with values in `[0, 1]`.
fn random_table(k: usize, seed: u64) -> InstanceConfig {
    let mut r = rng::stream(seed, "generate/table");
    let k = k.clamp(1, 5);
    let grid = r.random_range(2..=4usize);
    let n = r.random_range(1..=2usize);
    let points: Vec<Vec<f64>> = (0..k).map(|j| vec![j as f64]).collect();
    let levels: Vec<f64> = (0..grid).map(|g| g as f64 / (grid - 1) as f64).collect();
    let values = (0..k)
        .map(|_| (0..grid).map(|_| (0..n).map(|_| r.random::<f64>()).collect()).collect())
        .collect();
    let weights: Vec<f64> = (0..k).map(|_| r.random_range(0.2..1.0)).collect();
    let total: f64 = weights.iter().sum();
    let risks = (0..n).map(|_| random_risk(&mut r)).collect();
    let objective = (0..n).map(|_| r.random_range(0.1..1.0)).collect();
    let mut floor = vec![0.0; n];
    floor[0] = 1.0;
    InstanceConfig {
        scenario: ScenarioConfig {
            points: Some(points.clone()),
            weights: Some(weights.iter().map(|w| w / total).collect()),
            table: None,
        },
        service: ServiceSpec::Table(TableService { points, levels, values }),
        risks,
        utility: weighted(objective, 0.0),
        constraints: vec![weighted(floor, 0.9)],
        x_box: XBox {
            lower: vec![-1.0; n],
            upper: vec![1.0; n],
        },
        policy_class: PolicyClass::UniformBox { dim: 1, upper: 1.0, grid },
        slater_witness: Some(WitnessConfig {
            x: vec![-0.75; n],
            policy: vec![vec![0.0]],
        }),
        seed,
        dual: DualOptions {
            seed,
            ..DualOptions::default()
        },
        base_dir: None,
    }
}

/// A seeded instance configuration with `scenarios` unrefined atoms.
pub fn generate(family: Family, scenarios: usize, seed: u64) -> Result<InstanceConfig> {
    if scenarios == 0 {
        return Err(Error::EmptyScenarioSet);
    }
    Ok(match family {
        Family::Interference2 => interference(2, scenarios, seed),
        Family::Interference3 => interference(3, scenarios, seed),
        Family::Outage => outage(scenarios, seed),
        Family::ConcaveAwgn => concave_awgn(scenarios, seed),
        Family::RandomTable => random_table(scenarios, seed),
    })
}
