//! Numerical certificates for strong duality.
//!
//! * [`gap_study`] measures `D̂* − P̂` as the scenario set is refined.
//! * [`hyperplane_check`] tests `L(x, p, λ*) ≤ P̂` on sampled pairs, i.e.
//!   that `λ*` supports the achievable set at `(P̂, 0, 0)`.
//! * [`semi_infinite_check`] evaluates the risk constraints as the family of
//!   linear constraints `x_i ≤ E{ζ f_i}` over envelope densities.
//! * [`closure_convexity_probe`] measures how far time-shared policies fall
//!   short of convex combinations of risk vectors.

use std::fmt::Write as _;
use std::time::Instant;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dual::{lagrangian, recover_primal, solve_dual, DualOptions, InnerMethod, Multipliers, PrimalCandidate};
use crate::error::{Error, Result};
use crate::mixing::{mix_policies, mixture_risk_deficit, random_grid_policy, TestDensityFamily};
use crate::model::{Policy, RcpInstance};
use crate::risk::{sample_density, worst_case_density, Direction};
use crate::rng;

pub const GAP_HEADER: &str = "m,K,primal,dual,gap_abs,gap_rel,method,seed,runtime_ms";
pub const PROBE_HEADER: &str = "pair,alpha,m,deficit";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub m: usize,
    pub atoms: usize,
    pub primal: f64,
    pub dual: f64,
    pub gap_abs: f64,
    pub gap_rel: f64,
    pub method: InnerMethod,
    pub seed: u64,
    pub runtime_ms: u128,
}

/// Per-level solver output kept alongside a gap row.
#[derive(Debug, Clone, PartialEq)]
pub struct GapLevel {
    pub row: GapRow,
    pub best_multipliers: Multipliers,
    pub candidate: PrimalCandidate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapReport {
    pub levels: Vec<GapLevel>,
}

impl GapReport {
    pub fn rows(&self) -> impl Iterator<Item = &GapRow> {
        self.levels.iter().map(|l| &l.row)
    }

    /// CSV with [`GAP_HEADER`]. Runtimes are written as 0 unless
    /// `timings` is set, so that reports are byte-reproducible.
    pub fn to_csv(&self, timings: bool) -> String {
        let mut out = format!("{GAP_HEADER}\n");
        for r in self.rows() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.m,
                r.atoms,
                r.primal,
                r.dual,
                r.gap_abs,
                r.gap_rel,
                r.method,
                r.seed,
                if timings { r.runtime_ms } else { 0 }
            );
        }
        out
    }
}

pub(crate) fn check_levels(levels: &[usize]) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::Schema("at least one refinement level is required".into()));
    }
    if levels.contains(&0) {
        return Err(Error::Schema("refinement levels must be positive".into()));
    }
    if levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Schema("refinement levels must be strictly ascending".into()));
    }
    Ok(())
}

/// Solves the dual and recovers a primal point on `refine(S, m)` for every
/// level `m`.
///
/// `P̂(m)` is the best feasible value found at `m` or at any listed level
/// dividing `m` (a policy on `refine(S, d)` lifts to `refine(S, m)` when
/// `d | m`), re-verified on the finer set. Levels run in parallel; each row
/// depends only on `(instance, m, options)`.
pub fn gap_study(inst: &RcpInstance, levels: &[usize], options: &DualOptions) -> Result<GapReport> {
    check_levels(levels)?;
    options.validate()?;
    let solved: Vec<(usize, Multipliers, f64, PrimalCandidate, u128)> = levels
        .par_iter()
        .map(|&m| {
            let start = Instant::now();
            let refined = inst.refined(m)?;
            let result = solve_dual(&refined, options)?;
            let candidate = recover_primal(&refined, &result, 1, options.tol)?;
            Ok((
                m,
                result.best_multipliers,
                result.best_dual,
                candidate,
                start.elapsed().as_millis(),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(solved.len());
    for (m, multipliers, dual, own, runtime_ms) in &solved {
        let refined = inst.refined(*m)?;
        let mut best = own.clone();
        let mut best_value = if own.feasible { own.value } else { f64::NEG_INFINITY };
        for (d, _, _, cand, _) in &solved {
            if d >= m || m % d != 0 || !cand.feasible {
                continue;
            }
            let policy = cand.policy.refine(m / d);
            if let Some(v) = refined.feasible_value(&cand.x, &policy, options.tol)? {
                if v > best_value {
                    let min_slack = refined.constraint_slack(&cand.x, &policy)?.min();
                    best_value = v;
                    best = PrimalCandidate {
                        x: cand.x.clone(),
                        policy,
                        value: v,
                        min_slack,
                        feasible: true,
                        refine_factor: *m,
                    };
                }
            }
        }
        let gap_abs = dual - best_value;
        out.push(GapLevel {
            row: GapRow {
                m: *m,
                atoms: refined.len(),
                primal: best_value,
                dual: *dual,
                gap_abs,
                gap_rel: gap_abs / dual.abs().max(1e-12),
                method: options.method,
                seed: options.seed,
                runtime_ms: *runtime_ms,
            },
            best_multipliers: multipliers.clone(),
            candidate: best,
        });
    }
    Ok(GapReport { levels: out })
}

fn sample_x(inst: &RcpInstance, r: &mut rng::Rng) -> Vec<f64> {
    let bx = inst.x_box();
    bx.lower
        .iter()
        .zip(&bx.upper)
        .map(|(lo, hi)| lo + r.random::<f64>() * (hi - lo))
        .collect()
}

/// `max(0, max L(x, p, λ*) − P̂)` over `n_samples` seeded pairs from
/// `X × (grid policies)`. Each sample draws from its own stream.
pub fn hyperplane_check(inst: &RcpInstance, lambda: &Multipliers, p_hat: f64, n_samples: usize, seed: u64) -> Result<f64> {
    lambda.validate(inst)?;
    let worst = (0..n_samples)
        .into_par_iter()
        .map(|j| {
            let mut r = rng::stream_indexed(seed, "hyperplane", j as u64);
            let x = sample_x(inst, &mut r);
            let choice = random_grid_policy(inst, &mut r);
            lagrangian(inst, &x, &inst.choice_policy(&choice), lambda)
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    Ok((worst - p_hat).max(0.0))
}

/// `max_{i, ζ} (x_i − E{ζ f_i})_+` over `n_densities` seeded envelope
/// members per component plus the exact minimizing density.
pub fn semi_infinite_check(inst: &RcpInstance, x: &[f64], p: &Policy, n_densities: usize, seed: u64) -> Result<f64> {
    inst.constraint_slack(x, p)?;
    let table = inst.service_table(p)?;
    let s = inst.scenarios();
    let mut worst: f64 = 0.0;
    for (i, risk) in inst.risks().iter().enumerate() {
        let mut r = rng::stream_indexed(seed, "semi-infinite", i as u64);
        let mut densities = Vec::with_capacity(n_densities + 1);
        for _ in 0..n_densities {
            densities.push(sample_density(risk, s, &mut r)?);
        }
        densities.push(worst_case_density(risk, s, &table[i], Direction::Inf)?);
        for z in densities {
            let weighted: Vec<f64> = z.iter().zip(&table[i]).map(|(a, b)| a * b).collect();
            worst = worst.max(x[i] - s.expectation(&weighted)?);
        }
    }
    Ok(worst)
}

/// How mixed policies are formed in [`closure_convexity_probe`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProbeMode {
    /// Time-sharing by [`mix_policies`].
    #[default]
    Splice,
    /// Pointwise convex combination `α p + (1 − α) p'` (convex classes only).
    Pointwise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub pair: usize,
    pub alpha: f64,
    pub m: usize,
    pub deficit: f64,
}

pub fn probe_csv(rows: &[ProbeRow]) -> String {
    let mut out = format!("{PROBE_HEADER}\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.pair, r.alpha, r.m, r.deficit);
    }
    out
}

/// Maximum mixing deficit for `n_pairs` seeded random grid-policy pairs at
/// every `α` and refinement level.
pub fn closure_convexity_probe(
    inst: &RcpInstance,
    n_pairs: usize,
    alphas: &[f64],
    levels: &[usize],
    seed: u64,
    mode: ProbeMode,
) -> Result<Vec<ProbeRow>> {
    check_levels(levels)?;
    let per_pair = (0..n_pairs)
        .into_par_iter()
        .map(|pair| {
            let mut r = rng::stream_indexed(seed, "probe", pair as u64);
            let p = inst.choice_policy(&random_grid_policy(inst, &mut r));
            let q = inst.choice_policy(&random_grid_policy(inst, &mut r));
            let family = TestDensityFamily::standard(inst, &p, &q, seed ^ pair as u64)?;
            let mut rows = Vec::new();
            for &alpha in alphas {
                for &m in levels {
                    let mixed = match mode {
                        ProbeMode::Splice => mix_policies(inst, &p, &q, alpha, m, &family)?.policy,
                        ProbeMode::Pointwise => p.blend(&q, alpha).refine(m),
                    };
                    let deficit = mixture_risk_deficit(inst, &p, &q, alpha, &mixed)?
                        .into_iter()
                        .fold(0.0, f64::max);
                    rows.push(ProbeRow { pair, alpha, m, deficit });
                }
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_pair.into_iter().flatten().collect())
}
