//! Time-sharing of two policies on refined scenario sets.
//!
//! On a nonatomic space any vector of integrals can be split in any ratio by
//! a suitable event. On atoms this only holds approximately, with an error
//! controlled by the largest atom weight. [`blackwell_halve`] splits one
//! integral in half; [`mix_policies`] builds `1_E p + 1_{E^c} p'` whose risk
//! vector dominates `α ρ̲(p) + (1 − α) ρ̲(p')` up to a reported deficit `ε`.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::model::{Policy, RcpInstance};
use crate::probability::{duplicate_rows, RandomVariable, ScenarioSet};
use crate::risk::{envelope_gamma, sample_density, worst_case_density, Direction};
use crate::rng;

const RANDOM_DENSITIES: u64 = 8;
const SWAP_BUDGET_PER_ATOM: usize = 10;

/// Finite family of test densities `ζ` with `|ζ| ≤ γ`.
#[derive(Debug, Clone, PartialEq)]
pub struct TestDensityFamily {
    densities: Vec<RandomVariable>,
    gamma: f64,
}

impl TestDensityFamily {
    pub fn new(densities: Vec<RandomVariable>, gamma: f64) -> Result<Self> {
        if densities.is_empty() {
            return Err(Error::Domain("test density family is empty".into()));
        }
        let len = densities[0].len();
        for (i, z) in densities.iter().enumerate() {
            if z.len() != len {
                return Err(Error::DimensionMismatch {
                    index: i,
                    expected: len,
                    found: z.len(),
                });
            }
            if z.iter().any(|v| !(v.abs() <= gamma + 1e-9)) {
                return Err(Error::Domain(format!("test density {i} exceeds the bound {gamma}")));
            }
        }
        Ok(TestDensityFamily { densities, gamma })
    }

    /// Worst-case densities of every risk at both policies, the constant
    /// density, and seeded random envelope members.
    pub fn standard(inst: &RcpInstance, p: &Policy, q: &Policy, seed: u64) -> Result<Self> {
        let tp = inst.service_table(p)?;
        let tq = inst.service_table(q)?;
        Self::from_tables(inst, &tp, &tq, seed)
    }

    pub(crate) fn from_tables(inst: &RcpInstance, tp: &[Vec<f64>], tq: &[Vec<f64>], seed: u64) -> Result<Self> {
        let s = inst.scenarios();
        let mut densities = Vec::new();
        let mut gamma: f64 = 1.0;
        for (i, risk) in inst.risks().iter().enumerate() {
            gamma = gamma.max(envelope_gamma(risk));
            densities.push(worst_case_density(risk, s, &tp[i], Direction::Inf)?);
            densities.push(worst_case_density(risk, s, &tq[i], Direction::Inf)?);
        }
        densities.push(RandomVariable::constant(s.len(), 1.0));
        let n = inst.risks().len() as u64;
        for j in 0..RANDOM_DENSITIES {
            let mut r = rng::stream_indexed(seed, "test-density", j);
            densities.push(sample_density(&inst.risks()[(j % n) as usize], s, &mut r)?);
        }
        Self::new(densities, gamma)
    }

    pub fn densities(&self) -> &[RandomVariable] {
        &self.densities
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn len(&self) -> usize {
        self.densities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.densities.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HalvingResult {
    /// Sorted atom indices of `refine(S, m)`.
    pub set: Vec<usize>,
    /// `|Σ_{k∈E} w_k V_k − ½ Σ_k w_k V_k|`.
    pub error: f64,
    pub scenarios: ScenarioSet,
}

/// Splits `E{V}` in half over `refine(S, m)`: signed greedy balancing in
/// descending magnitude, then single moves across the cut.
pub fn blackwell_halve(s: &ScenarioSet, v: &RandomVariable, m: usize) -> Result<HalvingResult> {
    s.check_aligned(v)?;
    let refined = s.refine(m)?;
    let vv = duplicate_rows(v, m);
    let terms: Vec<f64> = refined.weights().iter().zip(&vv).map(|(w, x)| w * x).collect();
    let total: f64 = terms.iter().sum();
    let mut order: Vec<usize> = (0..terms.len()).collect();
    order.sort_by(|&a, &b| terms[b].abs().total_cmp(&terms[a].abs()));
    let mut inside = vec![false; terms.len()];
    // diff = Σ_E − Σ_{E^c}; |diff| stays below the largest term.
    let mut diff = 0.0;
    for k in order {
        if (diff + terms[k]).abs() <= (diff - terms[k]).abs() {
            inside[k] = true;
            diff += terms[k];
        } else {
            diff -= terms[k];
        }
    }
    let sum_in = |inside: &[bool]| terms.iter().zip(inside).filter(|(_, i)| **i).map(|(t, _)| t).sum::<f64>();
    let mut error = (sum_in(&inside) - 0.5 * total).abs();
    loop {
        let mut improved = false;
        for k in 0..terms.len() {
            inside[k] = !inside[k];
            let e = (sum_in(&inside) - 0.5 * total).abs();
            if e < error {
                error = e;
                improved = true;
            } else {
                inside[k] = !inside[k];
            }
        }
        if !improved {
            break;
        }
    }
    Ok(HalvingResult {
        set: (0..terms.len()).filter(|k| inside[*k]).collect(),
        error,
        scenarios: refined,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixResult {
    /// Policy on `refine(S, m)`.
    pub policy: Policy,
    pub epsilon: f64,
    /// Atoms of `refine(S, m)` that follow `p`.
    pub set: Vec<usize>,
}

/// Searches an event `E` of `refine(S, m)` such that `1_E p + 1_{E^c} p'`
/// has risks close to `α ρ̲(p) + (1 − α) ρ̲(p')`.
///
/// The search runs coarse to fine along a divisor chain of `m`; every level
/// starts from the best event of the previous level, so the reported `ε` is
/// non-increasing along the chain.
pub fn mix_policies(
    inst: &RcpInstance,
    p: &Policy,
    q: &Policy,
    alpha: f64,
    m: usize,
    family: &TestDensityFamily,
) -> Result<MixResult> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Domain(format!("mixing weight {alpha} outside [0, 1]")));
    }
    if m == 0 {
        return Err(Error::Domain("refinement factor must be at least 1".into()));
    }
    if family.densities[0].len() != inst.len() {
        return Err(Error::Misalignment {
            expected: inst.len(),
            found: family.densities[0].len(),
        });
    }
    let tp = inst.service_table(p)?;
    let tq = inst.service_table(q)?;
    let (mask, epsilon) = mix_tables(inst, &tp, &tq, alpha, m, family)?;
    let policy = p.refine(m).splice(&q.refine(m), &mask);
    Ok(MixResult {
        policy,
        epsilon,
        set: (0..mask.len()).filter(|k| mask[*k]).collect(),
    })
}

/// Divisor chain `1 = d_0 | d_1 | … | d_r = m`, each step a prime factor.
pub(crate) fn divisor_chain(m: usize) -> Vec<usize> {
    let mut chain = vec![1];
    let mut d = 1;
    while d < m {
        let rest = m / d;
        let prime = (2..=rest).find(|q| rest.is_multiple_of(*q)).unwrap_or(rest);
        d *= prime;
        chain.push(d);
    }
    chain
}

/// Splice tables column-wise: column `k` from `a` where `mask[k]`, else `b`.
fn splice_table(a: &[Vec<f64>], b: &[Vec<f64>], mask: &[bool]) -> Vec<Vec<f64>> {
    a.iter()
        .zip(b)
        .map(|(ra, rb)| {
            ra.iter()
                .zip(rb)
                .zip(mask)
                .map(|((x, y), inside)| if *inside { *x } else { *y })
                .collect()
        })
        .collect()
}

struct Level<'a> {
    inst: RcpInstance,
    ta: Vec<Vec<f64>>,
    tb: Vec<Vec<f64>>,
    target: &'a [f64],
    /// Normalized stacked test-weighted integrands, `(u_a, u_b)` per atom.
    stacked: Vec<Vec<f64>>,
    goal: Vec<f64>,
}

impl Level<'_> {
    fn deficit(&self, mask: &[bool]) -> Result<f64> {
        let r = self.inst.risk_vector(&splice_table(&self.ta, &self.tb, mask))?;
        Ok(self
            .target
            .iter()
            .zip(&r)
            .map(|(t, v)| (t - v).max(0.0))
            .fold(0.0, f64::max))
    }

    fn residual(&self, mask: &[bool]) -> f64 {
        let mut acc = vec![0.0; self.goal.len()];
        for (u, inside) in self.stacked.iter().zip(mask) {
            if *inside {
                for (a, v) in acc.iter_mut().zip(u) {
                    *a += v;
                }
            }
        }
        acc.iter().zip(&self.goal).map(|(a, g)| (a - g) * (a - g)).sum()
    }

    fn greedy(&self) -> Vec<bool> {
        let norm = |u: &Vec<f64>| u.iter().map(|v| v * v).sum::<f64>();
        let mut order: Vec<usize> = (0..self.stacked.len()).collect();
        order.sort_by(|&a, &b| norm(&self.stacked[b]).total_cmp(&norm(&self.stacked[a])));
        let mut mask = vec![false; self.stacked.len()];
        let mut gap = self.goal.clone();
        for k in order {
            let u = &self.stacked[k];
            let before: f64 = gap.iter().map(|g| g * g).sum();
            let after: f64 = gap.iter().zip(u).map(|(g, v)| (g - v) * (g - v)).sum();
            if after < before {
                mask[k] = true;
                for (g, v) in gap.iter_mut().zip(u) {
                    *g -= v;
                }
            }
        }
        mask
    }
}

fn better(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Core of [`mix_policies`] on service tables of `inst`. Returns the mask on
/// `refine(S, m)` (true = take from `a`) and its deficit.
pub(crate) fn mix_tables(
    inst: &RcpInstance,
    ta: &[Vec<f64>],
    tb: &[Vec<f64>],
    alpha: f64,
    m: usize,
    family: &TestDensityFamily,
) -> Result<(Vec<bool>, f64)> {
    let km = inst.len() * m;
    if alpha == 0.0 {
        return Ok((vec![false; km], 0.0));
    }
    if alpha == 1.0 {
        return Ok((vec![true; km], 0.0));
    }
    let ra = inst.risk_vector(ta)?;
    let rb = inst.risk_vector(tb)?;
    let target: Vec<f64> = ra.iter().zip(&rb).map(|(a, b)| alpha * a + (1.0 - alpha) * b).collect();
    let budget = SWAP_BUDGET_PER_ATOM * inst.len();
    let mut best: Option<Vec<bool>> = None;
    for d in divisor_chain(m) {
        let level_inst = inst.refined(d)?;
        let dup = |t: &[Vec<f64>]| t.iter().map(|r| duplicate_rows(r, d)).collect::<Vec<_>>();
        let (la, lb) = (dup(ta), dup(tb));
        let w = level_inst.scenarios().weights();
        let dens: Vec<Vec<f64>> = family.densities.iter().map(|z| duplicate_rows(z, d)).collect();
        let mut stacked = vec![Vec::new(); w.len()];
        for z in &dens {
            for table in [&la, &lb] {
                for row in table.iter() {
                    let col: Vec<f64> = (0..w.len()).map(|k| w[k] * z[k] * row[k]).collect();
                    let scale = col.iter().map(|v| v.abs()).sum::<f64>();
                    let scale = if scale > 0.0 { scale } else { 1.0 };
                    for (k, v) in col.iter().enumerate() {
                        stacked[k].push(v / scale);
                    }
                }
            }
        }
        let goal: Vec<f64> = (0..stacked.first().map_or(0, Vec::len))
            .map(|j| alpha * stacked.iter().map(|u| u[j]).sum::<f64>())
            .collect();
        let level = Level {
            inst: level_inst,
            ta: la,
            tb: lb,
            target: &target,
            stacked,
            goal,
        };
        let mut mask = level.greedy();
        let mut score = (level.deficit(&mask)?, level.residual(&mask));
        if let Some(prev) = &best {
            let lifted = duplicate_rows(prev, d / (prev.len() / inst.len()));
            let s = (level.deficit(&lifted)?, level.residual(&lifted));
            if !better(score, s) {
                mask = lifted;
                score = s;
            }
        }
        let mut evals = 0;
        'search: loop {
            let mut improved = false;
            for k in 0..mask.len() {
                if evals >= budget * d || score.0 == 0.0 {
                    break 'search;
                }
                mask[k] = !mask[k];
                evals += 1;
                let s = (level.deficit(&mask)?, level.residual(&mask));
                if better(s, score) {
                    score = s;
                    improved = true;
                } else {
                    mask[k] = !mask[k];
                }
            }
            if !improved {
                break;
            }
        }
        best = Some(mask);
    }
    let mask = best.expect("chain is non-empty");
    let eps = {
        let refined = inst.refined(m)?;
        let dup = |t: &[Vec<f64>]| t.iter().map(|r| duplicate_rows(r, m)).collect::<Vec<_>>();
        let r = refined.risk_vector(&splice_table(&dup(ta), &dup(tb), &mask))?;
        target.iter().zip(&r).map(|(t, v)| (t - v).max(0.0)).fold(0.0, f64::max)
    };
    Ok((mask, eps))
}

/// `(α ρ̲_i(p) + (1 − α) ρ̲_i(p') − ρ̲_i(p_mix))_+` per component, where
/// `p_mix` lives on a refinement of the instance's scenario set.
pub fn mixture_risk_deficit(inst: &RcpInstance, p: &Policy, q: &Policy, alpha: f64, p_mix: &Policy) -> Result<Vec<f64>> {
    if inst.is_empty() || !p_mix.len().is_multiple_of(inst.len()) || p_mix.is_empty() {
        return Err(Error::Domain(format!(
            "mixed policy has {} rows, not a refinement of {} atoms",
            p_mix.len(),
            inst.len()
        )));
    }
    let m = p_mix.len() / inst.len();
    let ra = inst.risk_vector(&inst.service_table(p)?)?;
    let rb = inst.risk_vector(&inst.service_table(q)?)?;
    let refined = inst.refined(m)?;
    let rm = refined.risk_vector(&refined.service_table(p_mix)?)?;
    Ok(ra
        .iter()
        .zip(&rb)
        .zip(&rm)
        .map(|((a, b), v)| (alpha * a + (1.0 - alpha) * b - v).max(0.0))
        .collect())
}

/// A uniformly random grid policy, drawn atom by atom.
pub fn random_grid_policy(inst: &RcpInstance, rng: &mut crate::rng::Rng) -> Vec<usize> {
    (0..inst.len())
        .map(|k| rng.random_range(0..inst.atom_grid(k).points.len()))
        .collect()
}
