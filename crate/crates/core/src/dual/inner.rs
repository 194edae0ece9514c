//! Inner maximizations of the Lagrangian.

use rand::Rng as _;

use super::{InnerMethod, Multipliers};
use crate::error::{Error, Result};
use crate::model::{Policy, RcpInstance, Utility};
use crate::risk::{worst_case_density, Direction};
use crate::rng;

/// Largest product grid the exhaustive method will enumerate.
pub const GRID_LIMIT: f64 = 1e7;
const GOLDEN_ITERS: usize = 120;
const GRADIENT_ITERS: usize = 200;
const RESTARTS: u64 = 8;
const MINIMAX_ROUNDS: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct XMax {
    pub x: Vec<f64>,
    /// `g⁰(x) + ⟨λ_g, g(x)⟩ − ⟨λ_ρ, x⟩`.
    pub value: f64,
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyMax {
    pub choice: Vec<usize>,
    pub policy: Policy,
    /// `Σ_i λ_i · (−ρ_i(−f_i(p)))`.
    pub value: f64,
    pub risk: Vec<f64>,
    pub exact: bool,
}

fn x_objective(inst: &RcpInstance, lambda: &Multipliers, x: &[f64]) -> f64 {
    let mut v = inst.objective().value(x);
    for (g, l) in inst.constraints().iter().zip(&lambda.util) {
        if *l != 0.0 {
            v += l * g.value(x);
        }
    }
    v - crate::probability::dot(&lambda.risk, x)
}

/// Maximizes a concave function of one variable on `[lo, hi]`, returning
/// the lowest of `lo`, the golden-section point and `hi` that is not
/// strictly beaten.
fn golden_section(lo: f64, hi: f64, phi: impl Fn(f64) -> f64) -> f64 {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (phi(c), phi(d));
    for _ in 0..GOLDEN_ITERS {
        if b - a <= 1e-13 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = phi(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = phi(d);
        }
    }
    let mid = 0.5 * (a + b);
    let mut best = (lo, phi(lo));
    for t in [mid, hi] {
        let v = phi(t);
        if v > best.1 {
            best = (t, v);
        }
    }
    best.0
}

fn separable_terms(u: &Utility, i: usize, t: f64) -> f64 {
    u.separable_term(i, t)
}

/// `argmax_{x ∈ X} g⁰(x) + ⟨λ_g, g(x)⟩ − ⟨λ_ρ, x⟩`.
///
/// Separable utilities are maximized coordinate by coordinate by golden
/// section (exact up to rounding); the rest by projected gradient ascent
/// with central finite differences.
pub fn maximize_over_x(inst: &RcpInstance, lambda: &Multipliers) -> Result<XMax> {
    lambda.validate(inst)?;
    let bx = inst.x_box();
    let active: Vec<(&Utility, f64)> = inst
        .constraints()
        .iter()
        .zip(&lambda.util)
        .filter(|(_, l)| **l != 0.0)
        .map(|(g, l)| (g, *l))
        .collect();
    let separable = inst.objective().is_separable() && active.iter().all(|(g, _)| g.is_separable());
    let x = if separable {
        (0..bx.dim())
            .map(|i| {
                let phi = |t: f64| {
                    let mut v = separable_terms(inst.objective(), i, t) - lambda.risk[i] * t;
                    for (g, l) in &active {
                        v += l * separable_terms(g, i, t);
                    }
                    v
                };
                golden_section(bx.lower[i], bx.upper[i], phi)
            })
            .collect()
    } else {
        projected_gradient(inst, lambda)
    };
    Ok(XMax {
        value: x_objective(inst, lambda, &x),
        x,
        exact: separable,
    })
}

fn projected_gradient(inst: &RcpInstance, lambda: &Multipliers) -> Vec<f64> {
    let bx = inst.x_box();
    let f = |x: &[f64]| x_objective(inst, lambda, x);
    let center: Vec<f64> = bx.lower.iter().zip(&bx.upper).map(|(a, b)| 0.5 * (a + b)).collect();
    let mut best = (bx.lower.clone(), f(&bx.lower));
    for cand in [center, bx.upper.clone()] {
        let v = f(&cand);
        if v > best.1 {
            best = (cand, v);
        }
    }
    let width = bx
        .lower
        .iter()
        .zip(&bx.upper)
        .map(|(a, b)| b - a)
        .fold(0.0, f64::max);
    if width == 0.0 {
        return best.0;
    }
    let h = 1e-7 * (1.0 + width);
    let mut x = best.0.clone();
    let mut fx = best.1;
    let mut step = width;
    for _ in 0..GRADIENT_ITERS {
        let grad: Vec<f64> = (0..x.len())
            .map(|i| {
                let mut up = x.clone();
                let mut dn = x.clone();
                up[i] += h;
                dn[i] -= h;
                (f(&up) - f(&dn)) / (2.0 * h)
            })
            .collect();
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            break;
        }
        let mut moved = false;
        for _ in 0..50 {
            let trial: Vec<f64> = x.iter().zip(&grad).map(|(v, g)| v + step * g / norm).collect();
            let trial = bx.clamp(&trial);
            let ft = f(&trial);
            if ft > fx {
                x = trial;
                fx = ft;
                moved = true;
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
        if fx > best.1 {
            best = (x.clone(), fx);
        }
    }
    best.0
}

/// Per-term weights of the variational form of a lower risk in the CVaR
/// family: `θ E Z + (1 − θ) max_t { t − E(t − Z)_+ / β }`.
struct Threshold {
    component: usize,
    lambda: f64,
    theta: f64,
    beta: f64,
    candidates: Vec<f64>,
}

/// Maximizes `Σ_i λ_i · (−ρ_i(−f_i(p)))` over grid policies.
pub fn maximize_over_policy(inst: &RcpInstance, lambda_risk: &[f64], method: InnerMethod, seed: u64) -> Result<PolicyMax> {
    if lambda_risk.len() != inst.n_services() {
        return Err(Error::DimensionMismatch {
            index: 1,
            expected: inst.n_services(),
            found: lambda_risk.len(),
        });
    }
    for (index, value) in lambda_risk.iter().enumerate() {
        if !(*value >= 0.0) || !value.is_finite() {
            return Err(Error::NegativeMultiplier {
                index: inst.n_constraints() + index,
                value: *value,
            });
        }
    }
    let (choice, exact) = if lambda_risk.iter().all(|l| *l == 0.0) {
        (vec![0; inst.len()], true)
    } else {
        match method {
            InnerMethod::Exhaustive => (exhaustive(inst, lambda_risk)?, true),
            InnerMethod::Coordinate => (coordinate(inst, lambda_risk, seed)?, false),
            InnerMethod::Minimax => (minimax(inst, lambda_risk)?, false),
        }
    };
    let risk = inst.risk_vector(&inst.choice_table(&choice))?;
    Ok(PolicyMax {
        value: score(lambda_risk, &risk),
        policy: inst.choice_policy(&choice),
        choice,
        risk,
        exact,
    })
}

fn score(lambda: &[f64], risk: &[f64]) -> f64 {
    lambda.iter().zip(risk).filter(|(l, _)| **l != 0.0).map(|(l, r)| l * r).sum()
}

fn choice_score(inst: &RcpInstance, lambda: &[f64], choice: &[usize]) -> Result<f64> {
    let table = inst.choice_table(choice);
    let mut v = 0.0;
    for (i, l) in lambda.iter().enumerate() {
        if *l != 0.0 {
            v += l * crate::risk::lower_evaluate(&inst.risks()[i], inst.scenarios(), &table[i])?;
        }
    }
    Ok(v)
}

fn exhaustive(inst: &RcpInstance, lambda: &[f64]) -> Result<Vec<usize>> {
    let in_family = lambda
        .iter()
        .zip(inst.risks())
        .all(|(l, r)| *l == 0.0 || r.cvar_family().is_some());
    if in_family {
        threshold_search(inst, lambda)
    } else {
        enumerate_grid(inst, lambda)
    }
}

/// Exact maximization for risks in the CVaR family.
///
/// `max_p Σ_i λ_i ρ̲_i(f_i(p)) = max_t max_p E{φ_t(p(H), H)}` where, for a
/// fixed threshold vector `t`, `φ_t` is a sum of per-atom terms, so the inner
/// maximum is attained atom by atom. An optimal `t_i` is a lower quantile of
/// `f_i(p)`, hence one of the finitely many service values on the grid.
/// Work is done on the unrefined atoms, so the result is identical for every
/// refinement of the same instance.
fn threshold_search(inst: &RcpInstance, lambda: &[f64]) -> Result<Vec<usize>> {
    let root = inst.scenarios().root();
    let grids: Vec<_> = (0..root.len())
        .map(|j| inst.atom_grid(j * inst.scenarios().refinement_factor()))
        .collect();
    let mut linear = vec![0.0; lambda.len()];
    let mut thresholds = Vec::new();
    for (i, (l, r)) in lambda.iter().zip(inst.risks()).enumerate() {
        if *l == 0.0 {
            continue;
        }
        let (theta, beta) = r.cvar_family().expect("checked by caller");
        if theta >= 1.0 || beta >= 1.0 {
            linear[i] = *l;
            continue;
        }
        linear[i] = l * theta;
        let mut candidates: Vec<f64> = grids.iter().flat_map(|g| g.services.iter().map(move |f| f[i])).collect();
        candidates.sort_by(f64::total_cmp);
        candidates.dedup();
        thresholds.push(Threshold {
            component: i,
            lambda: *l,
            theta,
            beta,
            candidates,
        });
    }
    let combos: f64 = thresholds.iter().map(|t| t.candidates.len() as f64).product();
    if combos > GRID_LIMIT {
        return Err(Error::GridTooLarge {
            combinations: combos,
            limit: GRID_LIMIT,
        });
    }
    let w = root.weights();
    let mut idx = vec![0usize; thresholds.len()];
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut local = vec![0usize; root.len()];
    loop {
        let t: Vec<f64> = thresholds.iter().zip(&idx).map(|(th, i)| th.candidates[*i]).collect();
        let mut total = 0.0;
        for (th, tv) in thresholds.iter().zip(&t) {
            total += th.lambda * (1.0 - th.theta) * tv;
        }
        for (j, g) in grids.iter().enumerate() {
            let mut atom_best = (0usize, f64::NEG_INFINITY);
            for (c, f) in g.services.iter().enumerate() {
                let mut v = 0.0;
                for (i, li) in linear.iter().enumerate() {
                    if *li != 0.0 {
                        v += li * f[i];
                    }
                }
                for (th, tv) in thresholds.iter().zip(&t) {
                    v -= th.lambda * (1.0 - th.theta) / th.beta * (tv - f[th.component]).max(0.0);
                }
                if v > atom_best.1 {
                    atom_best = (c, v);
                }
            }
            local[j] = atom_best.0;
            total += w[j] * atom_best.1;
        }
        if best.as_ref().is_none_or(|(b, _)| total > *b) {
            best = Some((total, local.clone()));
        }
        let mut d = idx.len();
        loop {
            if d == 0 {
                let root_choice = best.map(|b| b.1).unwrap_or_else(|| vec![0; root.len()]);
                let factor = inst.scenarios().refinement_factor();
                return Ok((0..inst.len()).map(|k| root_choice[k / factor]).collect());
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < thresholds[d].candidates.len() {
                break;
            }
            idx[d] = 0;
        }
    }
}

/// Lexicographic enumeration of the full product grid.
fn enumerate_grid(inst: &RcpInstance, lambda: &[f64]) -> Result<Vec<usize>> {
    let sizes: Vec<usize> = (0..inst.len()).map(|k| inst.atom_grid(k).points.len()).collect();
    let combos: f64 = sizes.iter().map(|s| *s as f64).product();
    if combos > GRID_LIMIT {
        return Err(Error::GridTooLarge {
            combinations: combos,
            limit: GRID_LIMIT,
        });
    }
    let mut choice = vec![0usize; inst.len()];
    let mut best = (choice.clone(), choice_score(inst, lambda, &choice)?);
    loop {
        let mut d = choice.len();
        loop {
            if d == 0 {
                return Ok(best.0);
            }
            d -= 1;
            choice[d] += 1;
            if choice[d] < sizes[d] {
                break;
            }
            choice[d] = 0;
        }
        let v = choice_score(inst, lambda, &choice)?;
        if v > best.1 {
            best = (choice.clone(), v);
        }
    }
}

fn coordinate(inst: &RcpInstance, lambda: &[f64], seed: u64) -> Result<Vec<usize>> {
    let mut best: Option<(Vec<usize>, f64)> = None;
    for restart in 0..RESTARTS {
        let mut rng = rng::stream_indexed(seed, "coordinate", restart);
        let mut choice: Vec<usize> = (0..inst.len())
            .map(|k| rng.random_range(0..inst.atom_grid(k).points.len()))
            .collect();
        let mut value = choice_score(inst, lambda, &choice)?;
        loop {
            let mut improved = false;
            for k in 0..inst.len() {
                let current = choice[k];
                for c in 0..inst.atom_grid(k).points.len() {
                    if c == current {
                        continue;
                    }
                    choice[k] = c;
                    let v = choice_score(inst, lambda, &choice)?;
                    if v > value {
                        value = v;
                        improved = true;
                    } else {
                        choice[k] = current;
                    }
                    if choice[k] != current {
                        break;
                    }
                }
            }
            if !improved {
                break;
            }
        }
        if best.as_ref().is_none_or(|(_, b)| value > *b) {
            best = Some((choice, value));
        }
    }
    Ok(best.map(|b| b.0).expect("at least one restart"))
}

fn minimax(inst: &RcpInstance, lambda: &[f64]) -> Result<Vec<usize>> {
    let n = lambda.len();
    let mut zeta: Vec<Vec<f64>> = vec![vec![1.0; inst.len()]; n];
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..MINIMAX_ROUNDS {
        let choice: Vec<usize> = (0..inst.len())
            .map(|k| {
                let g = inst.atom_grid(k);
                let mut atom_best = (0usize, f64::NEG_INFINITY);
                for (c, f) in g.services.iter().enumerate() {
                    let v: f64 = (0..n).filter(|i| lambda[*i] != 0.0).map(|i| lambda[i] * zeta[i][k] * f[i]).sum();
                    if v > atom_best.1 {
                        atom_best = (c, v);
                    }
                }
                atom_best.0
            })
            .collect();
        let value = choice_score(inst, lambda, &choice)?;
        let table = inst.choice_table(&choice);
        let repeated = best.as_ref().is_some_and(|(c, _)| *c == choice);
        if best.as_ref().is_none_or(|(_, b)| value > *b) {
            best = Some((choice, value));
        } else if repeated {
            break;
        }
        for i in 0..n {
            zeta[i] = worst_case_density(&inst.risks()[i], inst.scenarios(), &table[i], Direction::Inf)?.into_inner();
        }
    }
    Ok(best.map(|b| b.0).expect("at least one round"))
}
