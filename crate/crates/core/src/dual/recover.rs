//! Primal recovery by time-sharing the policies visited by the dual solver.

use serde::{Deserialize, Serialize};

use super::DualSolveResult;
use crate::error::{Error, Result};
use crate::mixing::{mix_tables, TestDensityFamily};
use crate::model::{Policy, RcpInstance};
use crate::probability::duplicate_rows;

const OUTER_ITERS: usize = 25;
const INNER_ITERS: usize = 20;
const POLISH_BUDGET_PER_ATOM: usize = 10;
const MIN_SHARE: f64 = 1e-6;

/// A primal point `(x, p)` with `p` on a refined scenario set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimalCandidate {
    pub x: Vec<f64>,
    pub policy: Policy,
    /// `g⁰(x)`.
    pub value: f64,
    pub min_slack: f64,
    pub feasible: bool,
    pub refine_factor: usize,
}

/// A source policy: its service table and rows on the target set.
struct Source {
    table: Vec<Vec<f64>>,
    rows: Vec<Vec<f64>>,
    risk: Vec<f64>,
}

struct Recovery<'a> {
    inst: &'a RcpInstance,
    sources: Vec<Source>,
    tol: f64,
}

/// Values closer than this count as a tie and fall through to `aux`.
const TIE: f64 = 1e-12;

/// Feasibility-first ordering: feasible beats infeasible, then by value
/// (feasible) or by violation (infeasible). Ties in value are broken by
/// `aux`, the objective obtained when every risk is replaced by the mean,
/// and then by `room`, the smallest utility-constraint slack. Both give
/// local search a direction across risk plateaus.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Score {
    feasible: bool,
    key: f64,
    aux: f64,
    room: f64,
}

impl Score {
    fn beats(&self, other: &Score) -> bool {
        if self.feasible != other.feasible {
            return self.feasible;
        }
        if (self.key - other.key).abs() > TIE {
            return self.key > other.key;
        }
        if (self.aux - other.aux).abs() > TIE {
            return self.aux > other.aux;
        }
        self.room > other.room + TIE
    }
}

impl Recovery<'_> {
    fn table(&self, assign: &[usize]) -> Vec<Vec<f64>> {
        let n = self.inst.n_services();
        (0..n)
            .map(|i| assign.iter().enumerate().map(|(k, t)| self.sources[*t].table[i][k]).collect())
            .collect()
    }

    /// Best `x` for risk vector `r` among `min(x*, r)` and `min(upper, r)`.
    fn best_x(&self, risk: &[f64], x_star: &[f64]) -> (Vec<f64>, Score) {
        let bx = self.inst.x_box();
        let mut best: Option<(Vec<f64>, Score)> = None;
        for cap in [x_star, &bx.upper[..]] {
            let x: Vec<f64> = cap
                .iter()
                .zip(risk)
                .zip(bx.lower.iter().zip(&bx.upper))
                .map(|((c, r), (lo, hi))| c.min(*r).clamp(*lo, *hi))
                .collect();
            let slack = self.inst.slack_from_risk(&x, risk).min();
            let score = if slack >= -self.tol {
                Score {
                    feasible: true,
                    key: self.inst.objective().value(&x),
                    aux: 0.0,
                    room: 0.0,
                }
            } else {
                Score {
                    feasible: false,
                    key: slack,
                    aux: 0.0,
                    room: 0.0,
                }
            };
            if best.as_ref().is_none_or(|(_, s)| score.beats(s)) {
                best = Some((x, score));
            }
        }
        best.expect("two candidates")
    }

    /// [`Self::best_x`] with the mean-service tie-breaker filled in.
    fn scored(&self, table: &[Vec<f64>], x_star: &[f64]) -> Result<(Vec<f64>, Score)> {
        let risk = self.inst.risk_vector(table)?;
        let (x, mut score) = self.best_x(&risk, x_star);
        if score.feasible {
            let s = self.inst.scenarios();
            let bx = self.inst.x_box();
            let capped = |cap: &[f64], r: &[f64]| -> Vec<f64> {
                cap.iter()
                    .zip(r)
                    .zip(bx.lower.iter().zip(&bx.upper))
                    .map(|((c, r), (lo, hi))| c.min(*r).clamp(*lo, *hi))
                    .collect()
            };
            let mean = table.iter().map(|row| s.expectation(row)).collect::<Result<Vec<f64>>>()?;
            score.aux = self.inst.objective().value(&capped(x_star, &mean));
            let xu = capped(&bx.upper, &risk);
            let util = self.inst.slack_from_risk(&xu, &risk).util;
            score.room = if util.is_empty() { 0.0 } else { util.into_iter().fold(f64::INFINITY, f64::min) };
        }
        Ok((x, score))
    }

    fn evaluate(&self, assign: &[usize], x_star: &[f64]) -> Result<(Vec<f64>, Score)> {
        self.scored(&self.table(assign), x_star)
    }

    /// Realizes the mixture `α` by pairwise time-sharing, largest share first.
    fn realize(&self, alpha: &[f64], seed: u64) -> Result<Vec<usize>> {
        let mut order: Vec<usize> = (0..alpha.len()).filter(|t| alpha[*t] >= MIN_SHARE).collect();
        order.sort_by(|a, b| alpha[*b].total_cmp(&alpha[*a]));
        let first = order.first().copied().unwrap_or(0);
        let mut assign = vec![first; self.inst.len()];
        let mut acc = alpha.get(first).copied().unwrap_or(1.0);
        for &t in order.iter().skip(1) {
            let share = alpha[t] / (acc + alpha[t]);
            let current = self.table(&assign);
            let family = TestDensityFamily::from_tables(self.inst, &self.sources[t].table, &current, seed ^ t as u64)?;
            let (mask, _) = mix_tables(self.inst, &self.sources[t].table, &current, share, 1, &family)?;
            for (a, inside) in assign.iter_mut().zip(mask) {
                if inside {
                    *a = t;
                }
            }
            acc += alpha[t];
        }
        Ok(assign)
    }

    /// Single-atom source changes, then pair exchanges, with strict improvement.
    fn polish(&self, mut assign: Vec<usize>, x_star: &[f64]) -> Result<(Vec<usize>, Vec<f64>, Score)> {
        let (mut x, mut score) = self.evaluate(&assign, x_star)?;
        let k = assign.len();
        let budget = POLISH_BUDGET_PER_ATOM * k * self.sources.len().max(2);
        let mut evals = 0;
        loop {
            let mut improved = false;
            for atom in 0..k {
                let current = assign[atom];
                for t in 0..self.sources.len() {
                    if t == current || evals >= budget {
                        continue;
                    }
                    assign[atom] = t;
                    evals += 1;
                    let (xt, st) = self.evaluate(&assign, x_star)?;
                    if st.beats(&score) {
                        x = xt;
                        score = st;
                        improved = true;
                        break;
                    }
                    assign[atom] = current;
                }
            }
            for a in 0..k {
                for b in a + 1..k {
                    if assign[a] == assign[b] || evals >= budget {
                        continue;
                    }
                    assign.swap(a, b);
                    evals += 1;
                    let (xt, st) = self.evaluate(&assign, x_star)?;
                    if st.beats(&score) {
                        x = xt;
                        score = st;
                        improved = true;
                    } else {
                        assign.swap(a, b);
                    }
                }
            }
            if !improved || evals >= budget {
                break;
            }
        }
        Ok((assign, x, score))
    }
}

fn set_column(table: &mut [Vec<f64>], atom: usize, values: &[f64]) {
    for (r, v) in table.iter_mut().zip(values) {
        r[atom] = *v;
    }
}

impl Recovery<'_> {
    /// Local search over the per-atom grids: single-atom moves with best
    /// improvement, and two-atom moves with first improvement once single
    /// moves stall. Keeps the incoming point when nothing beats it.
    fn grid_polish(
        &self,
        mut table: Vec<Vec<f64>>,
        mut rows: Vec<Vec<f64>>,
        mut x: Vec<f64>,
        mut score: Score,
        cap: &[f64],
    ) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let k = rows.len();
        let sizes: usize = (0..k).map(|a| self.inst.atom_grid(a).points.len()).sum();
        let budget = POLISH_BUDGET_PER_ATOM * sizes * k.max(2);
        let mut evals = 0;
        let column = |t: &[Vec<f64>], a: usize| -> Vec<f64> { t.iter().map(|r| r[a]).collect() };
        while evals < budget {
            let mut improved = false;
            for atom in 0..k {
                let grid = self.inst.atom_grid(atom);
                let saved = column(&table, atom);
                let mut pick = None;
                for (g, f) in grid.services.iter().enumerate() {
                    if evals >= budget {
                        break;
                    }
                    set_column(&mut table, atom, f);
                    evals += 1;
                    let (xt, st) = self.scored(&table, cap)?;
                    if st.beats(&score) {
                        x = xt;
                        score = st;
                        pick = Some(g);
                    }
                }
                match pick {
                    Some(g) => {
                        set_column(&mut table, atom, &grid.services[g]);
                        rows[atom] = grid.points[g].clone();
                        improved = true;
                    }
                    None => set_column(&mut table, atom, &saved),
                }
            }
            if improved {
                continue;
            }
            'pairs: for a in 0..k {
                let (ga, sa) = (self.inst.atom_grid(a), column(&table, a));
                for b in a + 1..k {
                    let (gb, sb) = (self.inst.atom_grid(b), column(&table, b));
                    for (i, fa) in ga.services.iter().enumerate() {
                        if *fa == sa {
                            continue;
                        }
                        set_column(&mut table, a, fa);
                        for (j, fb) in gb.services.iter().enumerate() {
                            if *fb == sb {
                                continue;
                            }
                            if evals >= budget {
                                set_column(&mut table, a, &sa);
                                break 'pairs;
                            }
                            set_column(&mut table, b, fb);
                            evals += 1;
                            let (xt, st) = self.scored(&table, cap)?;
                            if st.beats(&score) {
                                x = xt;
                                score = st;
                                rows[a] = ga.points[i].clone();
                                rows[b] = gb.points[j].clone();
                                improved = true;
                                break 'pairs;
                            }
                        }
                        set_column(&mut table, b, &sb);
                    }
                    set_column(&mut table, a, &sa);
                }
            }
            if !improved {
                break;
            }
        }
        Ok((x, rows))
    }
}

/// Projection onto the probability simplex.
fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (j, x) in u.iter().enumerate() {
        cum += x;
        let t = (cum - 1.0) / (j + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// `max g⁰(x)` over `x ∈ X`, `α ∈ Δ` subject to `x ≤ R α` and `g(x) ≥ 0`,
/// by an augmented Lagrangian with projected-gradient inner steps.
fn mixture_program(inst: &RcpInstance, risks: &[Vec<f64>], x0: Vec<f64>, alpha0: Vec<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = inst.n_services();
    let ng = inst.n_constraints();
    let bx = inst.x_box();
    let mix = |alpha: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| alpha.iter().zip(risks).map(|(a, r)| a * r[i]).sum())
            .collect()
    };
    let mut nu = vec![0.0; n];
    let mut kappa = vec![0.0; ng];
    let mut mu = 10.0;
    let phi = |x: &[f64], alpha: &[f64], nu: &[f64], kappa: &[f64], mu: f64| -> f64 {
        let r = mix(alpha);
        let mut v = inst.objective().value(x);
        for i in 0..n {
            let c = x[i] - r[i];
            v -= ((nu[i] + mu * c).max(0.0).powi(2) - nu[i] * nu[i]) / (2.0 * mu);
        }
        for (j, g) in inst.constraints().iter().enumerate() {
            let c = -g.value(x);
            v -= ((kappa[j] + mu * c).max(0.0).powi(2) - kappa[j] * kappa[j]) / (2.0 * mu);
        }
        v
    };
    let width = bx
        .lower
        .iter()
        .zip(&bx.upper)
        .map(|(a, b)| b - a)
        .fold(0.0, f64::max)
        .max(1e-12);
    let h = 1e-7 * (1.0 + width);
    let (mut x, mut alpha) = (x0, alpha0);
    for _ in 0..OUTER_ITERS {
        let mut step = 0.5 * width;
        for _ in 0..INNER_ITERS {
            let f0 = phi(&x, &alpha, &nu, &kappa, mu);
            let mut gx = vec![0.0; n];
            for i in 0..n {
                let mut up = x.clone();
                let mut dn = x.clone();
                up[i] += h;
                dn[i] -= h;
                gx[i] = (phi(&up, &alpha, &nu, &kappa, mu) - phi(&dn, &alpha, &nu, &kappa, mu)) / (2.0 * h);
            }
            let r = mix(&alpha);
            let ga: Vec<f64> = risks
                .iter()
                .map(|rt| (0..n).map(|i| (nu[i] + mu * (x[i] - r[i])).max(0.0) * rt[i]).sum())
                .collect();
            let norm = gx.iter().chain(&ga).map(|v| v * v).sum::<f64>().sqrt();
            if !(norm > 0.0) {
                break;
            }
            let mut moved = false;
            for _ in 0..40 {
                let xt = bx.clamp(&x.iter().zip(&gx).map(|(v, g)| v + step * g / norm).collect::<Vec<_>>());
                let at = project_simplex(&alpha.iter().zip(&ga).map(|(v, g)| v + step * g / norm).collect::<Vec<_>>());
                if phi(&xt, &at, &nu, &kappa, mu) > f0 {
                    x = xt;
                    alpha = at;
                    moved = true;
                    step *= 1.5;
                    break;
                }
                step *= 0.5;
            }
            if !moved {
                break;
            }
        }
        let r = mix(&alpha);
        for i in 0..n {
            nu[i] = (nu[i] + mu * (x[i] - r[i])).max(0.0);
        }
        for (j, g) in inst.constraints().iter().enumerate() {
            kappa[j] = (kappa[j] - mu * g.value(&x)).max(0.0);
        }
        mu = (mu * 2.0).min(1e6);
    }
    (x, alpha)
}

/// Builds a primal candidate on `refine(S, m)` from the policies in a dual
/// trace: optimizes a mixture of their risk vectors, realizes it by
/// time-sharing, and refines the realization by local search. The best
/// single trace iterate and the Slater witness are kept as fallbacks.
pub fn recover_primal(inst: &RcpInstance, result: &DualSolveResult, m: usize, tol: f64) -> Result<PrimalCandidate> {
    if result.trace.is_empty() || result.choices.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let target = inst.refined(m)?;
    let mut sources = Vec::new();
    for choice in &result.choices {
        if choice.len() != inst.len() {
            return Err(Error::Misalignment {
                expected: inst.len(),
                found: choice.len(),
            });
        }
        let lifted = duplicate_rows(choice, m);
        let table = target.choice_table(&lifted);
        let risk = target.risk_vector(&table)?;
        sources.push(Source {
            rows: target.choice_policy(&lifted).rows().to_vec(),
            table,
            risk,
        });
    }
    let witness = target.witness();
    let wtable = target.service_table(&witness.policy)?;
    sources.push(Source {
        risk: target.risk_vector(&wtable)?,
        table: wtable,
        rows: witness.policy.rows().to_vec(),
    });
    let rec = Recovery {
        inst: &target,
        sources,
        tol,
    };
    let upper = target.x_box().upper.clone();

    // Best single source.
    let mut single: Option<(usize, Vec<f64>, Score)> = None;
    for (t, s) in rec.sources.iter().enumerate() {
        let (x, score) = rec.scored(&s.table, &upper)?;
        if single.as_ref().is_none_or(|(_, _, b)| score.beats(b)) {
            single = Some((t, x, score));
        }
    }
    let (t0, x0, s0) = single.expect("at least one source");
    let mut best = (vec![t0; target.len()], x0.clone(), s0);

    if rec.sources.len() > 1 {
        let risks: Vec<Vec<f64>> = rec.sources.iter().map(|s| s.risk.clone()).collect();
        let mut alpha0 = vec![0.0; risks.len()];
        alpha0[t0] = 1.0;
        let (x_star, alpha) = mixture_program(&target, &risks, x0, alpha0);
        let assign = rec.realize(&alpha, inst.seed())?;
        let (assign, x, score) = rec.polish(assign, &x_star)?;
        if score.beats(&best.2) {
            best = (assign, x, score);
        }
    }

    let (assign, x, score) = best;
    let rows: Vec<Vec<f64>> = assign.iter().enumerate().map(|(k, t)| rec.sources[*t].rows[k].clone()).collect();
    let (x, rows) = rec.grid_polish(rec.table(&assign), rows, x, score, &upper)?;
    let policy = Policy::from_rows(rows);
    let min_slack = target.constraint_slack(&x, &policy)?.min();
    Ok(PrimalCandidate {
        value: target.objective().value(&x),
        feasible: min_slack >= -tol,
        x,
        policy,
        min_slack,
        refine_factor: m * inst.scenarios().refinement_factor(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dual::{solve_dual, DualOptions};

    #[test]
    fn simplex_projection() {
        let p = project_simplex(&[0.5, 0.5]);
        assert_eq!(p, vec![0.5, 0.5]);
        let p = project_simplex(&[2.0, 0.0]);
        assert_eq!(p, vec![1.0, 0.0]);
        let p = project_simplex(&[0.3, 0.1, -1.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((p[0] - 0.6).abs() < 1e-12 && (p[1] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn toy_recovery() {
        let inst = super::super::tests::toy();
        let r = solve_dual(&inst, &DualOptions::default()).unwrap();
        let c = recover_primal(&inst, &r, 1, 1e-9).unwrap();
        assert_eq!(c.x, vec![1.0]);
        assert_eq!(c.policy, Policy::constant(1, vec![1.0]));
        assert_eq!(c.value, 1.0);
        assert_eq!(c.min_slack, 0.0);
        assert!(c.feasible);
    }
}
