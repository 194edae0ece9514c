//! Brute-force oracles shared by the integration tests. None of them calls
//! the library's risk evaluators or inner solvers.

#![allow(dead_code)]

use riskalloc::dual::Multipliers;
use riskalloc::model::RcpInstance;
use riskalloc::RiskSpec;

pub fn mean(w: &[f64], z: &[f64]) -> f64 {
    w.iter().zip(z).map(|(a, b)| a * b).sum()
}

/// `sup E{ζ Z}` over `{0 ≤ ζ ≤ 1/β, E ζ = 1}` by enumerating the vertices
/// of the polytope: every coordinate at a bound except at most one.
pub fn cvar_upper_vertices(w: &[f64], z: &[f64], beta: f64) -> f64 {
    let k = w.len();
    assert!(k <= 16, "vertex enumeration is exponential");
    let cap = 1.0 / beta;
    let mut best = f64::NEG_INFINITY;
    for mask in 0u32..(1 << k) {
        let full: f64 = (0..k).filter(|j| mask & (1 << j) != 0).map(|j| w[j] * cap).sum();
        let base: f64 = (0..k).filter(|j| mask & (1 << j) != 0).map(|j| w[j] * cap * z[j]).sum();
        if (full - 1.0).abs() <= 1e-12 {
            best = best.max(base);
        }
        if full < 1.0 {
            for f in (0..k).filter(|j| mask & (1 << j) == 0) {
                let zeta = (1.0 - full) / w[f];
                if zeta <= cap + 1e-12 {
                    best = best.max(base + w[f] * zeta * z[f]);
                }
            }
        }
    }
    best
}

pub fn mad_upper_formula(w: &[f64], z: &[f64], lambda: f64) -> f64 {
    let m = mean(w, z);
    m + lambda * w.iter().zip(z).map(|(a, b)| a * (b - m).abs()).sum::<f64>()
}

/// `ρ(Z)` for the kinds with an independent formula (box-mean excluded).
pub fn upper_oracle(risk: &RiskSpec, w: &[f64], z: &[f64]) -> f64 {
    match risk {
        RiskSpec::Expectation => mean(w, z),
        RiskSpec::Cvar { beta } => cvar_upper_vertices(w, z, *beta),
        RiskSpec::Mad { lambda } => mad_upper_formula(w, z, *lambda),
        RiskSpec::MeanCvar { theta, beta } => theta * mean(w, z) + (1.0 - theta) * cvar_upper_vertices(w, z, *beta),
        RiskSpec::BoxMean { .. } => unimplemented!("no independent oracle for box-mean envelopes"),
    }
}

pub fn lower_oracle(risk: &RiskSpec, w: &[f64], z: &[f64]) -> f64 {
    let neg: Vec<f64> = z.iter().map(|v| -v).collect();
    -upper_oracle(risk, w, &neg)
}

/// Every grid choice vector of the instance, in lexicographic order.
pub fn all_choices(inst: &RcpInstance) -> Vec<Vec<usize>> {
    let sizes: Vec<usize> = (0..inst.len()).map(|k| inst.atom_grid(k).points.len()).collect();
    let mut out = vec![vec![]];
    for s in sizes {
        out = out
            .into_iter()
            .flat_map(|c: Vec<usize>| {
                (0..s).map(move |g| {
                    let mut c = c.clone();
                    c.push(g);
                    c
                })
            })
            .collect();
    }
    out
}

/// Risk vector of a grid choice computed with the oracle evaluators.
pub fn risk_of_choice(inst: &RcpInstance, choice: &[usize]) -> Vec<f64> {
    let w = inst.scenarios().weights();
    (0..inst.n_services())
        .map(|i| {
            let z: Vec<f64> = choice
                .iter()
                .enumerate()
                .map(|(k, c)| inst.atom_grid(k).services[*c][i])
                .collect();
            lower_oracle(&inst.risks()[i], w, &z)
        })
        .collect()
}

/// Points of a uniform grid with `per_axis` points per coordinate of `X`.
pub fn x_grid(inst: &RcpInstance, per_axis: usize) -> Vec<Vec<f64>> {
    let bx = inst.x_box();
    let mut out = vec![vec![]];
    for (lo, hi) in bx.lower.iter().zip(&bx.upper) {
        let axis: Vec<f64> = (0..per_axis)
            .map(|j| lo + (hi - lo) * j as f64 / (per_axis - 1) as f64)
            .collect();
        out = out
            .into_iter()
            .flat_map(|p: Vec<f64>| {
                axis.iter().map(move |v| {
                    let mut p = p.clone();
                    p.push(*v);
                    p
                })
            })
            .collect();
    }
    out
}

/// `sup L(x, p, λ)` over the x-grid times every grid policy. The Lagrangian
/// is a sum of an x-term and a p-term, so the two sups are taken apart.
pub fn brute_dual(inst: &RcpInstance, lambda: &Multipliers, xs: &[Vec<f64>], risks: &[Vec<f64>]) -> f64 {
    let x_part = xs
        .iter()
        .map(|x| {
            let g: f64 = inst
                .constraints()
                .iter()
                .zip(&lambda.util)
                .map(|(u, l)| l * u.value(x))
                .sum();
            inst.objective().value(x) + g - lambda.risk.iter().zip(x).map(|(l, v)| l * v).sum::<f64>()
        })
        .fold(f64::NEG_INFINITY, f64::max);
    let p_part = risks
        .iter()
        .map(|r| lambda.risk.iter().zip(r).map(|(l, v)| l * v).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max);
    x_part + p_part
}

/// Feasible objective values `g⁰(x)` over the x-grid times every grid policy.
pub fn brute_primal(inst: &RcpInstance, xs: &[Vec<f64>], risks: &[Vec<f64>]) -> Option<f64> {
    let mut best: Option<f64> = None;
    for x in xs {
        if inst.constraints().iter().any(|g| g.value(x) < 0.0) {
            continue;
        }
        let v = inst.objective().value(x);
        if best.is_some_and(|b| b >= v) {
            continue;
        }
        if risks.iter().any(|r| r.iter().zip(x).all(|(ri, xi)| xi <= ri)) {
            best = Some(v);
        }
    }
    best
}

/// Exact optimum of the generated outage family on `refine(S, m)`: serve the
/// cheapest sub-atoms while the average power budget allows, where serving
/// atom `h` costs the smallest grid power with `h p ≥ 1`. The served mass
/// `q` gives `x_1 = CVaR-lower = max(0, (q − (1 − β)) / β)`.
pub fn outage_exact_primal(h: &[f64], m: usize, step: f64, p_max: f64, beta: f64, budget: f64) -> f64 {
    let mut costs: Vec<f64> = h
        .iter()
        .flat_map(|hk| {
            let lvl = (1.0 / hk / step - 1e-12).ceil() * step;
            let c = if lvl <= p_max + 1e-12 { lvl } else { f64::INFINITY };
            std::iter::repeat_n(c, m)
        })
        .collect();
    costs.sort_by(f64::total_cmp);
    let w = 1.0 / costs.len() as f64;
    let (mut spent, mut q) = (0.0, 0.0);
    for c in costs {
        if spent + w * c > budget + 1e-12 {
            break;
        }
        spent += w * c;
        q += w;
    }
    ((q - (1.0 - beta)) / beta).clamp(0.0, 1.0)
}

pub fn median(mut v: Vec<f64>) -> f64 {
    assert!(!v.is_empty());
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
