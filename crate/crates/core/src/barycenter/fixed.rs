//! Barycenters restricted to a fixed candidate support.

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use rayon::prelude::*;

use super::{active_entries, BarycenterResult, Method};
use crate::error::{Error, Result};
use crate::functionals::variance_functional;
use crate::measures::{sq_dist, DiscreteMeasure, Population};

/// Log-domain iterative Bregman projections.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BregmanOptions {
    /// Final entropic temperature, relative to the largest half squared distance.
    pub epsilon: f64,
    pub max_iter: usize,
    /// L1 tolerance on the disagreement between the plans' common marginals.
    pub tol: f64,
}

impl Default for BregmanOptions {
    fn default() -> Self {
        BregmanOptions { epsilon: 1e-3, max_iter: 20_000, tol: 1e-9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedSupportOptions {
    /// Largest `sum_i n_i * |support|` solved as an exact LP.
    pub lp_cap: usize,
    /// Fallback beyond the cap; `None` makes oversize problems an error.
    pub bregman: Option<BregmanOptions>,
    /// Largest number of objective evaluations spent on the first-order check.
    pub check_budget: usize,
}

impl Default for FixedSupportOptions {
    fn default() -> Self {
        FixedSupportOptions { lp_cap: 60_000, bregman: Some(BregmanOptions::default()), check_budget: 200_000 }
    }
}

/// Tolerance of the first-order mass-transfer check.
pub const FIRST_ORDER_TOL: f64 = 1e-7;

/// Minimize the variance functional over measures supported on `support`.
pub fn barycenter_fixed_support(p: &Population, support: &[Vec<f64>]) -> Result<BarycenterResult> {
    barycenter_fixed_support_with(p, support, &FixedSupportOptions::default())
}

pub fn barycenter_fixed_support_with(
    p: &Population,
    support: &[Vec<f64>],
    options: &FixedSupportOptions,
) -> Result<BarycenterResult> {
    if support.is_empty() {
        return Err(Error::InvalidInput("support must be nonempty".into()));
    }
    // Validates the points and merges duplicates.
    let support = DiscreteMeasure::uniform(support, p.domain())?.points_vec();
    let entries = active_entries(p);
    let size: usize = entries.iter().map(|(_, m)| m.len() * support.len()).sum();
    let (weights, iterations, solved) = if size <= options.lp_cap {
        (solve_lp(&entries, &support)?, 1, true)
    } else if let Some(b) = options.bregman {
        bregman(&entries, &support, &b)?
    } else {
        return Err(Error::SizeCapExceeded { entries: size, cap: options.lp_cap });
    };
    let measure = DiscreteMeasure::from_flat(support.concat(), weights.clone(), p.domain())?;
    let objective = variance_functional(p, &measure)?;
    let check = first_order_violation(p, &support, &weights, options.check_budget)?;
    let converged = solved && check.is_none_or(|v| v <= FIRST_ORDER_TOL);
    Ok(BarycenterResult { measure, objective, method: Method::FixedSupport, iterations, converged })
}

fn solve_lp(entries: &[(f64, &DiscreteMeasure)], support: &[Vec<f64>]) -> Result<Vec<f64>> {
    let k = support.len();
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let w: Vec<_> = (0..k).map(|_| lp.add_var(0.0, (0.0, f64::INFINITY))).collect();
    for (lambda, m) in entries {
        let vars: Vec<Vec<_>> = m
            .points()
            .map(|x| support.iter().map(|z| lp.add_var(0.5 * lambda * sq_dist(x, z), (0.0, f64::INFINITY))).collect())
            .collect();
        for (row, &a) in vars.iter().zip(m.weights()) {
            lp.add_constraint(row.iter().map(|&v| (v, 1.0)).collect::<Vec<_>>(), ComparisonOp::Eq, a);
        }
        for s in 0..k {
            let mut col: Vec<_> = vars.iter().map(|row| (row[s], 1.0)).collect();
            col.push((w[s], -1.0));
            lp.add_constraint(col, ComparisonOp::Eq, 0.0);
        }
    }
    let sol = lp.solve().map_err(|e| Error::SolverNotConverged(format!("fixed-support LP: {e}")))?;
    let mut weights: Vec<f64> = w.iter().map(|&v| sol.var_value(v).max(0.0)).collect();
    let top = weights.iter().fold(0.0f64, |a, &b| a.max(b));
    for v in &mut weights {
        if *v <= 1e-13 * top {
            *v = 0.0;
        }
    }
    Ok(weights)
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Entropic barycenter on the support, annealing the temperature geometrically.
fn bregman(
    entries: &[(f64, &DiscreteMeasure)],
    support: &[Vec<f64>],
    options: &BregmanOptions,
) -> Result<(Vec<f64>, usize, bool)> {
    let k = support.len();
    let costs: Vec<Vec<f64>> = entries
        .iter()
        .map(|(_, m)| m.points().flat_map(|x| support.iter().map(move |z| 0.5 * sq_dist(x, z))).collect())
        .collect();
    let scale = costs.iter().flatten().fold(0.0f64, |a, &b| a.max(b)).max(f64::MIN_POSITIVE);
    let eps_final = options.epsilon * scale;
    let log_a: Vec<Vec<f64>> = entries.iter().map(|(_, m)| m.weights().iter().map(|w| w.ln()).collect()).collect();
    let mut f: Vec<Vec<f64>> = entries.iter().map(|(_, m)| vec![0.0; m.len()]).collect();
    let mut g: Vec<Vec<f64>> = vec![vec![0.0; k]; entries.len()];
    let mut log_w = vec![-(k as f64).ln(); k];

    let mut eps = scale.max(eps_final);
    let mut used = 0;
    loop {
        let last = eps <= eps_final;
        let mut done = false;
        while used < options.max_iter {
            used += 1;
            for (i, c) in costs.iter().enumerate() {
                let gi = &g[i];
                f[i] = (0..log_a[i].len())
                    .into_par_iter()
                    .map(|r| {
                        let row = &c[r * k..(r + 1) * k];
                        eps * log_a[i][r] - eps * log_sum_exp((0..k).map(|s| (gi[s] - row[s]) / eps))
                    })
                    .collect();
            }
            let log_cols: Vec<Vec<f64>> = costs
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let (fi, gi) = (&f[i], &g[i]);
                    (0..k)
                        .into_par_iter()
                        .map(|s| gi[s] / eps + log_sum_exp((0..fi.len()).map(|r| (fi[r] - c[r * k + s]) / eps)))
                        .collect()
                })
                .collect();
            for s in 0..k {
                log_w[s] = entries.iter().zip(&log_cols).map(|((l, _), lc)| l * lc[s]).sum();
            }
            let mut err: f64 = 0.0;
            for (i, lc) in log_cols.iter().enumerate() {
                let e: f64 = (0..k).map(|s| (lc[s].exp() - log_w[s].exp()).abs()).sum();
                err = err.max(e);
                for s in 0..k {
                    g[i][s] += eps * (log_w[s] - lc[s]);
                }
            }
            if f.iter().chain(&g).flatten().any(|v| !v.is_finite()) {
                return Err(Error::NumericalUnderflow);
            }
            if err <= options.tol {
                done = true;
                break;
            }
        }
        if last || used >= options.max_iter {
            let total: f64 = log_w.iter().map(|v| v.exp()).sum();
            let w = log_w.iter().map(|v| v.exp() / total).collect();
            return Ok((w, used, last && done));
        }
        eps = (eps / 4.0).max(eps_final);
    }
}

/// Largest decrease of the variance functional achievable by moving mass
/// `delta` from one support point to another, for `delta` equal to the full
/// mass at the source point and to an eighth of it.
///
/// Returns `None` when the check would need more than `budget` evaluations.
pub fn first_order_violation(
    p: &Population,
    support: &[Vec<f64>],
    weights: &[f64],
    budget: usize,
) -> Result<Option<f64>> {
    let k = support.len();
    let sources: Vec<usize> = (0..k).filter(|&s| weights[s] > 0.0).collect();
    let evaluations = 2 * sources.len() * k.saturating_sub(1);
    if evaluations > budget {
        return Ok(None);
    }
    let flat = support.concat();
    let base = variance_functional(p, &DiscreteMeasure::from_flat(flat.clone(), weights.to_vec(), p.domain())?)?;
    let moves: Vec<(usize, usize, f64)> = sources
        .iter()
        .flat_map(|&s| {
            (0..k).filter(move |&t| t != s).flat_map(move |t| [(s, t, weights[s]), (s, t, weights[s] / 8.0)])
        })
        .collect();
    let values = moves
        .par_iter()
        .map(|&(s, t, delta)| {
            let mut w = weights.to_vec();
            w[s] -= delta;
            w[t] += delta;
            if w[s] < 0.0 {
                w[s] = 0.0;
            }
            let m = DiscreteMeasure::from_flat(flat.clone(), w, p.domain())?;
            Ok(base - variance_functional(p, &m)?)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(Some(values.into_iter().fold(0.0, f64::max)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{make_discrete, Domain};

    fn fig1_population(eps: f64) -> Population {
        let d = Domain::new(2.0, 2).unwrap();
        let r1 = make_discrete(&[vec![0.0, 1.0], vec![0.0, -1.0]], &[0.5, 0.5], d).unwrap();
        let r2 = make_discrete(&[vec![1.0, eps / 2.0], vec![-1.0, -eps / 2.0]], &[0.5, 0.5], d).unwrap();
        Population::uniform(vec![r1, r2]).unwrap()
    }

    #[test]
    fn single_marginal_on_its_support() {
        let d = Domain::new(1.0, 2).unwrap();
        let r = make_discrete(&[vec![0.1, 0.2], vec![-0.3, 0.4], vec![0.5, -0.5]], &[0.2, 0.3, 0.5], d).unwrap();
        let b = barycenter_fixed_support(&Population::single(r.clone()), &r.points_vec()).unwrap();
        assert!(b.converged);
        assert!(b.measure.same_atoms(&r, 1e-9));
        assert!(b.objective < 1e-10);
    }

    #[test]
    fn two_point_family_midpoints() {
        let eps = 0.5;
        let p = fig1_population(eps);
        let r1 = [[0.0, 1.0], [0.0, -1.0]];
        let r2 = [[1.0, eps / 2.0], [-1.0, -eps / 2.0]];
        let mut support = Vec::new();
        for a in &r1 {
            for b in &r2 {
                support.push(vec![0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]);
            }
        }
        let b = barycenter_fixed_support(&p, &support).unwrap();
        assert!(b.converged);
        let expected = make_discrete(&[vec![0.5, 0.5 + eps / 4.0], vec![-0.5, -0.5 - eps / 4.0]], &[0.5, 0.5], p.domain())
            .unwrap();
        assert!(b.measure.same_atoms(&expected, 1e-9), "{:?}", b.measure);
    }

    #[test]
    fn two_diracs_put_everything_on_the_midpoint() {
        let d = Domain::new(1.0, 1).unwrap();
        let p = Population::uniform(vec![
            DiscreteMeasure::dirac(&[-0.6], d).unwrap(),
            DiscreteMeasure::dirac(&[0.2], d).unwrap(),
        ])
        .unwrap();
        let support: Vec<Vec<f64>> = [-0.6, -0.4, -0.2, 0.0, 0.2].iter().map(|&x| vec![x]).collect();
        let b = barycenter_fixed_support(&p, &support).unwrap();
        assert_eq!(b.measure.points_vec(), vec![vec![-0.2]]);

        // Exhaustive search over weights on a coarse simplex grid never beats it.
        let steps = 8;
        let mut best = f64::INFINITY;
        let mut stack = vec![(Vec::new(), steps)];
        while let Some((w, left)) = stack.pop() {
            if w.len() == support.len() - 1 {
                let mut full: Vec<f64> = w.iter().map(|&c| c as f64 / steps as f64).collect();
                full.push(left as f64 / steps as f64);
                let m = DiscreteMeasure::from_flat(support.concat(), full, d).unwrap();
                best = best.min(variance_functional(&p, &m).unwrap());
                continue;
            }
            for c in 0..=left {
                let mut next = w.clone();
                next.push(c);
                stack.push((next, left - c));
            }
        }
        assert!(b.objective <= best + 1e-12);
        assert!((b.objective - 0.08).abs() < 1e-12);
    }

    #[test]
    fn bregman_fallback_is_close() {
        let eps = 0.25;
        let p = fig1_population(eps);
        let support: Vec<Vec<f64>> =
            (0..9).flat_map(|i| (0..9).map(move |j| vec![-1.0 + 0.25 * i as f64, -1.0 + 0.25 * j as f64])).collect();
        let exact = barycenter_fixed_support(&p, &support).unwrap();
        let opts = FixedSupportOptions { lp_cap: 0, check_budget: 0, ..Default::default() };
        let approx = barycenter_fixed_support_with(&p, &support, &opts).unwrap();
        assert!(approx.objective >= exact.objective - 1e-9);
        assert!(approx.objective - exact.objective < 5e-3, "{} vs {}", approx.objective, exact.objective);
        let none = FixedSupportOptions { lp_cap: 0, bregman: None, check_budget: 0 };
        assert!(matches!(barycenter_fixed_support_with(&p, &support, &none), Err(Error::SizeCapExceeded { .. })));
    }

    #[test]
    fn translation_equivariance() {
        let d = Domain::new(3.0, 2).unwrap();
        let v = [0.3, -0.2];
        let base = fig1_population(0.4);
        let shifted: Vec<DiscreteMeasure> = base
            .measures()
            .map(|m| {
                let pts: Vec<Vec<f64>> = m.points().map(|x| vec![x[0] + v[0], x[1] + v[1]]).collect();
                make_discrete(&pts, m.weights(), d).unwrap()
            })
            .collect();
        let base = Population::uniform(base.measures().map(|m| make_discrete(&m.points_vec(), m.weights(), d).unwrap()).collect()).unwrap();
        let shifted = Population::uniform(shifted).unwrap();
        let support: Vec<Vec<f64>> =
            (0..5).flat_map(|i| (0..5).map(move |j| vec![-1.0 + 0.5 * i as f64, -1.0 + 0.5 * j as f64])).collect();
        let support_shift: Vec<Vec<f64>> = support.iter().map(|z| vec![z[0] + v[0], z[1] + v[1]]).collect();
        let a = barycenter_fixed_support(&base, &support).unwrap();
        let b = barycenter_fixed_support(&shifted, &support_shift).unwrap();
        let moved: Vec<Vec<f64>> = a.measure.points().map(|x| vec![x[0] + v[0], x[1] + v[1]]).collect();
        let moved = make_discrete(&moved, a.measure.weights(), d).unwrap();
        assert!((a.objective - b.objective).abs() < 1e-9);
        assert!(moved.same_atoms(&b.measure, 1e-8));
    }
}
