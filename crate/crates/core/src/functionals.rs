//! Variance functional, Kantorovich functional, strong-convexity gaps, the
//! dual certificate for barycenters and the constants of the variance
//! inequality.
//!
//! Potentials follow the convex convention of [`crate::ot`]: `psi` lives on
//! the target side, `psi*` on the source side, and
//! `W2^2(rho, mu) = M2(rho) + M2(mu) - 2 (<psi*, rho> + <psi, mu>)` at optimum.

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::barycenter::BarycenterResult;
use crate::error::{Error, Result};
use crate::measures::{dot, norm2, second_moment, DiscreteMeasure, Population};
use crate::ot::{legendre_argmax, legendre_flat, w2_exact, w2_plan_with, OtConfig, PotentialPair};

/// Both sides of a strong-convexity inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    /// `c Var_rho(psi~* - psi*)`.
    pub lhs_variance: f64,
    /// Bregman-type gap, the right side.
    pub gap: f64,
    pub w2_between_targets: f64,
    pub satisfied: bool,
}

impl GapReport {
    fn new(lhs_variance: f64, gap: f64, w2_between_targets: f64) -> Self {
        GapReport { lhs_variance, gap, w2_between_targets, satisfied: lhs_variance <= gap + 1e-9 }
    }
}

/// `F_P(mu) = 1/2 sum_i lambda_i W2^2(rho_i, mu)`.
pub fn variance_functional(p: &Population, mu: &DiscreteMeasure) -> Result<f64> {
    variance_functional_with(p, mu, &OtConfig::default())
}

pub fn variance_functional_with(p: &Population, mu: &DiscreteMeasure, config: &OtConfig) -> Result<f64> {
    if mu.domain() != p.domain() {
        return Err(Error::DomainMismatch);
    }
    let terms = p
        .entries()
        .par_iter()
        .map(|(l, rho)| if *l > 0.0 { Ok(l * w2_plan_with(rho, mu, config)?.1.cost) } else { Ok(0.0) })
        .collect::<Result<Vec<f64>>>()?;
    Ok(0.5 * terms.iter().sum::<f64>())
}

/// `Var_rho(f) = sum_i w_i f_i^2 - (sum_i w_i f_i)^2`, evaluated stably.
pub fn variance(rho: &DiscreteMeasure, f: &[f64]) -> f64 {
    assert_eq!(f.len(), rho.len(), "one value per atom");
    let mean: f64 = f.iter().zip(rho.weights()).map(|(a, w)| a * w).sum();
    f.iter().zip(rho.weights()).map(|(a, w)| w * (a - mean).powi(2)).sum()
}

/// `K_rho(psi) = <psi*, rho>`, with `psi` given on `support`.
pub fn kantorovich_functional(rho: &DiscreteMeasure, psi: &[f64], support: &[Vec<f64>]) -> f64 {
    let conj = legendre_flat(psi, &support.concat(), rho.coords(), rho.dim());
    conj.iter().zip(rho.weights()).map(|(a, w)| a * w).sum()
}

/// `psi` extended from `spt mu` to `points` as the conjugate of `psi*` over `spt rho`.
fn extend_potential(pair: &PotentialPair, rho: &DiscreteMeasure, points: &DiscreteMeasure) -> Vec<f64> {
    legendre_flat(&pair.psi_star, rho.coords(), points.coords(), rho.dim())
}

fn check_potential(rho: &DiscreteMeasure, mu: &DiscreteMeasure, pair: &PotentialPair) -> Result<f64> {
    if pair.psi.len() != mu.len() || pair.psi_star.len() != rho.len() {
        return Err(Error::InvalidInput("potential sizes do not match the measures".into()));
    }
    let w2 = w2_exact(rho, mu)?.1.cost;
    let scale = 1.0 + rho.domain().radius().powi(2);
    let violation = pair.feasibility_violation(rho, mu);
    let fresh = PotentialPair::new(pair.psi.clone(), pair.psi_star.clone(), rho, mu);
    let residual = (fresh.certified_cost - w2).abs().max(violation.max(0.0));
    if residual > 1e-8 * scale {
        return Err(Error::NonOptimalPotential { residual });
    }
    Ok(w2)
}

/// Gap of `1/2 W2^2(rho, .)` at `mu` in direction `nu`:
/// `1/2 W2^2(nu, rho) - 1/2 W2^2(mu, rho) - <|.|^2/2 - psi, nu - mu>`,
/// with `psi` the optimal potential for `(rho, mu)`.
///
/// `lhs_variance` is `Var_rho(psi_nu* - psi*)` with unit constant.
pub fn strong_convexity_gap(
    rho: &DiscreteMeasure,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    psi_rho_to_mu: &PotentialPair,
) -> Result<GapReport> {
    strong_convexity_gap_with(rho, mu, nu, psi_rho_to_mu, 1.0)
}

/// As [`strong_convexity_gap`], with constant `c` in front of the variance.
pub fn strong_convexity_gap_with(
    rho: &DiscreteMeasure,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    psi_rho_to_mu: &PotentialPair,
    c: f64,
) -> Result<GapReport> {
    let w2_mu = check_potential(rho, mu, psi_rho_to_mu)?;
    let (_, plan_nu, pair_nu) = w2_exact(rho, nu)?;
    let w2_nu = plan_nu.cost;
    let psi_on_nu = extend_potential(psi_rho_to_mu, rho, nu);
    let lin = |m: &DiscreteMeasure, psi: &[f64]| -> f64 {
        m.points().zip(psi).zip(m.weights()).map(|((y, p), w)| w * (0.5 * norm2(y) - p)).sum()
    };
    let gap = 0.5 * w2_nu - 0.5 * w2_mu - (lin(nu, &psi_on_nu) - lin(mu, &psi_rho_to_mu.psi));
    let diff: Vec<f64> = pair_nu.psi_star.iter().zip(&psi_rho_to_mu.psi_star).map(|(a, b)| a - b).collect();
    let w2_targets = w2_exact(mu, nu)?.0;
    Ok(GapReport::new(c * variance(rho, &diff), gap, w2_targets))
}

/// The same gap written with Kantorovich functionals:
/// `K_rho(psi_mu) - K_rho(psi_nu) + <psi_mu - psi_nu, nu>`.
pub fn kantorovich_gap(
    rho: &DiscreteMeasure,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    psi_mu: &PotentialPair,
    psi_nu: &PotentialPair,
) -> f64 {
    let k_mu = kantorovich_functional(rho, &psi_mu.psi, &mu.points_vec());
    let k_nu = kantorovich_functional(rho, &psi_nu.psi, &nu.points_vec());
    let psi_mu_on_nu = extend_potential(psi_mu, rho, nu);
    let cross: f64 =
        psi_mu_on_nu.iter().zip(&psi_nu.psi).zip(nu.weights()).map(|((a, b), w)| w * (a - b)).sum();
    k_mu - k_nu + cross
}

/// Check `c Var_rho(psi~* - psi*) <= K_rho(psi~) - K_rho(psi) - <psi - psi~, (grad psi*)_# rho>`
/// for potentials given on a common `support`.
///
/// The pushforward sends each atom of `rho` to the maximizer defining `psi*`.
/// When that maximizer is not unique and the candidates disagree on
/// `psi - psi~`, the pushforward is ambiguous and `NonDeterministicPlan` is
/// returned.
pub fn variance_inequality_check(
    rho: &DiscreteMeasure,
    psi: &[f64],
    psi_tilde: &[f64],
    support: &[Vec<f64>],
    c: f64,
) -> Result<GapReport> {
    if psi.len() != support.len() || psi_tilde.len() != support.len() {
        return Err(Error::InvalidInput("potentials must have one value per support point".into()));
    }
    if psi.iter().chain(psi_tilde).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("potentials must be finite".into()));
    }
    let d = rho.dim();
    let ys = support.concat();
    let conj = legendre_flat(psi, &ys, rho.coords(), d);
    let conj_t = legendre_flat(psi_tilde, &ys, rho.coords(), d);
    let k = |c: &[f64]| -> f64 { c.iter().zip(rho.weights()).map(|(a, w)| a * w).sum() };

    let map_to = |p: &[f64]| -> Result<Vec<usize>> {
        rho.points()
            .enumerate()
            .map(|(i, x)| {
                let j = legendre_argmax(p, &ys, x);
                let top = dot(x, &support[j]) - p[j];
                let tol = 1e-12 * (1.0 + top.abs());
                let ambiguous = support.iter().enumerate().any(|(l, y)| {
                    l != j
                        && dot(x, y) - p[l] >= top - tol
                        && ((psi[l] - psi_tilde[l]) - (psi[j] - psi_tilde[j])).abs() > 1e-12
                });
                if ambiguous {
                    Err(Error::NonDeterministicPlan { row: i })
                } else {
                    Ok(j)
                }
            })
            .collect()
    };
    let targets = map_to(psi)?;
    let pushed: f64 =
        targets.iter().zip(rho.weights()).map(|(&j, w)| w * (psi[j] - psi_tilde[j])).sum();
    let gap = k(&conj_t) - k(&conj) - pushed;
    let diff: Vec<f64> = conj_t.iter().zip(&conj).map(|(a, b)| a - b).collect();

    let image = |t: &[usize]| -> Result<DiscreteMeasure> {
        let pts: Vec<f64> = t.iter().flat_map(|&j| support[j].iter().copied()).collect();
        DiscreteMeasure::from_flat(pts, rho.weights().to_vec(), rho.domain())
    };
    let targets_t: Vec<usize> = rho.points().map(|x| legendre_argmax(psi_tilde, &ys, x)).collect();
    let w2 = w2_exact(&image(&targets)?, &image(&targets_t)?)?.0;
    Ok(GapReport::new(c * variance(rho, &diff), gap, w2))
}

/// Difference between `F_P(mu)` and the dual value
/// `1/2 sum_i lambda_i M2(rho_i) - sum_i lambda_i <psi_i*, rho_i>`, maximized
/// over potentials with `sum_i lambda_i psi_i = |.|^2/2` on `spt mu`.
///
/// The best potentials solve a linear program in `psi_i(y)` and `t_ik >= psi_i*(x_k)`.
pub fn dual_gap(p: &Population, bary: &BarycenterResult) -> Result<f64> {
    let mu = &bary.measure;
    let primal = variance_functional(p, mu)?;
    let entries: Vec<(f64, &DiscreteMeasure)> =
        p.entries().iter().filter(|e| e.0 > 0.0).map(|(l, m)| (*l, m)).collect();
    // Free variables are split into nonnegative parts `v = v+ - v-`.
    let pos = (0.0, f64::INFINITY);
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let mut psi_vars = Vec::with_capacity(entries.len());
    for (l, rho) in &entries {
        let psi: Vec<_> = (0..mu.len()).map(|_| (lp.add_var(0.0, pos), lp.add_var(0.0, pos))).collect();
        let t: Vec<_> = rho.weights().iter().map(|a| (lp.add_var(l * a, pos), lp.add_var(-l * a, pos))).collect();
        for (k, x) in rho.points().enumerate() {
            for (s, y) in mu.points().enumerate() {
                let row = [(t[k].0, 1.0), (t[k].1, -1.0), (psi[s].0, 1.0), (psi[s].1, -1.0)];
                lp.add_constraint(&row, ComparisonOp::Ge, dot(x, y));
            }
        }
        psi_vars.push(psi);
    }
    for (s, y) in mu.points().enumerate() {
        let row: Vec<_> =
            entries.iter().zip(&psi_vars).flat_map(|((l, _), v)| [(v[s].0, *l), (v[s].1, -*l)]).collect();
        lp.add_constraint(row, ComparisonOp::Eq, 0.5 * norm2(y));
    }
    let sol = lp.solve().map_err(|e| Error::SolverNotConverged(format!("dual LP: {e}")))?;
    let half_moments: f64 = entries.iter().map(|(l, rho)| 0.5 * l * second_moment(rho)).sum();
    Ok((primal - (half_moments - sol.objective())).abs())
}

/// Convex pieces of a support decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ConvexSet {
    /// Axis-aligned box `[lo, hi]`.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
}

impl ConvexSet {
    pub fn contains(&self, x: &[f64]) -> bool {
        const TOL: f64 = 1e-12;
        match self {
            ConvexSet::Box { lo, hi } => x.iter().zip(lo.iter().zip(hi)).all(|(v, (a, b))| *v >= a - TOL && *v <= b + TOL),
            ConvexSet::Ball { center, radius } => {
                x.iter().zip(center).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() <= radius + TOL
            }
        }
    }
}

/// Overlap masses `w_ij = rho(C_i cap C_j)` for `i != j`, zero on the diagonal.
pub fn overlap_weights(rho: &DiscreteMeasure, sets: &[ConvexSet]) -> Vec<Vec<f64>> {
    let n = sets.len();
    let inside: Vec<Vec<bool>> = sets.iter().map(|c| rho.points().map(|x| c.contains(x)).collect()).collect();
    let mut w = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let m: f64 = rho.weights().iter().enumerate().filter(|(k, _)| inside[i][*k] && inside[j][*k]).map(|(_, w)| w).sum();
            w[i][j] = m;
            w[j][i] = m;
        }
    }
    w
}

/// The graph Laplacian of the overlap graph and the resulting constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaplacianReport {
    pub overlap_weights: Vec<Vec<f64>>,
    /// Second smallest eigenvalue; infinite for a single set.
    pub lambda2: f64,
    pub c_rho: f64,
    /// Alternative expression through a Poincare-Wirtinger constant, when supplied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_rho_poincare: Option<f64>,
}

fn check_overlaps(w: &[Vec<f64>]) -> Result<()> {
    let n = w.len();
    if n == 0 {
        return Err(Error::InvalidInput("at least one convex set is required".into()));
    }
    for (i, row) in w.iter().enumerate() {
        if row.len() != n {
            return Err(Error::InvalidInput("overlap matrix must be square".into()));
        }
        for (j, &v) in row.iter().enumerate() {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidInput(format!("overlap weight ({i}, {j}) must be finite and nonnegative")));
            }
            if (v - w[j][i]).abs() > 1e-12 * (1.0 + v.abs()) {
                return Err(Error::InvalidInput("overlap matrix must be symmetric".into()));
            }
        }
    }
    Ok(())
}

/// Second smallest eigenvalue of `L = diag(sum_k w_ik) - W`, ignoring the diagonal of `W`.
pub fn graph_laplacian_lambda2(w: &[Vec<f64>]) -> Result<f64> {
    check_overlaps(w)?;
    let n = w.len();
    if n == 1 {
        return Ok(f64::INFINITY);
    }
    let l = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            (0..n).filter(|&k| k != i).map(|k| w[i][k]).sum()
        } else {
            -w[i][j]
        }
    });
    let mut eig: Vec<f64> = SymmetricEigen::new(l).eigenvalues.iter().copied().collect();
    eig.sort_by(f64::total_cmp);
    let scale = 1.0 + w.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
    if eig[0].abs() > 1e-9 * scale {
        return Err(Error::SolverNotConverged(format!("Laplacian kernel eigenvalue {} is not zero", eig[0])));
    }
    Ok(eig[1])
}

/// `(e (d+1) 2^(d+1) R diam (M/m)^2)^(-1)`, the constant for a convex support.
pub fn convex_support_constant(dim: usize, radius: f64, diam: f64, m_lower: f64, m_upper: f64) -> f64 {
    1.0 / (std::f64::consts::E * (dim + 1) as f64 * 2f64.powi(dim as i32 + 1) * radius * diam * (m_upper / m_lower).powi(2))
}

/// `c_rho = (e (d+1) 2^(d+1) R^2 (M/m)^2 (N^2 + 2 N^3 / lambda2))^(-1)`.
///
/// A single set has no second eigenvalue; `lambda2` is reported as infinite
/// and the bracket reduces to `1`.
pub fn compute_c_rho(
    overlaps: &[Vec<f64>],
    m_lower: f64,
    m_upper: f64,
    radius: f64,
    dim: usize,
) -> Result<LaplacianReport> {
    if !(m_lower > 0.0 && m_lower <= m_upper && m_upper.is_finite()) {
        return Err(Error::InvalidInput(format!("density bounds must satisfy 0 < m <= M, got {m_lower}, {m_upper}")));
    }
    if !(radius > 0.0) || dim == 0 {
        return Err(Error::InvalidInput("radius and dimension must be positive".into()));
    }
    let lambda2 = graph_laplacian_lambda2(overlaps)?;
    if lambda2 <= 1e-12 {
        return Err(Error::DisconnectedSupport { lambda2 });
    }
    let n = overlaps.len() as f64;
    let bracket = n * n + 2.0 * n.powi(3) / lambda2;
    let c_rho = convex_support_constant(dim, radius, radius, m_lower, m_upper) / bracket;
    Ok(LaplacianReport { overlap_weights: overlaps.to_vec(), lambda2, c_rho, c_rho_poincare: None })
}

/// Surface area of the unit sphere in `R^d`.
pub fn unit_sphere_area(dim: usize) -> f64 {
    // s_{d-1} = 2 pi^(d/2) / Gamma(d/2), with Gamma at integers and half-integers.
    let half = dim as f64 / 2.0;
    let mut gamma = if dim % 2 == 0 { 1.0 } else { std::f64::consts::PI.sqrt() };
    let mut x = if dim % 2 == 0 { 1.0 } else { 0.5 };
    while x < half - 1e-9 {
        gamma *= x;
        x += 1.0;
    }
    2.0 * std::f64::consts::PI.powf(half) / gamma
}

/// Alternative constant through an L1 Poincare-Wirtinger constant `c_pw` and
/// the smallest overlap or exclusive mass `min_mass`:
/// `(e (d+1) 2^(d+1) R^2 (M/m)^2 N (N + (M s_{d-1} R^(d-1) N^2 c_pw / min_mass^2)^3 / 2))^(-1)`.
pub fn c_rho_poincare(
    dim: usize,
    radius: f64,
    m_lower: f64,
    m_upper: f64,
    n_sets: usize,
    c_pw: f64,
    min_mass: f64,
) -> Result<f64> {
    if !(c_pw > 0.0 && min_mass > 0.0 && m_lower > 0.0 && m_lower <= m_upper && radius > 0.0) || n_sets == 0 {
        return Err(Error::InvalidInput("Poincare constant inputs must be positive".into()));
    }
    let n = n_sets as f64;
    let inner = m_upper * unit_sphere_area(dim) * radius.powi(dim as i32 - 1) * n * n * c_pw / (min_mass * min_mass);
    let bracket = n * (n + 0.5 * inner.powi(3));
    Ok(convex_support_constant(dim, radius, radius, m_lower, m_upper) / bracket)
}
