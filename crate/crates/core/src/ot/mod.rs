//! Optimal transport with squared Euclidean cost between discrete measures.
//!
//! The exact solver is a network simplex on the bipartite transport graph.
//! Dual potentials use the convex parametrization `psi(y) = |y|^2/2 - g(y)`,
//! `psi*(x) = |x|^2/2 - f(x)`, so that Kantorovich feasibility reads
//! `psi*(x) + psi(y) >= <x, y>`.

mod conjugate;
mod simplex;
mod sinkhorn;

use std::io;

use serde::Serialize;

pub use conjugate::{c_transform, c_transform_flat, legendre_argmax, legendre_conjugate, legendre_flat};
pub use sinkhorn::{w2_entropic, w2_entropic_default, SINKHORN_MAX_ITER, SINKHORN_TOL};

use crate::error::{Error, Result};
use crate::format::fmt_real;
use crate::measures::{dot, second_moment, sq_dist, DiscreteMeasure};

/// Default cap on `n * m` for the exact solver.
pub const DEFAULT_MAX_ENTRIES: usize = 4_000_000;

/// Plan entries at or below this mass count as zero when reading off maps.
pub const PLAN_ZERO: f64 = 1e-9;

/// Options for the exact solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OtConfig {
    /// Largest allowed `n * m`.
    pub max_entries: usize,
}

impl Default for OtConfig {
    fn default() -> Self {
        OtConfig { max_entries: DEFAULT_MAX_ENTRIES }
    }
}

/// A coupling between two discrete measures, stored sparsely.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub source: DiscreteMeasure,
    pub target: DiscreteMeasure,
    /// Nonzero entries `(i, j, mass)`, sorted lexicographically by `(i, j)`.
    pub entries: Vec<(usize, usize, f64)>,
    /// `sum_ij gamma_ij |x_i - y_j|^2`.
    pub cost: f64,
}

impl TransportPlan {
    fn from_entries(source: DiscreteMeasure, target: DiscreteMeasure, mut entries: Vec<(usize, usize, f64)>) -> Self {
        entries.retain(|e| e.2 > 0.0);
        entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let cost = entries.iter().map(|&(i, j, x)| x * sq_dist(source.point(i), target.point(j))).sum();
        TransportPlan { source, target, entries, cost }
    }

    /// Dense `n x m` matrix.
    pub fn matrix(&self) -> Vec<Vec<f64>> {
        let mut mat = vec![vec![0.0; self.target.len()]; self.source.len()];
        for &(i, j, x) in &self.entries {
            mat[i][j] += x;
        }
        mat
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let mut r = vec![0.0; self.source.len()];
        for &(i, _, x) in &self.entries {
            r[i] += x;
        }
        r
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.target.len()];
        for &(_, j, x) in &self.entries {
            c[j] += x;
        }
        c
    }

    /// Largest absolute deviation of the marginals from the two weight vectors.
    pub fn marginal_error(&self) -> f64 {
        let r = self.row_sums().iter().zip(self.source.weights()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let c = self.col_sums().iter().zip(self.target.weights()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        r.max(c)
    }

    /// Row-wise conditional mean `sum_j gamma_ij y_j / sum_j gamma_ij`.
    pub fn barycentric_projection(&self) -> Vec<Vec<f64>> {
        let d = self.source.dim();
        let mut acc = vec![vec![0.0; d]; self.source.len()];
        let mut mass = vec![0.0; self.source.len()];
        for &(i, j, x) in &self.entries {
            for (a, y) in acc[i].iter_mut().zip(self.target.point(j)) {
                *a += x * y;
            }
            mass[i] += x;
        }
        for (a, m) in acc.iter_mut().zip(&mass) {
            if *m > 0.0 {
                for v in a.iter_mut() {
                    *v /= m;
                }
            }
        }
        acc
    }

    /// Write `(i, j, mass)` triples as CSV.
    pub fn write_csv<W: io::Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
        w.write_record(["i", "j", "mass"])?;
        for &(i, j, x) in &self.entries {
            w.write_record([i.to_string(), j.to_string(), fmt_real(x)])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Kantorovich potentials for a pair `(rho, mu)`: `psi` on the target atoms,
/// `psi_star` on the source atoms.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PotentialPair {
    pub psi: Vec<f64>,
    pub psi_star: Vec<f64>,
    /// Squared distance certified by the duals:
    /// `M2(rho) + M2(mu) - 2 (<psi*, rho> + <psi, mu>)`.
    pub certified_cost: f64,
}

impl PotentialPair {
    /// Build from potentials, computing the certified cost.
    pub fn new(psi: Vec<f64>, psi_star: Vec<f64>, rho: &DiscreteMeasure, mu: &DiscreteMeasure) -> Self {
        let certified_cost = dual_value(&psi, &psi_star, rho, mu);
        PotentialPair { psi, psi_star, certified_cost }
    }

    /// Largest violation of `psi*(x_i) + psi(y_j) >= <x_i, y_j>`.
    pub fn feasibility_violation(&self, rho: &DiscreteMeasure, mu: &DiscreteMeasure) -> f64 {
        let mut worst: f64 = 0.0;
        for (x, ps) in rho.points().zip(&self.psi_star) {
            for (y, p) in mu.points().zip(&self.psi) {
                worst = worst.max(dot(x, y) - ps - p);
            }
        }
        worst
    }
}

fn dual_value(psi: &[f64], psi_star: &[f64], rho: &DiscreteMeasure, mu: &DiscreteMeasure) -> f64 {
    let a: f64 = psi_star.iter().zip(rho.weights()).map(|(p, w)| p * w).sum();
    let b: f64 = psi.iter().zip(mu.weights()).map(|(p, w)| p * w).sum();
    second_moment(rho) + second_moment(mu) - 2.0 * (a + b)
}

fn check_pair(rho: &DiscreteMeasure, mu: &DiscreteMeasure) -> Result<()> {
    if rho.domain() != mu.domain() {
        return Err(Error::DomainMismatch);
    }
    Ok(())
}

/// Exact `W2`, an optimal plan and optimal potentials, with the default size cap.
pub fn w2_exact(rho: &DiscreteMeasure, mu: &DiscreteMeasure) -> Result<(f64, TransportPlan, PotentialPair)> {
    w2_exact_with(rho, mu, &OtConfig::default())
}

/// Exact `W2` with an explicit configuration.
pub fn w2_exact_with(
    rho: &DiscreteMeasure,
    mu: &DiscreteMeasure,
    config: &OtConfig,
) -> Result<(f64, TransportPlan, PotentialPair)> {
    let (plan, g) = solve_exact(rho, mu, config)?;
    let (xs, ys, d, m) = (rho.coords(), mu.coords(), rho.dim(), mu.len());

    // Convex potentials from the cost duals, then one double conjugation so that
    // feasibility holds exactly and every atom is tight.
    let psi0: Vec<f64> = (0..m).map(|j| 0.5 * (dot(mu.point(j), mu.point(j)) - g[j])).collect();
    let psi_star = legendre_flat(&psi0, ys, xs, d);
    let mut psi = legendre_flat(&psi_star, xs, ys, d);
    let mut psi_star = psi_star;
    let shift = psi[0];
    psi.iter_mut().for_each(|p| *p -= shift);
    psi_star.iter_mut().for_each(|p| *p += shift);

    let pair = PotentialPair::new(psi, psi_star, rho, mu);
    Ok((plan.cost.max(0.0).sqrt(), plan, pair))
}

/// Exact `W2` and an optimal plan, without potentials.
pub fn w2_plan_with(rho: &DiscreteMeasure, mu: &DiscreteMeasure, config: &OtConfig) -> Result<(f64, TransportPlan)> {
    let (plan, _) = solve_exact(rho, mu, config)?;
    Ok((plan.cost.max(0.0).sqrt(), plan))
}

fn solve_exact(rho: &DiscreteMeasure, mu: &DiscreteMeasure, config: &OtConfig) -> Result<(TransportPlan, Vec<f64>)> {
    check_pair(rho, mu)?;
    let (n, m) = (rho.len(), mu.len());
    let entries = n.saturating_mul(m);
    if entries > config.max_entries {
        return Err(Error::SizeCapExceeded { entries, cap: config.max_entries });
    }
    let a = rho.weights();
    let sa: f64 = a.iter().sum();
    let sb: f64 = mu.weights().iter().sum();
    let b: Vec<f64> = mu.weights().iter().map(|w| w * (sa / sb)).collect();
    let bound = 4.0 * rho.domain().radius().powi(2);
    let sol = simplex::solve_points(a, &b, rho.coords(), mu.coords(), rho.dim(), bound)
        .ok_or_else(|| Error::SolverNotConverged("network simplex left artificial flow".into()))?;
    Ok((TransportPlan::from_entries(rho.clone(), mu.clone(), sol.flows), sol.g))
}

/// Squared `W2` only.
pub fn w2_squared(rho: &DiscreteMeasure, mu: &DiscreteMeasure) -> Result<f64> {
    Ok(w2_plan_with(rho, mu, &OtConfig::default())?.1.cost)
}

/// Result of an exact solve with an explicit cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTransport {
    pub cost: f64,
    /// Nonzero plan entries `(i, j, mass)`, sorted.
    pub flows: Vec<(usize, usize, f64)>,
    /// Row duals; `f_i + g_j <= c_ij` with equality on the flows.
    pub f: Vec<f64>,
    /// Column duals, defined on zero-mass columns by the c-transform of `f`.
    pub g: Vec<f64>,
}

/// Exact transport for an arbitrary row-major `n x m` cost matrix.
pub fn transport_cost_matrix(a: &[f64], b: &[f64], cost: &[f64]) -> Result<DenseTransport> {
    let (n, m) = (a.len(), b.len());
    if cost.len() != n * m || n == 0 || m == 0 {
        return Err(Error::InvalidInput("cost matrix shape does not match the marginals".into()));
    }
    // Zero-mass rows and columns carry no flow; drop them and recover their duals afterwards.
    let rows: Vec<usize> = (0..n).filter(|&i| a[i] > 0.0).collect();
    let cols: Vec<usize> = (0..m).filter(|&j| b[j] > 0.0).collect();
    if rows.is_empty() || cols.is_empty() {
        return Err(Error::ZeroTotalMass);
    }
    let ar: Vec<f64> = rows.iter().map(|&i| a[i]).collect();
    let sa: f64 = ar.iter().sum();
    let sb: f64 = cols.iter().map(|&j| b[j]).sum();
    let br: Vec<f64> = cols.iter().map(|&j| b[j] * (sa / sb)).collect();
    let mut c = Vec::with_capacity(rows.len() * cols.len());
    for &i in &rows {
        for &j in &cols {
            c.push(cost[i * m + j]);
        }
    }
    let sol = simplex::solve_dense(&ar, &br, &c)
        .ok_or_else(|| Error::SolverNotConverged("network simplex left artificial flow".into()))?;
    let mut flows: Vec<(usize, usize, f64)> = sol.flows.iter().map(|&(i, j, x)| (rows[i], cols[j], x)).collect();
    flows.sort_by(|p, q| (p.0, p.1).cmp(&(q.0, q.1)));
    let total = flows.iter().map(|&(i, j, x)| x * cost[i * m + j]).sum();

    let mut g = vec![f64::NAN; m];
    for (k, &j) in cols.iter().enumerate() {
        g[j] = sol.g[k];
    }
    let mut f = vec![f64::NAN; n];
    for (k, &i) in rows.iter().enumerate() {
        f[i] = sol.f[k];
    }
    for i in 0..n {
        if f[i].is_nan() {
            f[i] = cols.iter().map(|&j| cost[i * m + j] - g[j]).fold(f64::INFINITY, f64::min);
        }
    }
    for j in 0..m {
        if g[j].is_nan() {
            g[j] = (0..n).map(|i| cost[i * m + j] - f[i]).fold(f64::INFINITY, f64::min);
        }
    }
    Ok(DenseTransport { cost: total, flows, f, g })
}

/// Squared `W2` between two measures on the line, by merging quantile functions.
pub fn w2_squared_1d(rho: &DiscreteMeasure, mu: &DiscreteMeasure) -> Result<f64> {
    check_pair(rho, mu)?;
    if rho.dim() != 1 {
        return Err(Error::WrongDimension { expected: 1, found: rho.dim() });
    }
    let sorted = |m: &DiscreteMeasure| {
        let mut v: Vec<(f64, f64)> = m.points().map(|p| p[0]).zip(m.weights().iter().copied()).collect();
        v.sort_by(|x, y| x.0.total_cmp(&y.0));
        v
    };
    let (xs, ys) = (sorted(rho), sorted(mu));
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (xs[0].1, ys[0].1);
    let mut total = 0.0;
    loop {
        let t = ra.min(rb);
        total += t * (xs[i].0 - ys[j].0).powi(2);
        ra -= t;
        rb -= t;
        // Advance whichever side is exhausted; rounding leftovers go with the last atom.
        if ra <= rb {
            i += 1;
            if i == xs.len() {
                break;
            }
            ra += xs[i].1;
        } else {
            j += 1;
            if j == ys.len() {
                break;
            }
            rb += ys[j].1;
        }
    }
    Ok(total)
}

/// Atomic surrogate of the Brenier map read off an optimal plan: each source
/// atom goes to the single target that receives its mass.
pub fn brenier_map_from_potential(plan: &TransportPlan) -> Result<Vec<Vec<f64>>> {
    let n = plan.source.len();
    let mut best: Vec<Option<(usize, f64)>> = vec![None; n];
    let mut count = vec![0usize; n];
    for &(i, j, x) in &plan.entries {
        if x > PLAN_ZERO {
            count[i] += 1;
            if count[i] >= 2 {
                return Err(Error::NonDeterministicPlan { row: i });
            }
        }
        if best[i].is_none_or(|(_, v)| x > v) {
            best[i] = Some((j, x));
        }
    }
    best.into_iter()
        .enumerate()
        .map(|(i, b)| {
            b.map(|(j, _)| plan.target.point(j).to_vec())
                .ok_or_else(|| Error::InvalidInput(format!("plan row {i} is empty")))
        })
        .collect()
}
