//! Grid-restricted barycenters with a convex penalty on the weights.
//!
//! The entropic penalty is solved to high accuracy by Newton's method on a
//! smoothed semi-dual, annealing the smoothing down to a negligible level.
//! Power penalties use entropic mirror descent with step-weighted averaging.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::fixed::barycenter_fixed_support_with;
use super::{active_entries, BarycenterResult, FixedSupportOptions, Method};
use crate::error::{Error, Result};
use crate::functionals::variance_functional;
use crate::measures::{sq_dist, DiscreteMeasure, GridSpec, Population};
use crate::ot::transport_cost_matrix;

/// Penalty `G` on the grid weights `w`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Penalty {
    /// `sum_s w_s log w_s`.
    Entropy,
    /// `sum_s w_s^p`, for `p >= 1`.
    PowerP(f64),
}

impl Penalty {
    pub fn value(&self, w: &[f64]) -> f64 {
        match *self {
            Penalty::Entropy => w.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum(),
            Penalty::PowerP(p) => w.iter().map(|x| x.powf(p)).sum(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenalizedOptions {
    /// Final smoothing of the entropic solver, relative to the largest half squared distance.
    pub smoothing_floor: f64,
    /// Newton steps allowed per smoothing stage.
    pub newton_steps: usize,
    /// L1 norm of the semi-dual gradient accepted as converged.
    pub gradient_tol: f64,
    /// Mirror-descent iterations for power penalties.
    pub mirror_iter: usize,
    /// Frank-Wolfe gap, relative to the cost scale, accepted as converged by mirror descent.
    pub mirror_tol: f64,
    /// Solver used when the penalty weight is zero.
    pub fixed: FixedSupportOptions,
}

impl Default for PenalizedOptions {
    fn default() -> Self {
        PenalizedOptions {
            smoothing_floor: 1e-8,
            newton_steps: 200,
            gradient_tol: 1e-9,
            mirror_iter: 2000,
            mirror_tol: 1e-3,
            fixed: FixedSupportOptions::default(),
        }
    }
}

/// Minimize `F_P(mu) + lambda G(mu)` over measures on the grid nodes.
pub fn barycenter_penalized(p: &Population, grid: &GridSpec, lambda: f64, penalty: Penalty) -> Result<BarycenterResult> {
    barycenter_penalized_with(p, grid, lambda, penalty, &PenalizedOptions::default())
}

pub fn barycenter_penalized_with(
    p: &Population,
    grid: &GridSpec,
    lambda: f64,
    penalty: Penalty,
    options: &PenalizedOptions,
) -> Result<BarycenterResult> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidInput(format!("penalty weight must be finite and nonnegative, got {lambda}")));
    }
    if let Penalty::PowerP(q) = penalty {
        if !(q >= 1.0) || !q.is_finite() {
            return Err(Error::InvalidInput(format!("power penalty needs p >= 1, got {q}")));
        }
    }
    if grid.domain != p.domain() {
        return Err(Error::DomainMismatch);
    }
    let support = grid.nodes();
    if lambda == 0.0 {
        let mut r = barycenter_fixed_support_with(p, &support, &options.fixed)?;
        r.method = Method::Penalized;
        return Ok(r);
    }
    let entries = active_entries(p);
    let costs: Vec<Vec<f64>> = entries
        .iter()
        .map(|(_, m)| m.points().flat_map(|x| support.iter().map(move |z| 0.5 * sq_dist(x, z))).collect())
        .collect();
    let problem = Problem { entries: &entries, costs: &costs, k: support.len() };
    let (mut weights, iterations, converged) = match penalty {
        Penalty::Entropy => problem.newton(lambda, options),
        Penalty::PowerP(q) => problem.mirror(lambda, q, options)?,
    };
    let top = weights.iter().fold(0.0f64, |a, &b| a.max(b));
    for w in &mut weights {
        if *w < 1e-14 * top {
            *w = 0.0;
        }
    }
    let measure = DiscreteMeasure::from_flat(support.concat(), weights, p.domain())?;
    let objective = variance_functional(p, &measure)?;
    Ok(BarycenterResult { measure, objective, method: Method::Penalized, iterations, converged })
}

struct Problem<'a> {
    entries: &'a [(f64, &'a DiscreteMeasure)],
    costs: &'a [Vec<f64>],
    k: usize,
}

/// State of the smoothed semi-dual at one point.
struct DualEval {
    value: f64,
    /// Per grid node, `sum_i lambda_i eps LSE_k((f_ik - c_iks) / eps)`.
    phi: Vec<f64>,
    /// Per marginal, row-major `n_i x K` column softmax of `(f_ik - c_iks) / eps`.
    pis: Vec<Vec<f64>>,
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

impl Problem<'_> {
    fn offsets(&self) -> Vec<usize> {
        let mut o = vec![0];
        for (_, m) in self.entries {
            o.push(o.last().unwrap() + m.len());
        }
        o
    }

    fn eval(&self, x: &[f64], offs: &[usize], tau: f64, eps: f64) -> DualEval {
        let k = self.k;
        let mut phi = vec![0.0; k];
        let mut pis = Vec::with_capacity(self.entries.len());
        let mut linear = 0.0;
        for (i, (lambda, m)) in self.entries.iter().enumerate() {
            let f = &x[offs[i]..offs[i + 1]];
            let c = &self.costs[i];
            let n = f.len();
            let mut pi = vec![0.0; n * k];
            let mut col = vec![0.0; n];
            for s in 0..k {
                for r in 0..n {
                    col[r] = (f[r] - c[r * k + s]) / eps;
                }
                let l = log_sum_exp(&col);
                for r in 0..n {
                    pi[r * k + s] = (col[r] - l).exp();
                }
                phi[s] += lambda * eps * l;
            }
            linear += lambda * f.iter().zip(m.weights()).map(|(a, b)| a * b).sum::<f64>();
            pis.push(pi);
        }
        let scaled: Vec<f64> = phi.iter().map(|v| v / tau).collect();
        let value = linear - tau * log_sum_exp(&scaled).exp();
        DualEval { value, phi, pis }
    }

    /// Newton ascent on the concave semi-dual
    /// `D(f) = sum_i lambda_i <f_i, a_i> - tau sum_s exp(phi_s / tau)`, `tau = lambda + eps`,
    /// whose maximizer gives the weights `w_s = exp(phi_s / tau)`.
    fn newton(&self, lambda: f64, options: &PenalizedOptions) -> (Vec<f64>, usize, bool) {
        let k = self.k;
        let offs = self.offsets();
        let total = *offs.last().unwrap();
        let scale = self.costs.iter().flatten().fold(0.0f64, |a, &b| a.max(b)).max(1e-300);
        let eps_final = options.smoothing_floor * scale;
        // The first variable of every marginal after the first is pinned: shifts
        // `f_i += c_i` with `sum_i lambda_i c_i = 0` leave `D` unchanged.
        let free: Vec<usize> = (0..total).filter(|&j| !offs[1..offs.len() - 1].contains(&j)).collect();
        let mut x = vec![0.0; total];
        let mut eps = scale.max(eps_final);
        let mut steps = 0;
        let mut grad_norm;
        loop {
            let tau = lambda + eps;
            grad_norm = f64::INFINITY;
            for _ in 0..options.newton_steps {
                // Normalize so that the weights sum to one.
                let e = self.eval(&x, &offs, tau, eps);
                let scaled: Vec<f64> = e.phi.iter().map(|v| v / tau).collect();
                let shift = tau * log_sum_exp(&scaled);
                x.iter_mut().for_each(|v| *v -= shift);
                let e = self.eval(&x, &offs, tau, eps);
                let w: Vec<f64> = e.phi.iter().map(|v| (v / tau).exp()).collect();

                let mut grad = vec![0.0; total];
                for (i, (l, m)) in self.entries.iter().enumerate() {
                    let pi = &e.pis[i];
                    for (r, a) in m.weights().iter().enumerate() {
                        let row = &pi[r * k..(r + 1) * k];
                        grad[offs[i] + r] = l * (a - row.iter().zip(&w).map(|(p, w)| p * w).sum::<f64>());
                    }
                }
                grad_norm = grad.iter().map(|g| g.abs()).sum();
                if grad_norm < 1e-13 {
                    break;
                }

                // Negated Hessian: (1/tau) U diag(w) U^T + blockdiag (lambda_i/eps)(diag(P w) - P diag(w) P^T).
                let mut u = DMatrix::<f64>::zeros(total, k);
                for (i, (l, _)) in self.entries.iter().enumerate() {
                    let pi = &e.pis[i];
                    for r in 0..offs[i + 1] - offs[i] {
                        for s in 0..k {
                            u[(offs[i] + r, s)] = l * pi[r * k + s];
                        }
                    }
                }
                let mut uw = u.clone();
                for s in 0..k {
                    uw.column_mut(s).scale_mut(w[s] / tau);
                }
                let mut h = &uw * u.transpose();
                for (i, (l, _)) in self.entries.iter().enumerate() {
                    let n = offs[i + 1] - offs[i];
                    let pi = DMatrix::from_row_slice(n, k, &e.pis[i]);
                    let mut pw = pi.clone();
                    for s in 0..k {
                        pw.column_mut(s).scale_mut(w[s]);
                    }
                    let block = (&pw * pi.transpose()).scale(-l / eps);
                    let mut sub = h.view_mut((offs[i], offs[i]), (n, n));
                    sub += block;
                    for r in 0..n {
                        let d: f64 = pw.row(r).sum();
                        sub[(r, r)] += l / eps * d;
                    }
                }
                let nf = free.len();
                let hk = DMatrix::from_fn(nf, nf, |a, b| h[(free[a], free[b])]);
                let gk = DVector::from_iterator(nf, free.iter().map(|&j| grad[j]));
                let ridge = 1e-14 * hk.trace().max(1e-300);
                let hk = hk + DMatrix::identity(nf, nf) * ridge;
                let dk = match hk.clone().cholesky() {
                    Some(c) => c.solve(&gk),
                    None => match hk.lu().solve(&gk) {
                        Some(d) => d,
                        None => break,
                    },
                };
                let mut d = vec![0.0; total];
                for (a, &j) in free.iter().enumerate() {
                    d[j] = dk[a];
                }
                let slope: f64 = grad.iter().zip(&d).map(|(g, d)| g * d).sum();
                let mut t = 1.0;
                let mut accepted = false;
                while t >= 1e-12 {
                    let trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
                    let v = self.eval(&trial, &offs, tau, eps).value;
                    if v.is_finite() && v >= e.value + 1e-4 * t * slope {
                        x = trial;
                        accepted = true;
                        break;
                    }
                    t /= 2.0;
                }
                steps += 1;
                if !accepted {
                    break;
                }
            }
            if eps <= eps_final {
                break;
            }
            eps = (eps / 10.0).max(eps_final);
        }
        let tau = lambda + eps;
        let e = self.eval(&x, &offs, tau, eps);
        let scaled: Vec<f64> = e.phi.iter().map(|v| v / tau).collect();
        let l = log_sum_exp(&scaled);
        let w = scaled.iter().map(|v| (v - l).exp()).collect();
        (w, steps, grad_norm <= options.gradient_tol)
    }

    /// Subgradient of `F_P` in the weights: `sum_i lambda_i g_i`, with `g_i`
    /// the target-side optimal dual for the half squared cost.
    fn subgradient(&self, w: &[f64]) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.k];
        for ((l, m), c) in self.entries.iter().zip(self.costs) {
            let t = transport_cost_matrix(m.weights(), w, c)?;
            let mean: f64 = t.g.iter().sum::<f64>() / self.k as f64;
            for (s, g) in t.g.iter().enumerate() {
                grad[s] += l * (g - mean);
            }
        }
        Ok(grad)
    }

    fn mirror(&self, lambda: f64, q: f64, options: &PenalizedOptions) -> Result<(Vec<f64>, usize, bool)> {
        let k = self.k;
        let scale = self.costs.iter().flatten().fold(0.0f64, |a, &b| a.max(b)).max(1e-300);
        let penalty_grad = |w: &[f64]| -> Vec<f64> { w.iter().map(|x| lambda * q * x.powf(q - 1.0)).collect() };
        let mut w = vec![1.0 / k as f64; k];
        let mut avg = vec![0.0; k];
        let mut total_step = 0.0;
        let eta0 = (2.0 * (k as f64).ln().max(1.0)).sqrt();
        for t in 1..=options.mirror_iter {
            let mut g = self.subgradient(&w)?;
            for (a, b) in g.iter_mut().zip(penalty_grad(&w)) {
                *a += b;
            }
            let spread = g.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b))
                - g.iter().fold(f64::INFINITY, |a, &b| a.min(b));
            let eta = eta0 / (t as f64).sqrt() / spread.max(1e-12 * scale);
            for (a, &wi) in avg.iter_mut().zip(&w) {
                *a += eta * wi;
            }
            total_step += eta;
            let lo = g.iter().fold(f64::INFINITY, |a, &b| a.min(b));
            for (wi, gi) in w.iter_mut().zip(&g) {
                *wi *= (-eta * (gi - lo)).exp();
            }
            let s: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= s);
        }
        avg.iter_mut().for_each(|v| *v /= total_step);
        let s: f64 = avg.iter().sum();
        avg.iter_mut().for_each(|v| *v /= s);
        // Frank-Wolfe gap bounds the suboptimality of the averaged weights.
        let mut g = self.subgradient(&avg)?;
        for (a, b) in g.iter_mut().zip(penalty_grad(&avg)) {
            *a += b;
        }
        let inner: f64 = g.iter().zip(&avg).map(|(a, b)| a * b).sum();
        let lo = g.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        let gap = inner - lo;
        Ok((avg, options.mirror_iter, gap <= options.mirror_tol * scale))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barycenter::barycenter_fixed_support;
    use crate::measures::{make_discrete, Domain};

    fn small_population() -> (Population, GridSpec) {
        let d = Domain::new(1.0, 1).unwrap();
        let r1 = make_discrete(&[vec![-0.5], vec![-0.25]], &[0.5, 0.5], d).unwrap();
        let r2 = make_discrete(&[vec![0.25], vec![0.5]], &[0.3, 0.7], d).unwrap();
        let grid = GridSpec::with_bounds(9, d, Some(vec![(-0.5, 0.5)])).unwrap();
        (Population::uniform(vec![r1, r2]).unwrap(), grid)
    }

    fn penalized_value(p: &Population, b: &BarycenterResult, grid: &GridSpec, lambda: f64, pen: Penalty) -> f64 {
        let nodes = grid.nodes();
        let w: Vec<f64> = nodes
            .iter()
            .map(|z| {
                b.measure
                    .points()
                    .zip(b.measure.weights())
                    .find(|(x, _)| sq_dist(x, z) < 1e-20)
                    .map_or(0.0, |(_, w)| *w)
            })
            .collect();
        variance_functional(p, &b.measure).unwrap() + lambda * pen.value(&w)
    }

    #[test]
    fn zero_weight_matches_fixed_support() {
        let (p, grid) = small_population();
        let a = barycenter_penalized(&p, &grid, 0.0, Penalty::Entropy).unwrap();
        let b = barycenter_fixed_support(&p, &grid.nodes()).unwrap();
        assert!((a.objective - b.objective).abs() <= 1e-6);
        assert_eq!(a.method, Method::Penalized);
    }

    #[test]
    fn large_entropy_weight_gives_uniform() {
        let (p, grid) = small_population();
        let b = barycenter_penalized(&p, &grid, 1e6, Penalty::Entropy).unwrap();
        assert_eq!(b.measure.len(), 9);
        for w in b.measure.weights() {
            assert!((w - 1.0 / 9.0).abs() < 1e-6, "{w}");
        }
    }

    #[test]
    fn entropy_solution_beats_perturbations() {
        let (p, grid) = small_population();
        let lambda = 0.01;
        let b = barycenter_penalized(&p, &grid, lambda, Penalty::Entropy).unwrap();
        assert!(b.converged);
        let best = penalized_value(&p, &b, &grid, lambda, Penalty::Entropy);
        let nodes = grid.nodes();
        let base: Vec<f64> = nodes
            .iter()
            .map(|z| {
                b.measure.points().zip(b.measure.weights()).find(|(x, _)| sq_dist(x, z) < 1e-20).map_or(0.0, |(_, w)| *w)
            })
            .collect();
        for s in 0..nodes.len() {
            for t in 0..nodes.len() {
                if s == t || base[s] == 0.0 {
                    continue;
                }
                let delta = base[s] * 0.1;
                let mut w = base.clone();
                w[s] -= delta;
                w[t] += delta;
                let m = DiscreteMeasure::from_flat(nodes.concat(), w.clone(), grid.domain).unwrap();
                let v = variance_functional(&p, &m).unwrap() + lambda * Penalty::Entropy.value(&w);
                assert!(v >= best - 1e-9, "move {s}->{t}: {v} < {best}");
            }
        }
    }

    #[test]
    fn power_penalty_spreads_mass() {
        let (p, grid) = small_population();
        let a = barycenter_penalized(&p, &grid, 1e-3, Penalty::PowerP(2.0)).unwrap();
        let b = barycenter_penalized(&p, &grid, 10.0, Penalty::PowerP(2.0)).unwrap();
        let norm = |r: &BarycenterResult| r.measure.weights().iter().map(|w| w * w).sum::<f64>();
        assert!(norm(&b) < norm(&a));
        assert!(a.objective <= b.objective + 1e-9);
    }

    #[test]
    fn rejects_bad_arguments() {
        let (p, grid) = small_population();
        assert!(barycenter_penalized(&p, &grid, -1.0, Penalty::Entropy).is_err());
        assert!(barycenter_penalized(&p, &grid, 1.0, Penalty::PowerP(0.5)).is_err());
    }
}
