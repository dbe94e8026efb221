//! Log-domain Sinkhorn iterations.

use rayon::prelude::*;

use super::TransportPlan;
use crate::error::{Error, Result};
use crate::measures::{sq_dist, DiscreteMeasure};

pub const SINKHORN_TOL: f64 = 1e-9;
pub const SINKHORN_MAX_ITER: usize = 100_000;

fn log_sum_exp<I: Iterator<Item = f64> + Clone>(it: I) -> f64 {
    let m = it.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + it.map(|v| (v - m).exp()).sum::<f64>().ln()
}

const STAGE_ITER: usize = 1000;

/// One pair of dual updates; returns the L1 violation of the source marginal.
fn sinkhorn_step(
    cost: &[f64],
    log_a: &[f64],
    log_b: &[f64],
    a: &[f64],
    f: &mut [f64],
    g: &mut [f64],
    epsilon: f64,
) -> Result<f64> {
    let (n, m) = (log_a.len(), log_b.len());
    f.par_iter_mut().enumerate().for_each(|(i, fi)| {
        let row = &cost[i * m..(i + 1) * m];
        *fi = epsilon * log_a[i] - epsilon * log_sum_exp((0..m).map(|j| (g[j] - row[j]) / epsilon));
    });
    g.par_iter_mut().enumerate().for_each(|(j, gj)| {
        *gj = epsilon * log_b[j] - epsilon * log_sum_exp((0..n).map(|i| (f[i] - cost[i * m + j]) / epsilon));
    });
    if f.iter().chain(g.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NumericalUnderflow);
    }
    let errs: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let row = &cost[i * m..(i + 1) * m];
            let s: f64 = (0..m).map(|j| ((f[i] + g[j] - row[j]) / epsilon).exp()).sum();
            (s - a[i]).abs()
        })
        .collect();
    Ok(errs.iter().sum())
}

/// Entropic transport with the default tolerance and iteration budget.
pub fn w2_entropic_default(rho: &DiscreteMeasure, mu: &DiscreteMeasure, epsilon: f64) -> Result<(f64, TransportPlan)> {
    w2_entropic(rho, mu, epsilon, SINKHORN_MAX_ITER, SINKHORN_TOL)
}

/// Entropically regularized transport for the cost `|x - y|^2`.
///
/// Returns the unregularized cost `<plan, C>` of the Sinkhorn plan, which
/// overestimates `W2^2`, together with the plan. Convergence is measured by the
/// L1 violation of the source marginal after each column update.
pub fn w2_entropic(
    rho: &DiscreteMeasure,
    mu: &DiscreteMeasure,
    epsilon: f64,
    max_iter: usize,
    tol: f64,
) -> Result<(f64, TransportPlan)> {
    if rho.domain() != mu.domain() {
        return Err(Error::DomainMismatch);
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidInput(format!("epsilon must be positive, got {epsilon}")));
    }
    let (n, m) = (rho.len(), mu.len());
    let cost: Vec<f64> = (0..n * m).map(|k| sq_dist(rho.point(k / m), mu.point(k % m))).collect();
    let log_a: Vec<f64> = rho.weights().iter().map(|w| w.ln()).collect();
    let log_b: Vec<f64> = mu.weights().iter().map(|w| w.ln()).collect();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];

    // Anneal epsilon down from the cost scale, warm-starting each stage; the
    // small-epsilon stage then starts close to its fixed point.
    let c_max = cost.iter().fold(0.0f64, |a, &c| a.max(c));
    let mut stages = vec![epsilon];
    while stages.last().is_some_and(|&e| e * 4.0 < c_max) {
        let e = stages.last().unwrap() * 4.0;
        stages.push(e);
    }
    stages.reverse();

    let mut used = 0;
    let mut converged = false;
    for (s, &eps) in stages.iter().enumerate() {
        let last = s + 1 == stages.len();
        let budget = if last { max_iter - used } else { STAGE_ITER.min(max_iter - used) };
        for _ in 0..budget {
            used += 1;
            let err = sinkhorn_step(&cost, &log_a, &log_b, rho.weights(), &mut f, &mut g, eps)?;
            if err <= tol {
                converged = last;
                break;
            }
        }
        if used >= max_iter {
            break;
        }
    }
    if !converged {
        return Err(Error::NotConverged { iterations: max_iter });
    }

    let mut entries = Vec::new();
    for i in 0..n {
        for j in 0..m {
            let x = ((f[i] + g[j] - cost[i * m + j]) / epsilon).exp();
            if x > 0.0 {
                entries.push((i, j, x));
            }
        }
    }
    if entries.is_empty() {
        return Err(Error::NumericalUnderflow);
    }
    let plan = TransportPlan::from_entries(rho.clone(), mu.clone(), entries);
    Ok((plan.cost, plan))
}
