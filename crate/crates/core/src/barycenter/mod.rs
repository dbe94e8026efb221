//! Wasserstein barycenter solvers.
//!
//! Every solver returns a [`BarycenterResult`] whose `objective` is the
//! variance functional `F_P(mu) = 1/2 sum_i lambda_i W2^2(rho_i, mu)` at the
//! returned measure.

mod fixed;
mod penalized;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use fixed::{
    barycenter_fixed_support, barycenter_fixed_support_with, first_order_violation, BregmanOptions,
    FixedSupportOptions,
};
pub use penalized::{barycenter_penalized, barycenter_penalized_with, PenalizedOptions, Penalty};

use crate::error::{Error, Result};
use crate::functionals::variance_functional_with;
use crate::measures::{make_discrete, sq_dist, DiscreteMeasure, Domain, Population};
use crate::ot::{w2_plan_with, w2_squared_1d, OtConfig};

/// Which solver produced a barycenter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    OneD,
    FixedSupport,
    FreeSupport,
    Penalized,
    /// Exact displacement interpolation for a population of two measures.
    TwoMarginal,
}

/// Output of a barycenter solver.
#[derive(Debug, Clone, PartialEq)]
pub struct BarycenterResult {
    pub measure: DiscreteMeasure,
    pub objective: f64,
    pub method: Method,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResultRepr {
    domain: Domain,
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
    objective: f64,
    method: Method,
    iterations: usize,
    converged: bool,
}

impl Serialize for BarycenterResult {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ResultRepr {
            domain: self.measure.domain(),
            points: self.measure.points_vec(),
            weights: self.measure.weights().to_vec(),
            objective: self.objective,
            method: self.method,
            iterations: self.iterations,
            converged: self.converged,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for BarycenterResult {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = ResultRepr::deserialize(d)?;
        let measure = make_discrete(&r.points, &r.weights, r.domain).map_err(serde::de::Error::custom)?;
        Ok(BarycenterResult {
            measure,
            objective: r.objective,
            method: r.method,
            iterations: r.iterations,
            converged: r.converged,
        })
    }
}

/// Entries with positive weight.
pub(crate) fn active_entries(p: &Population) -> Vec<(f64, &DiscreteMeasure)> {
    p.entries().iter().filter(|e| e.0 > 0.0).map(|(l, m)| (*l, m)).collect()
}

/// Exact barycenter on the line by averaging quantile functions.
///
/// The quantile levels are the union of the cumulative-weight breakpoints of
/// all marginals, so the average is exact for atomic inputs.
pub fn barycenter_1d(p: &Population) -> Result<BarycenterResult> {
    let domain = p.domain();
    if domain.dim() != 1 {
        return Err(Error::WrongDimension { expected: 1, found: domain.dim() });
    }
    let entries = active_entries(p);
    let sorted: Vec<(Vec<f64>, Vec<f64>)> = entries
        .iter()
        .map(|(_, m)| {
            let mut v: Vec<(f64, f64)> = m.points().map(|x| x[0]).zip(m.weights().iter().copied()).collect();
            v.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut cum = Vec::with_capacity(v.len());
            let mut acc = 0.0;
            for &(_, w) in &v {
                acc += w;
                cum.push(acc);
            }
            (v.into_iter().map(|e| e.0).collect(), cum)
        })
        .collect();

    let mut levels: Vec<f64> = sorted.iter().flat_map(|(_, c)| c[..c.len() - 1].iter().copied()).collect();
    levels.sort_by(f64::total_cmp);
    let mut breaks: Vec<f64> = Vec::with_capacity(levels.len() + 1);
    for t in levels {
        if t > 1e-14 && t < 1.0 - 1e-14 && breaks.last().is_none_or(|&b| t - b > 1e-14) {
            breaks.push(t);
        }
    }
    breaks.push(1.0);

    let mut points = Vec::with_capacity(breaks.len());
    let mut weights = Vec::with_capacity(breaks.len());
    let mut prev = 0.0;
    for &t in &breaks {
        let mid = 0.5 * (prev + t);
        let mut x = 0.0;
        for ((lambda, _), (xs, cum)) in entries.iter().zip(&sorted) {
            let k = cum.partition_point(|&c| c < mid).min(xs.len() - 1);
            x += lambda * xs[k];
        }
        points.push(vec![x]);
        weights.push(t - prev);
        prev = t;
    }
    let measure = make_discrete(&points, &weights, domain)?;
    let objective = 0.5
        * entries
            .iter()
            .map(|(l, m)| Ok(l * w2_squared_1d(m, &measure)?))
            .collect::<Result<Vec<f64>>>()?
            .iter()
            .sum::<f64>();
    Ok(BarycenterResult { measure, objective, method: Method::OneD, iterations: 1, converged: true })
}

/// Exact barycenter of a two-measure population by displacement interpolation
/// along one optimal plan: atoms `lambda_1 x + lambda_2 y` with the plan masses.
pub fn barycenter_two_marginal(p: &Population, config: &OtConfig) -> Result<BarycenterResult> {
    let entries = active_entries(p);
    match entries.as_slice() {
        [(_, m)] => {
            let measure = (*m).clone();
            Ok(BarycenterResult { measure, objective: 0.0, method: Method::TwoMarginal, iterations: 1, converged: true })
        }
        [(l1, r1), (l2, r2)] => {
            let (_, plan) = w2_plan_with(r1, r2, config)?;
            let d = r1.dim();
            let mut coords = Vec::with_capacity(plan.entries.len() * d);
            let mut weights = Vec::with_capacity(plan.entries.len());
            for &(i, j, x) in &plan.entries {
                coords.extend(r1.point(i).iter().zip(r2.point(j)).map(|(a, b)| l1 * a + l2 * b));
                weights.push(x);
            }
            let measure = DiscreteMeasure::from_flat(coords, weights, p.domain())?;
            let objective = 0.5 * l1 * l2 * plan.cost;
            Ok(BarycenterResult { measure, objective, method: Method::TwoMarginal, iterations: 1, converged: true })
        }
        _ => Err(Error::InvalidInput(format!("expected two marginals, found {}", entries.len()))),
    }
}

/// Initial atoms for the free-support iteration.
#[derive(Debug, Clone, PartialEq)]
pub enum FreeSupportInit {
    /// k-means++ seeding on the pooled atoms, weighted by `lambda_i * w_ik`.
    KMeansPlusPlus { seed: u64 },
    /// Start from this measure; its atom count overrides `k`.
    Given(DiscreteMeasure),
}

impl Default for FreeSupportInit {
    fn default() -> Self {
        FreeSupportInit::KMeansPlusPlus { seed: 0 }
    }
}

fn kmeans_pp(p: &Population, k: usize, seed: u64) -> Result<DiscreteMeasure> {
    let mut pool: Vec<(&[f64], f64)> = Vec::new();
    for (l, m) in active_entries(p) {
        pool.extend(m.points().zip(m.weights()).map(|(x, w)| (x, l * w)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut dist = vec![f64::INFINITY; pool.len()];
    while centers.len() < k {
        let scores: Vec<f64> = if centers.is_empty() {
            pool.iter().map(|e| e.1).collect()
        } else {
            pool.iter().zip(&dist).map(|(e, d)| e.1 * d).collect()
        };
        let total: f64 = scores.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut u = rng.random::<f64>() * total;
        let mut pick = scores.len() - 1;
        for (i, s) in scores.iter().enumerate() {
            if u < *s {
                pick = i;
                break;
            }
            u -= s;
        }
        let c = pool[pick].0.to_vec();
        for (d, e) in dist.iter_mut().zip(&pool) {
            *d = d.min(sq_dist(e.0, &c));
        }
        centers.push(c);
    }
    DiscreteMeasure::uniform(&centers, p.domain())
}

/// Free-support barycenter by the fixed-point iteration: transport the current
/// atoms to every marginal, then move each atom to the lambda-weighted average
/// of its barycentric images. Atom weights stay fixed.
///
/// The objective is non-increasing along the iteration. On budget exhaustion
/// the best iterate is returned with `converged = false`.
pub fn barycenter_free_support(
    p: &Population,
    k: usize,
    init: &FreeSupportInit,
    max_iter: usize,
    tol: f64,
) -> Result<BarycenterResult> {
    free_support_trace(p, k, init, max_iter, tol).map(|r| r.0)
}

/// [`barycenter_free_support`] that also returns the objective of every iterate.
pub fn free_support_trace(
    p: &Population,
    k: usize,
    init: &FreeSupportInit,
    max_iter: usize,
    tol: f64,
) -> Result<(BarycenterResult, Vec<f64>)> {
    let config = OtConfig::default();
    let mut mu = match init {
        FreeSupportInit::KMeansPlusPlus { seed } => {
            if k == 0 {
                return Err(Error::InvalidInput("k must be at least 1".into()));
            }
            kmeans_pp(p, k, *seed)?
        }
        FreeSupportInit::Given(m) => {
            if m.domain() != p.domain() {
                return Err(Error::DomainMismatch);
            }
            m.clone()
        }
    };
    let entries = active_entries(p);
    let d = p.domain().dim();
    let mut best: Option<(DiscreteMeasure, f64)> = None;
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        let plans = entries
            .par_iter()
            .map(|(_, m)| w2_plan_with(&mu, m, &config).map(|r| r.1))
            .collect::<Result<Vec<_>>>()?;
        let objective = 0.5 * entries.iter().zip(&plans).map(|((l, _), pl)| l * pl.cost).sum::<f64>();
        trace.push(objective);
        if best.as_ref().is_none_or(|b| objective < b.1) {
            best = Some((mu.clone(), objective));
        }
        let mut next = vec![0.0; mu.len() * d];
        for ((l, _), plan) in entries.iter().zip(&plans) {
            for (s, t) in plan.barycentric_projection().iter().enumerate() {
                for (v, y) in next[s * d..(s + 1) * d].iter_mut().zip(t) {
                    *v += l * y;
                }
            }
        }
        let shift = (0..mu.len())
            .map(|s| sq_dist(mu.point(s), &next[s * d..(s + 1) * d]).sqrt())
            .fold(0.0, f64::max);
        mu = DiscreteMeasure::from_flat(next, mu.weights().to_vec(), p.domain())?;
        if shift < tol {
            converged = true;
            break;
        }
    }
    // Score the final iterate as well; it has not been evaluated yet.
    let last = variance_functional_with(p, &mu, &config)?;
    trace.push(last);
    if best.as_ref().is_none_or(|b| last <= b.1) {
        best = Some((mu, last));
    }
    let (measure, objective) = best.expect("at least one iterate");
    Ok((BarycenterResult { measure, objective, method: Method::FreeSupport, iterations, converged }, trace))
}
