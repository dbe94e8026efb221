//! Distances between populations and power-law fits.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::Table;
use crate::measures::{Population, POINT_TOL};
use crate::ot::{transport_cost_matrix, w2_plan_with, OtConfig};

/// Nested distance `W1(P, Q)`: optimal transport between the weight vectors
/// of the two populations with ground cost `W2(rho_i, sigma_j)`.
pub fn nested_w1(p: &Population, q: &Population) -> Result<f64> {
    nested_w1_with(p, q, &OtConfig::default())
}

pub fn nested_w1_with(p: &Population, q: &Population, config: &OtConfig) -> Result<f64> {
    if p.domain() != q.domain() {
        return Err(Error::DomainMismatch);
    }
    let (n, m) = (p.len(), q.len());
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).collect();
    let cost = pairs
        .par_iter()
        .map(|&(i, j)| Ok(w2_plan_with(&p.entries()[i].1, &q.entries()[j].1, config)?.0))
        .collect::<Result<Vec<f64>>>()?;
    Ok(transport_cost_matrix(&p.lambdas(), &q.lambdas(), &cost)?.cost.max(0.0))
}

/// Total variation between populations, identifying measures with equal atom sets.
pub fn tv_distance(p: &Population, q: &Population) -> Result<f64> {
    if p.domain() != q.domain() {
        return Err(Error::DomainMismatch);
    }
    // Each distinct measure collects its weight in P and in Q.
    let mut groups: Vec<(&crate::measures::DiscreteMeasure, f64, f64)> = Vec::new();
    for (side, pop) in [(0, p), (1, q)] {
        for (l, m) in pop.entries() {
            match groups.iter_mut().find(|g| g.0.same_atoms(m, POINT_TOL)) {
                Some(g) if side == 0 => g.1 += l,
                Some(g) => g.2 += l,
                None if side == 0 => groups.push((m, *l, 0.0)),
                None => groups.push((m, 0.0, *l)),
            }
        }
    }
    Ok((0.5 * groups.iter().map(|g| (g.1 - g.2).abs()).sum::<f64>()).min(1.0))
}

/// Points with a response below this are dropped before fitting.
pub const FIT_FLOOR: f64 = 1e-10;

/// Least-squares line through `(log x, log y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    /// Pairs used in the fit.
    pub pairs: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

impl ExponentFit {
    pub fn table(&self) -> Table {
        let mut t = Table::new(["x", "y"]);
        for &(x, y) in &self.pairs {
            t.push(vec![x, y]);
        }
        t
    }
}

/// Fit `y ~ C x^slope`. Pairs with `y < FIT_FLOOR` are excluded; at least two must remain.
pub fn fit_exponent(pairs: &[(f64, f64)]) -> Result<ExponentFit> {
    for &(x, y) in pairs {
        if !(x > 0.0) || !(y >= 0.0) || !x.is_finite() || !y.is_finite() {
            return Err(Error::NonPositiveSample { x, y });
        }
    }
    let kept: Vec<(f64, f64)> = pairs.iter().copied().filter(|&(_, y)| y >= FIT_FLOOR).collect();
    if kept.len() < 2 {
        return Err(Error::InvalidInput(format!("need at least two usable pairs, found {}", kept.len())));
    }
    let lx: Vec<f64> = kept.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = kept.iter().map(|p| p.1.ln()).collect();
    let n = kept.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidInput("perturbation sizes must not all be equal".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = lx.iter().zip(&ly).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) };
    Ok(ExponentFit { pairs: kept, slope, intercept, r_squared })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{make_discrete, DiscreteMeasure, Domain};
    use crate::ot::w2_exact;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn plane() -> Domain {
        Domain::new(2.0, 2).unwrap()
    }

    fn random_measure(rng: &mut ChaCha8Rng, n: usize) -> DiscreteMeasure {
        let pts: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
        make_discrete(&pts, &w, plane()).unwrap()
    }

    fn random_population(rng: &mut ChaCha8Rng) -> Population {
        let k = rng.random_range(1..=4);
        let entries = (0..k)
            .map(|_| {
                let n = rng.random_range(1..=10);
                (rng.random_range(0.1..1.0), random_measure(rng, n))
            })
            .collect();
        Population::new(entries).unwrap()
    }

    #[test]
    fn single_pairs_and_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = random_measure(&mut rng, 5);
        let b = random_measure(&mut rng, 6);
        let w = w2_exact(&a, &b).unwrap().0;
        let d = nested_w1(&Population::single(a.clone()), &Population::single(b)).unwrap();
        assert_relative_eq!(d, w, epsilon = 1e-12);
        let p = random_population(&mut rng);
        assert!(nested_w1(&p, &p).unwrap() < 1e-12);
    }

    #[test]
    fn metric_axioms() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..15 {
            let (p, q, r) = (random_population(&mut rng), random_population(&mut rng), random_population(&mut rng));
            let pq = nested_w1(&p, &q).unwrap();
            let qp = nested_w1(&q, &p).unwrap();
            let qr = nested_w1(&q, &r).unwrap();
            let pr = nested_w1(&p, &r).unwrap();
            assert!(pq >= 0.0);
            assert!((pq - qp).abs() < 1e-8);
            assert!(pr <= pq + qr + 1e-8);
            let tv = tv_distance(&p, &q).unwrap();
            assert!(pq <= 2.0 * 2.0 * tv + 1e-8);
        }
    }

    #[test]
    fn brute_force_outer_coupling() {
        // With two measures on each side, couplings form a one-parameter family
        // and the optimum sits at an endpoint of the feasible segment.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let ms: Vec<DiscreteMeasure> = (0..4).map(|_| random_measure(&mut rng, 4)).collect();
            let (a, b) = (rng.random_range(0.1..0.9), rng.random_range(0.1..0.9));
            let p = Population::new(vec![(a, ms[0].clone()), (1.0 - a, ms[1].clone())]).unwrap();
            let q = Population::new(vec![(b, ms[2].clone()), (1.0 - b, ms[3].clone())]).unwrap();
            let c = |i: usize, j: usize| w2_exact(&ms[i], &ms[j]).unwrap().0;
            let (lo, hi) = (f64::max(0.0, a + b - 1.0), a.min(b));
            let value = |t: f64| t * c(0, 2) + (a - t) * c(0, 3) + (b - t) * c(1, 2) + (1.0 - a - b + t) * c(1, 3);
            let brute = value(lo).min(value(hi));
            assert!((nested_w1(&p, &q).unwrap() - brute).abs() < 1e-9);
        }
    }

    #[test]
    fn tv_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a, b, c) = (random_measure(&mut rng, 3), random_measure(&mut rng, 3), random_measure(&mut rng, 3));
        let p = Population::uniform(vec![a.clone(), b.clone()]).unwrap();
        let q = Population::uniform(vec![a.clone(), c.clone()]).unwrap();
        assert_eq!(tv_distance(&p, &p).unwrap(), 0.0);
        assert_relative_eq!(tv_distance(&p, &q).unwrap(), 0.5);
        let r = Population::single(c);
        assert_relative_eq!(tv_distance(&Population::single(a), &r).unwrap(), 1.0);
    }

    #[test]
    fn exact_power_laws() {
        let lin: Vec<(f64, f64)> = [0.1, 0.2, 0.5, 1.0].iter().map(|&x| (x, x)).collect();
        let f = fit_exponent(&lin).unwrap();
        assert_relative_eq!(f.slope, 1.0, epsilon = 1e-12);
        assert_relative_eq!(f.r_squared, 1.0, epsilon = 1e-12);
        let sq: Vec<(f64, f64)> = (0..5).map(|k| 1e-3 * 10f64.powf(0.5 * k as f64)).map(|x| (x, x.sqrt())).collect();
        assert!((fit_exponent(&sq).unwrap().slope - 0.5).abs() < 1e-9);
    }

    #[test]
    fn fit_errors_and_floor() {
        assert!(matches!(fit_exponent(&[(0.0, 1.0), (1.0, 1.0)]), Err(Error::NonPositiveSample { .. })));
        assert!(matches!(fit_exponent(&[(1.0, -1.0), (2.0, 1.0)]), Err(Error::NonPositiveSample { .. })));
        let f = fit_exponent(&[(0.1, 0.0), (0.2, 0.2), (0.4, 0.4)]).unwrap();
        assert_eq!(f.pairs.len(), 2);
        assert_relative_eq!(f.slope, 1.0, epsilon = 1e-12);
        assert!(fit_exponent(&[(0.1, 0.0), (0.2, 0.2)]).is_err());
    }
}
