//! Instance generators: the two-square counterexamples, the one-dimensional
//! exponent example, h-net projection and empirical sampling.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::measures::{DiscreteMeasure, Domain, Population};
use crate::ot::PotentialPair;

/// Radius of the ball holding the square families.
pub const SQUARE_RADIUS: f64 = 2.0;

fn plane() -> Domain {
    Domain::new(SQUARE_RADIUS, 2).expect("valid domain")
}

fn regime(ok: bool, force: bool, what: impl FnOnce() -> String) -> Result<()> {
    if ok || force {
        Ok(())
    } else {
        Err(Error::OutOfRegime(what()))
    }
}

/// `rho_1 = (delta_(0,1) + delta_(0,-1)) / 2`, shared by both square families.
pub fn vertical_pair() -> DiscreteMeasure {
    DiscreteMeasure::from_flat(vec![0.0, 1.0, 0.0, -1.0], vec![0.5, 0.5], plane()).expect("valid atoms")
}

fn horizontal_pair(eps: f64) -> Result<DiscreteMeasure> {
    DiscreteMeasure::from_flat(vec![1.0, 0.5 * eps, -1.0, -0.5 * eps], vec![0.5, 0.5], plane())
}

/// The pair `(P_eps, P_-eps)` where `P_eps = (delta_rho1 + delta_rho2)/2` and
/// `rho2 = (delta_x + delta_-x)/2`, `x = (1, eps/2)`.
///
/// Requires `0 < eps <= 1/2` unless `force` is set.
pub fn fig1_family(eps: f64, force: bool) -> Result<(Population, Population)> {
    regime(eps > 0.0 && eps <= 0.5, force, || format!("epsilon must lie in (0, 1/2], got {eps}"))?;
    let rho1 = vertical_pair();
    let p = Population::uniform(vec![rho1.clone(), horizontal_pair(eps)?])?;
    let q = Population::uniform(vec![rho1, horizontal_pair(-eps)?])?;
    Ok((p, q))
}

/// Two squares of side `a` centred at `(1, eps)` and `(-1, -eps)`, density
/// proportional to `|y -+ eps|^(2 alpha - 1)`, integrated over a
/// `resolution x resolution` cell grid per square and placed at cell midpoints.
pub fn square_pair(a: f64, alpha: f64, eps: f64, resolution: usize) -> Result<DiscreteMeasure> {
    if resolution == 0 {
        return Err(Error::InvalidInput("resolution must be positive".into()));
    }
    let h = a / resolution as f64;
    // Antiderivative of |s|^(2 alpha - 1).
    let g = |s: f64| s.signum() * s.abs().powf(2.0 * alpha) / (2.0 * alpha);
    let row_mass: Vec<f64> = (0..resolution)
        .map(|k| {
            let lo = -0.5 * a + k as f64 * h;
            g(lo + h) - g(lo)
        })
        .collect();
    let total: f64 = row_mass.iter().sum::<f64>() * resolution as f64;
    let n = resolution * resolution;
    let mut coords = Vec::with_capacity(4 * n);
    let mut weights = Vec::with_capacity(2 * n);
    for sign in [1.0, -1.0] {
        for i in 0..resolution {
            let x = 1.0 - 0.5 * a + (i as f64 + 0.5) * h;
            for (k, m) in row_mass.iter().enumerate() {
                let s = -0.5 * a + (k as f64 + 0.5) * h;
                coords.push(sign * x);
                coords.push(sign * (s + eps));
                weights.push(0.5 * m / total);
            }
        }
    }
    DiscreteMeasure::from_flat(coords, weights, plane())
}

/// The pair `(P_0, P_eps)` with `P_eps = (delta_rho1 + delta_rho2^eps)/2` and
/// `rho2^eps` from [`square_pair`].
///
/// Requires `0 < a < 1`, `alpha > 0` and `0 < eps <= a/2` unless `force` is set.
pub fn fig2_family(a: f64, alpha: f64, eps: f64, resolution: usize, force: bool) -> Result<(Population, Population)> {
    if !(a > 0.0 && a < 1.0) || !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidInput(format!("need 0 < a < 1 and alpha > 0, got a = {a}, alpha = {alpha}")));
    }
    regime(eps > 0.0 && eps <= 0.5 * a, force, || format!("epsilon must lie in (0, a/2], got {eps}"))?;
    let rho1 = vertical_pair();
    let p0 = Population::uniform(vec![rho1.clone(), square_pair(a, alpha, 0.0, resolution)?])?;
    let pe = Population::uniform(vec![rho1, square_pair(a, alpha, eps, resolution)?])?;
    Ok((p0, pe))
}

/// Inputs of the one-dimensional exponent example.
#[derive(Debug, Clone)]
pub struct RemarkInstance {
    /// Uniform law on `[-1/2, 1/2]`, sampled at cell midpoints.
    pub rho: DiscreteMeasure,
    /// `(delta_-1 + delta_1)/2`.
    pub mu0: DiscreteMeasure,
    /// `(1/2 - eps/2)(delta_-1 + delta_1) + eps delta_0`.
    pub mu_eps: DiscreteMeasure,
    /// `psi = 0` on `{-1, 1}` with `psi* = |x|`.
    pub potential: PotentialPair,
}

/// Build the exponent example with `rho` on `grid_points` cells.
pub fn remark_exponent_family(eps: f64, grid_points: usize) -> Result<RemarkInstance> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidInput(format!("epsilon must lie in (0, 1), got {eps}")));
    }
    if grid_points == 0 {
        return Err(Error::InvalidInput("grid must have at least one point".into()));
    }
    let line = Domain::new(1.0, 1)?;
    let n = grid_points as f64;
    let xs: Vec<f64> = (0..grid_points).map(|i| -0.5 + (i as f64 + 0.5) / n).collect();
    let rho = DiscreteMeasure::from_flat(xs.clone(), vec![1.0; grid_points], line)?;
    let mu0 = DiscreteMeasure::from_flat(vec![-1.0, 1.0], vec![0.5, 0.5], line)?;
    let side = 0.5 - 0.5 * eps;
    let mu_eps = DiscreteMeasure::from_flat(vec![-1.0, 0.0, 1.0], vec![side, eps, side], line)?;
    let psi_star: Vec<f64> = rho.coords().iter().map(|x| x.abs()).collect();
    let potential = PotentialPair::new(vec![0.0, 0.0], psi_star, &rho, &mu0);
    Ok(RemarkInstance { rho, mu0, mu_eps, potential })
}

/// Project `rho` onto the lattice of spacing `h / sqrt(d)` inside the domain.
///
/// Each atom goes to the nearest lattice point; when that point leaves the
/// ball, the nearest corner of the enclosing cell inside the ball is used
/// instead. Every atom moves by at most `h`, so `W2(rho, rho^h) <= h`.
pub fn hnet_discretize(rho: &DiscreteMeasure, h: f64) -> Result<DiscreteMeasure> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidInput(format!("h must be positive, got {h}")));
    }
    let domain = rho.domain();
    let d = rho.dim();
    let s = h / (d as f64).sqrt();
    let mut cells: BTreeMap<Vec<i64>, f64> = BTreeMap::new();
    for (x, &w) in rho.points().zip(rho.weights()) {
        let mut key: Vec<i64> = x.iter().map(|v| (v / s).round() as i64).collect();
        if !domain.contains(&lattice_point(&key, s)) {
            let floor: Vec<i64> = x.iter().map(|v| (v / s).floor() as i64).collect();
            let mut best: Option<(f64, Vec<i64>)> = None;
            for corner in 0..(1usize << d) {
                let k: Vec<i64> = (0..d).map(|j| floor[j] + ((corner >> j) & 1) as i64).collect();
                let p = lattice_point(&k, s);
                if domain.contains(&p) {
                    let dist: f64 = p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                    if best.as_ref().is_none_or(|b| dist < b.0) {
                        best = Some((dist, k));
                    }
                }
            }
            // The corner nearest the origin always lies inside the ball.
            key = best.expect("a cell corner inside the ball").1;
        }
        *cells.entry(key).or_insert(0.0) += w;
    }
    let mut coords = Vec::with_capacity(cells.len() * d);
    let mut weights = Vec::with_capacity(cells.len());
    for (k, w) in cells {
        coords.extend(lattice_point(&k, s));
        weights.push(w);
    }
    DiscreteMeasure::from_flat(coords, weights, domain)
}

fn lattice_point(k: &[i64], s: f64) -> Vec<f64> {
    k.iter().map(|&i| i as f64 * s).collect()
}

/// Empirical measure of `n` independent draws from `rho`.
pub fn empirical_sample(rho: &DiscreteMeasure, n: usize, seed: u64) -> Result<DiscreteMeasure> {
    if n == 0 {
        return Err(Error::InvalidInput("sample size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts = categorical_counts(rho.weights(), n, &mut rng)?;
    let mut coords = Vec::new();
    let mut weights = Vec::new();
    for (i, c) in counts.into_iter().enumerate() {
        if c > 0 {
            coords.extend_from_slice(rho.point(i));
            weights.push(c as f64 / n as f64);
        }
    }
    DiscreteMeasure::from_flat(coords, weights, rho.domain())
}

/// Draw `n` indices from the categorical law `weights` and count them.
pub(crate) fn categorical_counts(weights: &[f64], n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    let dist = WeightedIndex::new(weights).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut counts = vec![0usize; weights.len()];
    for _ in 0..n {
        counts[dist.sample(rng)] += 1;
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barycenter::barycenter_two_marginal;
    use crate::measures::second_moment;
    use crate::metrics::{nested_w1, tv_distance};
    use crate::ot::{w2_exact, OtConfig};
    use approx::assert_relative_eq;
    use rand::Rng;

    #[test]
    fn fig1_reference_values() {
        let cfg = OtConfig::default();
        for eps in [0.05, 0.25, 0.5] {
            let (p, q) = fig1_family(eps, false).unwrap();
            let (bp, bq) = (barycenter_two_marginal(&p, &cfg).unwrap(), barycenter_two_marginal(&q, &cfg).unwrap());
            // Hand-computed barycenters: (+-1/2, +-(1/2 + eps/4)) with mirrored x signs.
            let y = 0.5 + 0.25 * eps;
            let mut pts = bp.measure.points_vec();
            pts.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
            assert_relative_eq!(pts[0][1], -y, epsilon = 1e-14);
            assert_relative_eq!(pts[1][1], y, epsilon = 1e-14);
            assert_relative_eq!(w2_exact(&bp.measure, &bq.measure).unwrap().0, 1.0, epsilon = 1e-12);
            assert_relative_eq!(nested_w1(&p, &q).unwrap(), 0.5 * eps, epsilon = 1e-12);
            assert_eq!(tv_distance(&p, &q).unwrap(), 0.5);
        }
        assert!(matches!(fig1_family(0.6, false), Err(Error::OutOfRegime(_))));
        assert!(matches!(fig1_family(0.0, false), Err(Error::OutOfRegime(_))));
        assert!(fig1_family(0.6, true).is_ok());
    }

    #[test]
    fn square_pair_mass_and_shape() {
        // alpha = 1/2 gives a flat density.
        let flat = square_pair(0.5, 0.5, 0.1, 8).unwrap();
        assert_eq!(flat.len(), 128);
        for w in flat.weights() {
            assert_relative_eq!(*w, 1.0 / 128.0, epsilon = 1e-15);
        }
        // Upper square carries half the mass and is centred at (1, eps).
        let m = square_pair(0.5, 1.0, 0.1, 16).unwrap();
        let upper: f64 = m.points().zip(m.weights()).filter(|(x, _)| x[0] > 0.0).map(|(_, w)| w).sum();
        assert_relative_eq!(upper, 0.5, epsilon = 1e-14);
        let my: f64 = m.points().zip(m.weights()).filter(|(x, _)| x[0] > 0.0).map(|(x, w)| x[1] * w).sum();
        assert_relative_eq!(my / 0.5, 0.1, epsilon = 1e-14);
        // Density |s| at alpha = 1: cell masses grow linearly away from the centre line.
        let row: Vec<f64> = m.points().zip(m.weights()).filter(|(x, _)| x[0] > 0.0).take(16).map(|(_, w)| *w).collect();
        assert!(row[0] > row[4] && row[7] < row[4]);
        assert_relative_eq!(row[7], row[8], epsilon = 1e-15);
    }

    #[test]
    fn fig2_regime_checks() {
        assert!(matches!(fig2_family(0.5, 1.0, 0.3, 4, false), Err(Error::OutOfRegime(_))));
        assert!(fig2_family(0.5, 1.0, 0.3, 4, true).is_ok());
        assert!(fig2_family(1.5, 1.0, 0.1, 4, false).is_err());
        let (p0, pe) = fig2_family(0.5, 1.0, 0.25, 4, false).unwrap();
        assert_eq!(p0.len(), 2);
        assert!(nested_w1(&p0, &pe).unwrap() <= 0.25 + 1e-12);
    }

    #[test]
    fn remark_instance() {
        let r = remark_exponent_family(0.1, 101).unwrap();
        assert_relative_eq!(w2_exact(&r.mu0, &r.mu_eps).unwrap().0.powi(2), 0.1, epsilon = 1e-12);
        assert!(r.potential.feasibility_violation(&r.rho, &r.mu0) <= 0.0);
        // The supplied pair is optimal: its dual value equals the primal cost.
        let (w, _, _) = w2_exact(&r.rho, &r.mu0).unwrap();
        assert_relative_eq!(r.potential.certified_cost, w * w, epsilon = 1e-12);
        assert_relative_eq!(second_moment(&r.mu_eps), 0.9, epsilon = 1e-15);
        assert!(remark_exponent_family(1.0, 10).is_err());
    }

    #[test]
    fn hnet_examples() {
        let line = Domain::new(1.0, 1).unwrap();
        let on_net = DiscreteMeasure::from_flat(vec![-0.5, 0.0, 0.25], vec![0.2, 0.3, 0.5], line).unwrap();
        assert_eq!(hnet_discretize(&on_net, 0.25).unwrap(), on_net);
        let off = DiscreteMeasure::dirac(&[0.33], line).unwrap();
        let proj = hnet_discretize(&off, 0.1).unwrap();
        assert_relative_eq!(proj.point(0)[0], 0.3, epsilon = 1e-12);
        // Rounding past the boundary falls back to an inner corner.
        let disk = Domain::new(1.0, 2).unwrap();
        let edge = DiscreteMeasure::dirac(&[0.7071, 0.7071], disk).unwrap();
        let p = hnet_discretize(&edge, 0.3).unwrap();
        assert!(disk.contains(p.point(0)));
        assert!(w2_exact(&edge, &p).unwrap().0 <= 0.3);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<f64> = (0..100).map(|_| rng.random_range(-0.7..0.7)).collect();
        let rho = DiscreteMeasure::from_flat(pts, vec![1.0; 50], disk).unwrap();
        for h in [0.05, 0.1, 0.2] {
            assert!(w2_exact(&rho, &hnet_discretize(&rho, h).unwrap()).unwrap().0 <= h);
        }
    }

    #[test]
    fn sampling() {
        let line = Domain::new(1.0, 1).unwrap();
        let x = DiscreteMeasure::dirac(&[0.4], line).unwrap();
        assert_eq!(empirical_sample(&x, 17, 3).unwrap(), x);
        let four = DiscreteMeasure::from_flat(vec![-0.75, -0.25, 0.25, 0.75], vec![1.0; 4], line).unwrap();
        let one = empirical_sample(&four, 1, 0).unwrap();
        assert_eq!(one.len(), 1);
        assert!(four.coords().contains(&one.point(0)[0]));
        let big = empirical_sample(&four, 10_000, 0).unwrap();
        let tv: f64 = 0.5 * big.weights().iter().map(|w| (w - 0.25).abs()).sum::<f64>();
        assert!(big.len() == 4 && tv <= 0.05);
        assert_eq!(empirical_sample(&four, 50, 7).unwrap(), empirical_sample(&four, 50, 7).unwrap());
        assert!(empirical_sample(&four, 0, 0).is_err());
    }
}
