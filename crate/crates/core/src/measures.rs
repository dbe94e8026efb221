//! Discrete measures on a ball `B(0, R)` in `R^d`, and finite populations of them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for the ball constraint and duplicate merging.
pub const POINT_TOL: f64 = 1e-12;
/// Tolerance on the total mass of a measure or population.
pub const MASS_TOL: f64 = 1e-10;

/// The closed ball of radius `R` centred at the origin of `R^d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DomainRepr", into = "DomainRepr")]
pub struct Domain {
    radius: f64,
    dim: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DomainRepr {
    #[serde(rename = "R")]
    radius: f64,
    d: usize,
}

impl TryFrom<DomainRepr> for Domain {
    type Error = Error;
    fn try_from(r: DomainRepr) -> Result<Self> {
        Domain::new(r.radius, r.d)
    }
}

impl From<Domain> for DomainRepr {
    fn from(d: Domain) -> Self {
        DomainRepr { radius: d.radius, d: d.dim }
    }
}

impl Domain {
    pub fn new(radius: f64, dim: usize) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidInput(format!("radius must be positive, got {radius}")));
        }
        if dim == 0 {
            return Err(Error::InvalidInput("dimension must be at least 1".into()));
        }
        Ok(Domain { radius, dim })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Diameter of the ball, `2R`.
    pub fn diameter(&self) -> f64 {
        2.0 * self.radius
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        norm(x) <= self.radius + POINT_TOL
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn norm(a: &[f64]) -> f64 {
    norm2(a).sqrt()
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// A finitely supported probability measure on a [`Domain`].
///
/// Points are stored row-major in a flat buffer. Weights are strictly positive
/// and sum to one; support points are pairwise more than `1e-12` apart.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    coords: Vec<f64>,
    weights: Vec<f64>,
    domain: Domain,
}

/// Build a validated measure: zero weights are dropped, points closer than
/// `1e-12` are merged onto the first occurrence, and weights are normalized.
pub fn make_discrete(points: &[Vec<f64>], weights: &[f64], domain: Domain) -> Result<DiscreteMeasure> {
    let d = domain.dim();
    let mut coords = Vec::with_capacity(points.len() * d);
    for p in points {
        if p.len() != d {
            return Err(Error::WrongDimension { expected: d, found: p.len() });
        }
        coords.extend_from_slice(p);
    }
    DiscreteMeasure::from_flat(coords, weights.to_vec(), domain)
}

impl DiscreteMeasure {
    /// Same as [`make_discrete`] with points given as a flat row-major buffer.
    pub fn from_flat(coords: Vec<f64>, weights: Vec<f64>, domain: Domain) -> Result<Self> {
        let d = domain.dim();
        let n = weights.len();
        if n == 0 {
            return Err(Error::InvalidInput("a measure needs at least one atom".into()));
        }
        if coords.len() != n * d {
            return Err(Error::InvalidInput(format!(
                "{} coordinates do not describe {n} points in dimension {d}",
                coords.len()
            )));
        }
        for (index, &w) in weights.iter().enumerate() {
            if w.is_nan() || w.is_infinite() {
                return Err(Error::InvalidInput(format!("weight {index} is not finite")));
            }
            if w < 0.0 {
                return Err(Error::NegativeWeight { index, value: w });
            }
        }
        for (index, p) in coords.chunks_exact(d).enumerate() {
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("point {index} is not finite")));
            }
            let r = norm(p);
            if r > domain.radius() + POINT_TOL {
                return Err(Error::PointOutsideDomain { index, norm: r, radius: domain.radius() });
            }
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::ZeroTotalMass);
        }

        let rep = merge_representatives(&coords, &weights, d);
        let mut slot = vec![usize::MAX; n];
        let mut out_coords = Vec::with_capacity(coords.len());
        let mut out_weights: Vec<f64> = Vec::with_capacity(n);
        for i in 0..n {
            if weights[i] == 0.0 {
                continue;
            }
            let r = rep[i];
            if slot[r] == usize::MAX {
                slot[r] = out_weights.len();
                out_coords.extend_from_slice(&coords[r * d..(r + 1) * d]);
                out_weights.push(weights[i]);
            } else {
                out_weights[slot[r]] += weights[i];
            }
        }
        let sum: f64 = out_weights.iter().sum();
        if (sum - 1.0).abs() > 1e-11 {
            for w in &mut out_weights {
                *w /= sum;
            }
        }
        Ok(DiscreteMeasure { coords: out_coords, weights: out_weights, domain })
    }

    /// Unit mass at `x`.
    pub fn dirac(x: &[f64], domain: Domain) -> Result<Self> {
        Self::from_flat(x.to_vec(), vec![1.0], domain)
    }

    /// Equal weights on the given points.
    pub fn uniform(points: &[Vec<f64>], domain: Domain) -> Result<Self> {
        let w = vec![1.0; points.len()];
        make_discrete(points, &w, domain)
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    /// Number of atoms.
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.coords[i * d..(i + 1) * d]
    }

    pub fn points(&self) -> std::slice::ChunksExact<'_, f64> {
        self.coords.chunks_exact(self.dim())
    }

    pub fn points_vec(&self) -> Vec<Vec<f64>> {
        self.points().map(<[f64]>::to_vec).collect()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// True when both measures have the same atoms and weights up to `tol`,
    /// irrespective of atom order.
    pub fn same_atoms(&self, other: &Self, tol: f64) -> bool {
        if self.domain != other.domain || self.len() != other.len() {
            return false;
        }
        let mut used = vec![false; other.len()];
        'outer: for i in 0..self.len() {
            for j in 0..other.len() {
                if !used[j]
                    && sq_dist(self.point(i), other.point(j)).sqrt() <= tol
                    && (self.weights[i] - other.weights[j]).abs() <= tol
                {
                    used[j] = true;
                    continue 'outer;
                }
            }
            return false;
        }
        true
    }

    /// Pushforward by a map given as target points per atom.
    pub fn pushforward(&self, images: &[Vec<f64>]) -> Result<Self> {
        make_discrete(images, &self.weights, self.domain)
    }
}

/// For each point, the index of the earliest point in its cluster of points
/// chained together by distances within `POINT_TOL`, ignoring zero weights.
fn merge_representatives(coords: &[f64], weights: &[f64], d: usize) -> Vec<usize> {
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let n = weights.len();
    let mut parent: Vec<usize> = (0..n).collect();
    let mut order: Vec<usize> = (0..n).filter(|&i| weights[i] > 0.0).collect();
    order.sort_by(|&a, &b| coords[a * d].total_cmp(&coords[b * d]).then(a.cmp(&b)));
    let tol2 = POINT_TOL * POINT_TOL;
    for p in 0..order.len() {
        let i = order[p];
        let xi = &coords[i * d..(i + 1) * d];
        for &j in order[..p].iter().rev() {
            if xi[0] - coords[j * d] > POINT_TOL {
                break;
            }
            if sq_dist(xi, &coords[j * d..(j + 1) * d]) <= tol2 {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                let (lo, hi) = (ri.min(rj), ri.max(rj));
                parent[hi] = lo;
            }
        }
    }
    (0..n).map(|i| find(&mut parent, i)).collect()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MeasureRepr {
    domain: Domain,
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl Serialize for DiscreteMeasure {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MeasureRepr { domain: self.domain, points: self.points_vec(), weights: self.weights.clone() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for DiscreteMeasure {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = MeasureRepr::deserialize(d)?;
        make_discrete(&r.points, &r.weights, r.domain).map_err(serde::de::Error::custom)
    }
}

/// Total squared norm `sum_i w_i |x_i|^2`.
pub fn second_moment(mu: &DiscreteMeasure) -> f64 {
    mu.points().zip(mu.weights()).map(|(x, w)| w * norm2(x)).sum()
}

/// Mean `sum_i w_i x_i`.
pub fn mean(mu: &DiscreteMeasure) -> Vec<f64> {
    let mut m = vec![0.0; mu.dim()];
    for (x, w) in mu.points().zip(mu.weights()) {
        for (mk, xk) in m.iter_mut().zip(x) {
            *mk += w * xk;
        }
    }
    m
}

/// Regular lattice with `resolution` nodes per axis, clipped to the domain ball.
///
/// By default the lattice spans the cube `[-R, R]^d`; `bounds` restricts it to
/// a box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub resolution: usize,
    pub domain: Domain,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Vec<(f64, f64)>>,
}

impl GridSpec {
    pub fn new(resolution: usize, domain: Domain) -> Result<Self> {
        Self::with_bounds(resolution, domain, None)
    }

    pub fn with_bounds(resolution: usize, domain: Domain, bounds: Option<Vec<(f64, f64)>>) -> Result<Self> {
        if resolution == 0 {
            return Err(Error::InvalidInput("grid resolution must be positive".into()));
        }
        if let Some(b) = &bounds {
            if b.len() != domain.dim() {
                return Err(Error::WrongDimension { expected: domain.dim(), found: b.len() });
            }
            if b.iter().any(|&(lo, hi)| !(lo <= hi)) {
                return Err(Error::InvalidInput("grid bounds must satisfy lo <= hi".into()));
            }
        }
        let g = GridSpec { resolution, domain, bounds };
        if g.nodes().is_empty() {
            return Err(Error::InvalidInput("grid has no node inside the domain".into()));
        }
        Ok(g)
    }

    fn axis(&self, k: usize) -> Vec<f64> {
        let r = self.domain.radius();
        let (lo, hi) = self.bounds.as_ref().map_or((-r, r), |b| b[k]);
        let n = self.resolution;
        if n == 1 {
            return vec![0.5 * (lo + hi)];
        }
        let h = (hi - lo) / (n - 1) as f64;
        (0..n).map(|i| if i == n - 1 { hi } else { lo + i as f64 * h }).collect()
    }

    /// Lattice nodes inside the ball, in lexicographic order (last axis fastest).
    pub fn nodes(&self) -> Vec<Vec<f64>> {
        let d = self.domain.dim();
        let axes: Vec<Vec<f64>> = (0..d).map(|k| self.axis(k)).collect();
        let n = self.resolution;
        let total = n.pow(d as u32);
        let mut out = Vec::new();
        let mut idx = vec![0usize; d];
        for _ in 0..total {
            let p: Vec<f64> = (0..d).map(|k| axes[k][idx[k]]).collect();
            if self.domain.contains(&p) {
                out.push(p);
            }
            for k in (0..d).rev() {
                idx[k] += 1;
                if idx[k] < n {
                    break;
                }
                idx[k] = 0;
            }
        }
        out
    }
}

/// Weights proportional to `f` at the grid nodes.
pub fn discretize_density<F: Fn(&[f64]) -> f64>(f: F, grid: &GridSpec) -> Result<DiscreteMeasure> {
    let nodes = grid.nodes();
    let w: Vec<f64> = nodes.iter().map(|x| f(x)).collect();
    if w.iter().all(|&v| v == 0.0) {
        return Err(Error::AllZeroDensity);
    }
    make_discrete(&nodes, &w, grid.domain)
}

/// A finitely supported measure over measures, `sum_i lambda_i delta_{rho_i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    entries: Vec<(f64, DiscreteMeasure)>,
    domain: Domain,
}

impl Population {
    pub fn new(entries: Vec<(f64, DiscreteMeasure)>) -> Result<Self> {
        let Some(first) = entries.first() else {
            return Err(Error::InvalidInput("a population needs at least one entry".into()));
        };
        let domain = first.1.domain();
        for (index, (l, m)) in entries.iter().enumerate() {
            if m.domain() != domain {
                return Err(Error::DomainMismatch);
            }
            if !l.is_finite() {
                return Err(Error::InvalidInput(format!("lambda {index} is not finite")));
            }
            if *l < 0.0 {
                return Err(Error::NegativeWeight { index, value: *l });
            }
        }
        let total: f64 = entries.iter().map(|e| e.0).sum();
        if total <= 0.0 {
            return Err(Error::ZeroTotalMass);
        }
        let mut entries = entries;
        if (total - 1.0).abs() > 1e-11 {
            for e in &mut entries {
                e.0 /= total;
            }
        }
        Ok(Population { entries, domain })
    }

    /// Equal weights on the given measures.
    pub fn uniform(measures: Vec<DiscreteMeasure>) -> Result<Self> {
        Self::new(measures.into_iter().map(|m| (1.0, m)).collect())
    }

    pub fn single(measure: DiscreteMeasure) -> Self {
        let domain = measure.domain();
        Population { entries: vec![(1.0, measure)], domain }
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn entries(&self) -> &[(f64, DiscreteMeasure)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.0).collect()
    }

    pub fn measures(&self) -> impl Iterator<Item = &DiscreteMeasure> {
        self.entries.iter().map(|e| &e.1)
    }
}

#[derive(Serialize)]
struct EntryRef<'a> {
    lambda: f64,
    measure: &'a DiscreteMeasure,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryOwned {
    lambda: f64,
    measure: DiscreteMeasure,
}

impl Serialize for Population {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let entries: Vec<EntryRef<'_>> =
            self.entries.iter().map(|(lambda, measure)| EntryRef { lambda: *lambda, measure }).collect();
        let mut st = s.serialize_struct("Population", 1)?;
        st.serialize_field("entries", &entries)?;
        st.end()
    }
}

impl<'de> Deserialize<'de> for Population {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Repr {
            entries: Vec<EntryOwned>,
        }
        let r = Repr::deserialize(d)?;
        Population::new(r.entries.into_iter().map(|e| (e.lambda, e.measure)).collect())
            .map_err(serde::de::Error::custom)
    }
}

/// Regularity constants attached to a population: mass `alpha` of the regular
/// entries, density bounds, perimeter bound and the variance-inequality constant.
///
/// The regular subset is recorded explicitly by entry index; for a discrete
/// population there is nothing to measure, so this is a modelling input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityProfile {
    pub alpha: f64,
    pub m_lower: f64,
    pub m_upper: f64,
    pub perimeter: f64,
    pub c_convexity: f64,
    pub regular_indices: Vec<usize>,
}

impl RegularityProfile {
    pub fn new(
        population: &Population,
        m_lower: f64,
        m_upper: f64,
        perimeter: f64,
        c_convexity: f64,
        regular_indices: Vec<usize>,
    ) -> Result<Self> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!("{name} must be positive, got {v}")))
            }
        };
        positive("m_lower", m_lower)?;
        positive("m_upper", m_upper)?;
        positive("perimeter", perimeter)?;
        positive("c_convexity", c_convexity)?;
        if m_lower > m_upper {
            return Err(Error::InvalidInput("m_lower must not exceed m_upper".into()));
        }
        let mut seen = vec![false; population.len()];
        let mut alpha = 0.0;
        for &i in &regular_indices {
            if i >= population.len() || seen[i] {
                return Err(Error::InvalidInput(format!("bad regular index {i}")));
            }
            seen[i] = true;
            alpha += population.entries()[i].0;
        }
        if !(alpha > 0.0 && alpha <= 1.0 + MASS_TOL) {
            return Err(Error::InvalidInput(format!("regular mass {alpha} outside (0, 1]")));
        }
        Ok(RegularityProfile { alpha, m_lower, m_upper, perimeter, c_convexity, regular_indices })
    }

    /// Check the profile against a population it is claimed to describe.
    pub fn validate(&self, population: &Population) -> Result<()> {
        let mass: f64 = self
            .regular_indices
            .iter()
            .map(|&i| population.entries().get(i).map_or(f64::NAN, |e| e.0))
            .sum();
        if !((mass - self.alpha).abs() <= MASS_TOL) {
            return Err(Error::InvalidInput(format!("regular mass {mass} differs from alpha {}", self.alpha)));
        }
        if self.m_lower > self.m_upper {
            return Err(Error::InvalidInput("m_lower must not exceed m_upper".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dom(r: f64, d: usize) -> Domain {
        Domain::new(r, d).unwrap()
    }

    #[test]
    fn normalizes_single_atom() {
        let m = make_discrete(&[vec![0.0, 1.0]], &[2.0], dom(2.0, 2)).unwrap();
        assert_eq!(m.weights(), &[1.0]);
    }

    #[test]
    fn merges_duplicates() {
        let m = make_discrete(&[vec![0.0, 1.0], vec![0.0, 1.0]], &[0.5, 0.5], dom(2.0, 2)).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.point(0), &[0.0, 1.0]);
        assert_eq!(m.weights(), &[1.0]);
    }

    #[test]
    fn merge_keeps_first_occurrence_order() {
        let pts = vec![vec![1.0], vec![0.0], vec![1.0 + 5e-13], vec![-1.0]];
        let m = make_discrete(&pts, &[0.25; 4], dom(2.0, 1)).unwrap();
        assert_eq!(m.points_vec(), vec![vec![1.0], vec![0.0], vec![-1.0]]);
        assert_eq!(m.weights(), &[0.5, 0.25, 0.25]);
    }

    #[test]
    fn nearby_but_distinct_points_survive() {
        let m = make_discrete(&[vec![0.0], vec![1e-9]], &[0.5, 0.5], dom(1.0, 1)).unwrap();
        assert_eq!(m.len(), 2);
    }

    #[test]
    fn rejects_bad_inputs() {
        let d = dom(1.0, 2);
        assert!(matches!(
            make_discrete(&[vec![0.0, 0.0]], &[-1.0], d),
            Err(Error::NegativeWeight { index: 0, .. })
        ));
        assert!(matches!(make_discrete(&[vec![0.0, 0.0]], &[0.0], d), Err(Error::ZeroTotalMass)));
        assert!(matches!(
            make_discrete(&[vec![0.0, 1.5]], &[1.0], d),
            Err(Error::PointOutsideDomain { index: 0, .. })
        ));
        assert!(matches!(make_discrete(&[vec![0.0]], &[1.0], d), Err(Error::WrongDimension { .. })));
        assert!(make_discrete(&[], &[], d).is_err());
    }

    #[test]
    fn boundary_tolerance() {
        let d = dom(1.0, 1);
        assert!(make_discrete(&[vec![1.0 + 5e-13]], &[1.0], d).is_ok());
        assert!(make_discrete(&[vec![1.0 + 1e-11]], &[1.0], d).is_err());
    }

    #[test]
    fn two_point_family_measure() {
        let m = make_discrete(&[vec![0.0, 1.0], vec![0.0, -1.0]], &[0.5, 0.5], dom(2.0, 2)).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(second_moment(&m), 1.0);
    }

    #[test]
    fn construction_is_idempotent() {
        let pts = vec![vec![0.3, 0.1], vec![-0.2, 0.4], vec![0.3, 0.1], vec![0.0, -0.7]];
        let m = make_discrete(&pts, &[0.3, 1.1, 0.7, 0.9], dom(1.0, 2)).unwrap();
        let again = make_discrete(&m.points_vec(), m.weights(), m.domain()).unwrap();
        assert_eq!(m, again);
        for (a, b) in m.weights().iter().zip(again.weights()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn second_moment_examples() {
        let d = dom(3.0, 2);
        assert_eq!(second_moment(&DiscreteMeasure::dirac(&[0.0, 0.0], d).unwrap()), 0.0);
        let m = DiscreteMeasure::uniform(&[vec![1.0, 0.0], vec![0.0, 2.0]], d).unwrap();
        assert!((second_moment(&m) - 2.5).abs() < 1e-15);
        let rev = DiscreteMeasure::uniform(&[vec![0.0, 2.0], vec![1.0, 0.0]], d).unwrap();
        assert_eq!(second_moment(&m), second_moment(&rev));
    }

    #[test]
    fn uniform_density_on_four_nodes() {
        let g = GridSpec::new(4, dom(1.0, 1)).unwrap();
        let m = discretize_density(|_| 1.0, &g).unwrap();
        assert_eq!(m.weights(), &[0.25; 4]);
        assert_eq!(m.point(0), &[-1.0]);
        assert_eq!(m.point(3), &[1.0]);
    }

    #[test]
    fn density_support_restriction() {
        let g = GridSpec::new(21, dom(1.0, 2)).unwrap();
        let m = discretize_density(|x| if x[0] > 0.0 { 1.0 } else { 0.0 }, &g).unwrap();
        let total: f64 = m.weights().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(m.points().all(|p| p[0] > 0.0));
    }

    #[test]
    fn all_zero_density_fails() {
        let g = GridSpec::new(5, dom(1.0, 1)).unwrap();
        assert!(matches!(discretize_density(|_| 0.0, &g), Err(Error::AllZeroDensity)));
    }

    #[test]
    fn grid_drops_nodes_outside_ball() {
        let g = GridSpec::new(3, dom(1.0, 2)).unwrap();
        // Corners (±1, ±1) fall outside the unit disc.
        assert_eq!(g.nodes().len(), 5);
        assert!(GridSpec::new(2, dom(1.0, 2)).is_err());
    }

    #[test]
    fn measure_json_layout_and_round_trip() {
        let m = make_discrete(&[vec![0.0, 1.0], vec![0.1, -1.0]], &[0.5, 0.5], dom(2.0, 2)).unwrap();
        let s = crate::format::to_json_string(&m, false).unwrap();
        assert_eq!(s, r#"{"domain":{"R":2,"d":2},"points":[[0,1],[0.10000000000000001,-1]],"weights":[0.5,0.5]}"#);
        let back: DiscreteMeasure = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn population_json_round_trip() {
        let d = dom(1.0, 1);
        let p = Population::new(vec![
            (0.25, DiscreteMeasure::dirac(&[0.5], d).unwrap()),
            (0.75, DiscreteMeasure::uniform(&[vec![-0.5], vec![1.0 / 3.0]], d).unwrap()),
        ])
        .unwrap();
        let s = crate::format::to_json_string(&p, false).unwrap();
        assert!(s.starts_with(r#"{"entries":[{"lambda":0.25,"measure":{"domain""#));
        let back: Population = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn population_checks() {
        let a = DiscreteMeasure::dirac(&[0.0], dom(1.0, 1)).unwrap();
        let b = DiscreteMeasure::dirac(&[0.0], dom(2.0, 1)).unwrap();
        assert!(matches!(Population::new(vec![(0.5, a.clone()), (0.5, b)]), Err(Error::DomainMismatch)));
        let p = Population::new(vec![(1.0, a.clone()), (3.0, a)]).unwrap();
        assert_eq!(p.lambdas(), vec![0.25, 0.75]);
    }

    #[test]
    fn regularity_profile_mass() {
        let d = dom(1.0, 1);
        let p = Population::new(vec![
            (0.25, DiscreteMeasure::dirac(&[0.5], d).unwrap()),
            (0.75, DiscreteMeasure::dirac(&[-0.5], d).unwrap()),
        ])
        .unwrap();
        let prof = RegularityProfile::new(&p, 1.0, 2.0, 2.0, 0.1, vec![1]).unwrap();
        assert_eq!(prof.alpha, 0.75);
        prof.validate(&p).unwrap();
        assert!(RegularityProfile::new(&p, 3.0, 2.0, 2.0, 0.1, vec![1]).is_err());
    }
}
