//! Experiment drivers built on the instance families.
//!
//! Every driver is deterministic in its inputs and seed. Ladder points are
//! evaluated in parallel and gathered in ladder order.

mod families;

pub use families::{
    empirical_sample, fig1_family, fig2_family, hnet_discretize, remark_exponent_family, square_pair, vertical_pair,
    RemarkInstance, SQUARE_RADIUS,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::barycenter::{
    barycenter_1d, barycenter_fixed_support, barycenter_penalized, barycenter_two_marginal, BarycenterResult,
    Penalty,
};
use crate::error::{Error, Result};
use crate::format::Table;
use crate::functionals::{dual_gap, strong_convexity_gap};
use crate::measures::{DiscreteMeasure, Domain, GridSpec, Population};
use crate::metrics::{fit_exponent, nested_w1_with, tv_distance, ExponentFit};
use crate::ot::{w2_exact_with, w2_plan_with, OtConfig};

/// Instance family driven by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    #[default]
    Fig1,
    Fig2,
    Remark,
}

/// Inputs for the Laplacian constant report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrhoInputs {
    /// Symmetric overlap masses between convex pieces.
    pub overlaps: Vec<Vec<f64>>,
    pub m_lower: f64,
    pub m_upper: f64,
    pub radius: f64,
    pub dim: usize,
}

impl Default for CrhoInputs {
    fn default() -> Self {
        CrhoInputs {
            overlaps: vec![vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 0.0]],
            m_lower: 1.0,
            m_upper: 1.0,
            radius: 1.0,
            dim: 2,
        }
    }
}

/// Parameters of an experiment run. Missing fields take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub family: Family,
    /// Perturbation ladder; `None` selects the family default.
    pub epsilons: Option<Vec<f64>>,
    pub alpha: f64,
    /// Side of the squares.
    pub a: f64,
    /// Cells per axis per square.
    pub resolution: usize,
    /// Grid points for the one-dimensional uniform law.
    pub grid_points: usize,
    pub sample_sizes: Vec<usize>,
    pub repeats: usize,
    pub lambdas: Vec<f64>,
    /// Cells per axis per square for the regularization-bias instance.
    pub bias_resolution: usize,
    pub penalty: Penalty,
    pub h_values: Vec<f64>,
    /// Random instances for the h-net and duality checks.
    pub instances: usize,
    /// Population for the empirical-barycenter run; `None` uses [`default_population`].
    pub population: Option<Population>,
    pub crho: CrhoInputs,
    pub seed: u64,
    /// Size cap `n * m` for exact transport.
    pub max_entries: usize,
    /// Allow perturbations outside the stated regime.
    pub force: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            family: Family::Fig1,
            epsilons: None,
            alpha: 1.0,
            a: 0.5,
            resolution: 64,
            grid_points: 1025,
            sample_sizes: vec![2, 4, 8, 16, 32],
            repeats: 50,
            lambdas: vec![1e-6, 1e-5, 1e-4, 1e-3, 3e-3, 1e-2],
            bias_resolution: 4,
            penalty: Penalty::Entropy,
            h_values: vec![0.05, 0.1, 0.2],
            instances: 50,
            population: None,
            crho: CrhoInputs::default(),
            seed: 0,
            max_entries: 100_000_000,
            force: false,
        }
    }
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn geometric_ladder(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|k| lo * (hi / lo).powf(k as f64 / (n - 1) as f64)).collect(),
    }
}

fn check_ladder<T: PartialOrd + Copy + Default + std::fmt::Display>(name: &str, v: &[T]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::InvalidInput(format!("{name} ladder is empty")));
    }
    if v.iter().any(|x| !(*x > T::default())) {
        return Err(Error::InvalidInput(format!("{name} ladder must be strictly positive")));
    }
    if v.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidInput(format!("{name} ladder must be sorted ascending")));
    }
    Ok(())
}

impl ExperimentConfig {
    /// The perturbation ladder in use.
    pub fn epsilon_ladder(&self) -> Vec<f64> {
        if let Some(e) = &self.epsilons {
            return e.clone();
        }
        match self.family {
            Family::Fig1 => vec![0.05, 0.1, 0.25, 0.5],
            Family::Fig2 => geometric_ladder(self.a / 40.0, self.a / 2.0, 8),
            Family::Remark => vec![0.02, 0.05, 0.1, 0.2],
        }
    }

    pub fn ot_config(&self) -> OtConfig {
        OtConfig { max_entries: self.max_entries }
    }

    pub fn validate(&self) -> Result<()> {
        check_ladder("epsilon", &self.epsilon_ladder())?;
        check_ladder("sample size", &self.sample_sizes)?;
        check_ladder("lambda", &self.lambdas)?;
        check_ladder("h", &self.h_values)?;
        if !(self.alpha > 0.0 && self.alpha.is_finite()) || !(self.a > 0.0 && self.a < 1.0) {
            return Err(Error::InvalidInput("need alpha > 0 and 0 < a < 1".into()));
        }
        if self.resolution == 0 || self.grid_points == 0 || self.bias_resolution == 0 || self.repeats == 0 {
            return Err(Error::InvalidInput("resolutions and repeat counts must be positive".into()));
        }
        Ok(())
    }
}

/// Result of a perturbation sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sweep {
    pub table: Table,
    /// Log-log fit of the response column against the perturbation column.
    pub fit: Option<ExponentFit>,
    /// Column names used for the fit, `(x, y)`.
    pub fit_columns: (String, String),
}

/// Exact barycenter when one is available: quantile averaging on the line,
/// displacement interpolation for two marginals.
pub fn exact_barycenter(p: &Population, config: &OtConfig) -> Result<BarycenterResult> {
    if p.domain().dim() == 1 {
        return barycenter_1d(p);
    }
    barycenter_two_marginal(p, config)
}

/// `W2` between the exact barycenters of two populations.
pub fn barycenter_distance(p: &Population, q: &Population, config: &OtConfig) -> Result<f64> {
    let (bp, bq) = (exact_barycenter(p, config)?, exact_barycenter(q, config)?);
    Ok(w2_plan_with(&bp.measure, &bq.measure, config)?.0)
}

/// Barycenter distance `W2(mu_P0, mu_Peps)` for the square family.
pub fn fig2_barycenter_distance(a: f64, alpha: f64, eps: f64, resolution: usize, config: &OtConfig) -> Result<f64> {
    let (p0, pe) = fig2_family(a, alpha, eps, resolution, true)?;
    barycenter_distance(&p0, &pe, config)
}

/// `(eps, W2(mu_P0, mu_Peps))` along a ladder of the square family, with the
/// barycenter of `P0` computed once.
pub fn fig2_distance_curve(
    a: f64,
    alpha: f64,
    ladder: &[f64],
    resolution: usize,
    config: &OtConfig,
) -> Result<Vec<(f64, f64)>> {
    let Some(&first) = ladder.first() else {
        return Ok(Vec::new());
    };
    let (p0, _) = fig2_family(a, alpha, first, resolution, true)?;
    let b0 = exact_barycenter(&p0, config)?.measure;
    ladder
        .par_iter()
        .map(|&eps| {
            let (_, pe) = fig2_family(a, alpha, eps, resolution, true)?;
            let be = exact_barycenter(&pe, config)?.measure;
            Ok((eps, w2_plan_with(&b0, &be, config)?.0))
        })
        .collect()
}

const STABILITY_COLUMNS: [&str; 7] = ["epsilon", "w2_bary", "nested_w1", "tv", "ratio_w1", "holder_w1", "holder_tv"];

/// `bp` is the barycenter of `p` when already known.
fn stability_row(
    eps: f64,
    p: &Population,
    q: &Population,
    bp: Option<&DiscreteMeasure>,
    config: &OtConfig,
) -> Result<Vec<f64>> {
    let w2 = match bp {
        Some(bp) => w2_plan_with(bp, &exact_barycenter(q, config)?.measure, config)?.0,
        None => barycenter_distance(p, q, config)?,
    };
    let w1 = nested_w1_with(p, q, config)?;
    let tv = tv_distance(p, q)?;
    Ok(vec![eps, w2, w1, tv, w2 / w1, w2 / w1.powf(1.0 / 6.0), w2 / tv.powf(0.2)])
}

/// Trace barycenter distance against population distance along the family's
/// perturbation ladder.
///
/// The square families report `epsilon, w2_bary, nested_w1, tv` and the ratios
/// `w2_bary / nested_w1`, `w2_bary / nested_w1^(1/6)`, `w2_bary / tv^(1/5)`,
/// with the exponent of `w2_bary` in `epsilon` fitted. The one-dimensional
/// family reports `epsilon, w2, gap, gap_over_eps2, gap_over_w2_4,
/// gap_over_w2_6` with the exponent of `gap` in `w2` fitted.
pub fn stability_sweep(config: &ExperimentConfig) -> Result<Sweep> {
    config.validate()?;
    let ladder = config.epsilon_ladder();
    let ot = config.ot_config();
    let (columns, fit_columns): (Vec<&str>, (&str, &str)) = match config.family {
        Family::Fig1 | Family::Fig2 => (STABILITY_COLUMNS.to_vec(), ("epsilon", "w2_bary")),
        Family::Remark => {
            (vec!["epsilon", "w2", "gap", "gap_over_eps2", "gap_over_w2_4", "gap_over_w2_6"], ("w2", "gap"))
        }
    };
    // The unperturbed square population does not depend on epsilon.
    let base_bary = match config.family {
        Family::Fig2 => {
            let p0 = fig2_family(config.a, config.alpha, ladder[0], config.resolution, config.force)?.0;
            Some(exact_barycenter(&p0, &ot)?.measure)
        }
        _ => None,
    };
    let rows = ladder
        .par_iter()
        .map(|&eps| match config.family {
            Family::Fig1 => {
                let (p, q) = fig1_family(eps, config.force)?;
                stability_row(eps, &p, &q, None, &ot)
            }
            Family::Fig2 => {
                let (p, q) = fig2_family(config.a, config.alpha, eps, config.resolution, config.force)?;
                stability_row(eps, &p, &q, base_bary.as_ref(), &ot)
            }
            Family::Remark => {
                let r = remark_exponent_family(eps, config.grid_points)?;
                let report = strong_convexity_gap(&r.rho, &r.mu0, &r.mu_eps, &r.potential)?;
                let (w, gap) = (report.w2_between_targets, report.gap);
                Ok(vec![eps, w, gap, gap / (eps * eps), gap / w.powi(4), gap / w.powi(6)])
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut table = Table::new(columns);
    for r in rows {
        table.push(r);
    }
    let xs = table.column(fit_columns.0).expect("fit column");
    let ys = table.column(fit_columns.1).expect("fit column");
    let pairs: Vec<(f64, f64)> = xs.into_iter().zip(ys).collect();
    let fit = fit_exponent(&pairs).ok();
    Ok(Sweep { table, fit, fit_columns: (fit_columns.0.into(), fit_columns.1.into()) })
}

/// Three measures on `[-1, 1]` used when no population is configured.
pub fn default_population() -> Population {
    let line = Domain::new(1.0, 1).expect("valid domain");
    let m = |xs: &[f64], ws: &[f64]| DiscreteMeasure::from_flat(xs.to_vec(), ws.to_vec(), line).expect("valid atoms");
    Population::new(vec![
        (0.5, m(&[-0.8, -0.3, 0.1], &[0.2, 0.5, 0.3])),
        (0.3, m(&[-0.1, 0.4, 0.6, 0.9], &[0.1, 0.4, 0.3, 0.2])),
        (0.2, m(&[-0.6, 0.7], &[0.5, 0.5])),
    ])
    .expect("valid population")
}

/// Plug-in estimate `P_m`: `m` marginals drawn from the entry law of `P`.
pub fn sample_population(p: &Population, m: usize, rng: &mut ChaCha8Rng) -> Result<Population> {
    let counts = families::categorical_counts(&p.lambdas(), m, rng)?;
    let entries = counts.into_iter().zip(p.entries()).filter(|(c, _)| *c > 0).map(|(c, e)| (c as f64, e.1.clone()));
    Population::new(entries.collect())
}

/// Distance from the barycenter of `P_m` to that of `P` for each `m`, averaged
/// over `repeats` draws. Repeat `r` uses the `r`-th stream of the seeded
/// generator for every `m`, so the sizes share random numbers.
///
/// Columns: `m, mean_w2, max_w2`.
pub fn empirical_barycenter_experiment(
    p: &Population,
    sample_sizes: &[usize],
    repeats: usize,
    seed: u64,
    config: &OtConfig,
) -> Result<Table> {
    check_ladder("sample size", sample_sizes)?;
    if repeats == 0 {
        return Err(Error::InvalidInput("repeats must be positive".into()));
    }
    let target = exact_barycenter(p, config)?;
    let rows = sample_sizes
        .par_iter()
        .map(|&m| {
            let dists = (0..repeats)
                .map(|r| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(r as u64);
                    let pm = sample_population(p, m, &mut rng)?;
                    let b = exact_barycenter(&pm, config)?;
                    Ok(w2_plan_with(&b.measure, &target.measure, config)?.0)
                })
                .collect::<Result<Vec<f64>>>()?;
            let mean = dists.iter().sum::<f64>() / repeats as f64;
            Ok(vec![m as f64, mean, dists.iter().fold(0.0, |a: f64, &b| a.max(b))])
        })
        .collect::<Result<Vec<_>>>()?;
    let mut t = Table::new(["m", "mean_w2", "max_w2"]);
    rows.into_iter().for_each(|r| t.push(r));
    Ok(t)
}

/// Grid carrying the exact barycenter of the square family at `eps = 0`: the
/// lattice of the cell midpoints averaged with `(0, +-1)`.
pub fn bias_grid(a: f64, resolution: usize) -> Result<GridSpec> {
    let h = a / resolution as f64;
    let bound = 0.5 * (1.0 + 0.5 * a - 0.5 * h);
    let nodes = ((2.0 + a) / h).round() as usize;
    let domain = Domain::new(SQUARE_RADIUS, 2)?;
    GridSpec::with_bounds(nodes, domain, Some(vec![(-bound, bound); 2]))
}

/// `W2(mu^lambda, mu^0)` between the penalized and unpenalized barycenters on
/// `grid` for each `lambda`.
///
/// Columns: `lambda, w2, objective, converged`.
pub fn regularization_bias_experiment(
    p: &Population,
    grid: &GridSpec,
    lambdas: &[f64],
    penalty: Penalty,
) -> Result<Table> {
    if lambdas.iter().any(|l| !(*l >= 0.0)) {
        return Err(Error::InvalidInput("lambdas must be nonnegative".into()));
    }
    let reference = barycenter_fixed_support(p, &grid.nodes())?;
    let rows = lambdas
        .par_iter()
        .map(|&l| {
            let b = barycenter_penalized(p, grid, l, penalty)?;
            let w = w2_plan_with(&b.measure, &reference.measure, &OtConfig::default())?.0;
            Ok(vec![l, w, b.objective, if b.converged { 1.0 } else { 0.0 }])
        })
        .collect::<Result<Vec<_>>>()?;
    let mut t = Table::new(["lambda", "w2", "objective", "converged"]);
    rows.into_iter().for_each(|r| t.push(r));
    Ok(t)
}

/// [`regularization_bias_experiment`] on the square family at `eps = 0` with
/// the configured side, exponent and bias resolution.
pub fn regularization_bias_default(config: &ExperimentConfig) -> Result<Table> {
    config.validate()?;
    let (p0, _) = fig2_family(config.a, config.alpha, 0.5 * config.a, config.bias_resolution, false)?;
    let grid = bias_grid(config.a, config.bias_resolution)?;
    regularization_bias_experiment(&p0, &grid, &config.lambdas, config.penalty)
}

/// Uniform random point in the ball of radius `r`.
pub fn random_in_ball(rng: &mut ChaCha8Rng, dim: usize, r: f64) -> Vec<f64> {
    loop {
        let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-r..r)).collect();
        if x.iter().map(|v| v * v).sum::<f64>() <= r * r {
            return x;
        }
    }
}

/// Random measure with `n` atoms in the unit disk and weights in `[0.1, 1)`.
pub fn random_planar_measure(rng: &mut ChaCha8Rng, n: usize) -> Result<DiscreteMeasure> {
    let domain = Domain::new(1.0, 2)?;
    let coords: Vec<f64> = (0..n).flat_map(|_| random_in_ball(rng, 2, 1.0)).collect();
    let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    DiscreteMeasure::from_flat(coords, weights, domain)
}

/// Exact `W2(rho, rho^h)` for `instances` random 50-atom measures and each `h`.
///
/// Columns: `instance, h, atoms, net_atoms, w2`.
pub fn hnet_experiment(h_values: &[f64], instances: usize, seed: u64) -> Result<Table> {
    check_ladder("h", h_values)?;
    let rows = (0..instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let rho = random_planar_measure(&mut rng, 50)?;
            h_values
                .iter()
                .map(|&h| {
                    let net = hnet_discretize(&rho, h)?;
                    let w = w2_exact_with(&rho, &net, &OtConfig::default())?.0;
                    Ok(vec![i as f64, h, rho.len() as f64, net.len() as f64, w])
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut t = Table::new(["instance", "h", "atoms", "net_atoms", "w2"]);
    rows.into_iter().flatten().for_each(|r| t.push(r));
    Ok(t)
}

/// Random population of 2 or 3 planar measures with at most 4 atoms each.
pub fn random_small_population(rng: &mut ChaCha8Rng) -> Result<Population> {
    let k = rng.random_range(2..=3);
    let entries = (0..k)
        .map(|_| {
            let n = rng.random_range(1..=4);
            Ok((rng.random_range(0.2..1.0), random_planar_measure(rng, n)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Population::new(entries)
}

/// Duality gap of the exact fixed-support barycenter on a 7 x 7 grid over
/// `[-1, 1]^2` for `instances` random populations.
///
/// Columns: `instance, objective, dual_gap`.
pub fn dual_check_experiment(instances: usize, seed: u64) -> Result<Table> {
    let domain = Domain::new(1.0, 2)?;
    let support = GridSpec::new(7, domain)?.nodes();
    let rows = (0..instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let p = random_small_population(&mut rng)?;
            let b = barycenter_fixed_support(&p, &support)?;
            Ok(vec![i as f64, b.objective, dual_gap(&p, &b)?])
        })
        .collect::<Result<Vec<_>>>()?;
    let mut t = Table::new(["instance", "objective", "dual_gap"]);
    rows.into_iter().for_each(|r| t.push(r));
    Ok(t)
}
