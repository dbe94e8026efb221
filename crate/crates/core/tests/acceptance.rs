//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use barystab::barycenter::barycenter_1d;
use barystab::experiments::{
    default_population, dual_check_experiment, empirical_barycenter_experiment, fig1_family, fig2_distance_curve,
    geometric_ladder, hnet_experiment, random_planar_measure, regularization_bias_default, remark_exponent_family,
    barycenter_distance, ExperimentConfig,
};
use barystab::functionals::{compute_c_rho, convex_support_constant, strong_convexity_gap, variance_inequality_check};
use barystab::measures::{sq_dist, DiscreteMeasure, Domain, GridSpec, Population};
use barystab::metrics::{fit_exponent, nested_w1};
use barystab::ot::{w2_exact, w2_squared, w2_squared_1d, OtConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 20_241;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rng_for(stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    rng.set_stream(stream);
    rng
}

fn line_measure(rng: &mut ChaCha8Rng, max_atoms: usize) -> DiscreteMeasure {
    let n = rng.random_range(1..=max_atoms);
    let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let ws: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    DiscreteMeasure::from_flat(xs, ws, Domain::new(1.0, 1).unwrap()).unwrap()
}

fn random_measure(rng: &mut ChaCha8Rng, dim: usize, max_atoms: usize) -> DiscreteMeasure {
    if dim == 1 {
        line_measure(rng, max_atoms)
    } else {
        let n = rng.random_range(1..=max_atoms);
        random_planar_measure(rng, n).unwrap()
    }
}

fn fig1() -> Outcome {
    let cfg = OtConfig::default();
    let mut worst = (0.0f64, f64::NEG_INFINITY);
    for eps in [0.05, 0.1, 0.25, 0.5] {
        let (p, q) = fig1_family(eps, false).map_err(|e| e.to_string())?;
        let w2 = barycenter_distance(&p, &q, &cfg).map_err(|e| e.to_string())?;
        let w1 = nested_w1(&p, &q).map_err(|e| e.to_string())?;
        worst.0 = worst.0.max((w2 - 1.0).abs());
        worst.1 = worst.1.max(w1 - eps);
    }
    check(worst.0 <= 1e-8 && worst.1 <= 1e-9, format!("max |W2 - 1| = {:.2e}, max (W1 - eps) = {:.2e}", worst.0, worst.1))
}

fn remark() -> Outcome {
    let mut worst = (0.0f64, 0.0f64, 0.0f64);
    for eps in [0.02, 0.05, 0.1, 0.2] {
        let r = remark_exponent_family(eps, 1025).map_err(|e| e.to_string())?;
        if r.rho.len() < 512 {
            return Err(format!("only {} grid points", r.rho.len()));
        }
        let w2sq = w2_squared(&r.mu0, &r.mu_eps).map_err(|e| e.to_string())?;
        let gap = strong_convexity_gap(&r.rho, &r.mu0, &r.mu_eps, &r.potential).map_err(|e| e.to_string())?.gap;
        worst.0 = worst.0.max((w2sq - eps).abs());
        worst.1 = worst.1.max((gap / (0.25 * eps * eps) - 1.0).abs());
        worst.2 = worst.2.max((gap / (w2sq * w2sq) - 0.25).abs());
    }
    check(
        worst.0 <= 1e-10 && worst.1 <= 0.02 && worst.2 <= 0.01,
        format!("max |W2^2 - eps| = {:.2e}, max rel gap err = {:.4}, max |gap/W2^4 - 1/4| = {:.4}", worst.0, worst.1, worst.2),
    )
}

fn fig2() -> Outcome {
    let a = 0.5;
    let ladder = geometric_ladder(a / 40.0, a / 2.0, 8);
    let cfg = OtConfig { max_entries: 100_000_000 };
    let mut ok = true;
    let mut parts = Vec::new();
    for alpha in [0.25, 0.5, 1.0] {
        let curve = fig2_distance_curve(a, alpha, &ladder, 64, &cfg).map_err(|e| e.to_string())?;
        let fit = fit_exponent(&curve).map_err(|e| e.to_string())?;
        ok &= (fit.slope - alpha).abs() <= 0.15 && fit.r_squared >= 0.98;
        parts.push(format!("alpha {alpha}: slope {:.4} r2 {:.4}", fit.slope, fit.r_squared));
    }
    check(ok, parts.join("; "))
}

fn lipschitz_1d() -> Outcome {
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    for case in 0..200 {
        let mut rng = rng_for(case);
        let population = |rng: &mut ChaCha8Rng| {
            let k = rng.random_range(1..=5);
            let entries = (0..k).map(|_| (rng.random_range(0.1..1.0), line_measure(rng, 20))).collect();
            Population::new(entries).unwrap()
        };
        let (p, q) = (population(&mut rng), population(&mut rng));
        let (bp, bq) = (barycenter_1d(&p).unwrap(), barycenter_1d(&q).unwrap());
        let w2 = w2_squared_1d(&bp.measure, &bq.measure).unwrap().max(0.0).sqrt();
        let w1 = nested_w1(&p, &q).map_err(|e| e.to_string())?;
        worst = worst.max(w2 - w1);
        if w2 > w1 + 1e-6 {
            violations += 1;
        }
    }
    check(violations == 0, format!("{violations} violations in 200 pairs, max (W2 - W1) = {worst:.3e}"))
}

fn strong_duality() -> Outcome {
    let t = dual_check_experiment(50, SEED).map_err(|e| e.to_string())?;
    let gaps = t.column("dual_gap").unwrap();
    let worst = gaps.iter().fold(0.0f64, |a, &b| a.max(b));
    check(gaps.len() == 50 && worst <= 1e-6, format!("max dual gap {worst:.3e} over {} instances", gaps.len()))
}

fn positivity() -> Outcome {
    let mut worst = f64::INFINITY;
    for case in 0..500 {
        let mut rng = rng_for(1000 + case);
        let dim = 1 + (case as usize % 2);
        let rho = random_measure(&mut rng, dim, 8);
        let mu = random_measure(&mut rng, dim, 8);
        let nu = random_measure(&mut rng, dim, 8);
        let (_, _, pair) = w2_exact(&rho, &mu).map_err(|e| e.to_string())?;
        let gap = strong_convexity_gap(&rho, &mu, &nu, &pair).map_err(|e| e.to_string())?.gap;
        worst = worst.min(gap);
    }
    check(worst >= -1e-8, format!("min gap {worst:.3e} over 500 triples"))
}

/// `|y|^2 / 2` plus a few random sine modes of small amplitude.
fn smooth_potential(rng: &mut ChaCha8Rng, support: &[Vec<f64>]) -> Vec<f64> {
    let dim = support[0].len();
    let modes: Vec<(f64, Vec<f64>, f64)> = (0..3)
        .map(|_| {
            let freq: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
            (rng.random_range(-0.05..0.05), freq, rng.random_range(0.0..std::f64::consts::TAU))
        })
        .collect();
    support
        .iter()
        .map(|y| {
            let quad: f64 = y.iter().map(|v| 0.5 * v * v).sum();
            quad + modes
                .iter()
                .map(|(amp, f, ph)| amp * (y.iter().zip(f).map(|(a, b)| a * b).sum::<f64>() + ph).sin())
                .sum::<f64>()
        })
        .collect()
}

fn variance_inequality() -> Outcome {
    let mut violations = 0;
    let mut errors = 0;
    let mut tightest = f64::INFINITY;
    for case in 0..100u64 {
        let dim = 1 + (case % 2) as usize;
        let domain = Domain::new(1.0, dim).unwrap();
        // rho uniform on a grid over the cube of half side `s`, a convex set in the unit ball.
        let s = if dim == 1 { 1.0 } else { 0.7 };
        let grid = GridSpec::with_bounds(if dim == 1 { 101 } else { 21 }, domain, Some(vec![(-s, s); dim])).unwrap();
        let nodes = grid.nodes();
        let rho = DiscreteMeasure::uniform(&nodes, domain).unwrap();
        let support = GridSpec::with_bounds(if dim == 1 { 41 } else { 11 }, domain, Some(vec![(-1.0, 1.0); dim]))
            .unwrap()
            .nodes();
        let diam = 2.0 * s * (dim as f64).sqrt();
        let c = convex_support_constant(dim, 1.0, diam, 1.0, 1.0);
        let mut rng = rng_for(5000 + case);
        let psi = smooth_potential(&mut rng, &support);
        let psi_tilde = smooth_potential(&mut rng, &support);
        match variance_inequality_check(&rho, &psi, &psi_tilde, &support, c) {
            Ok(r) => {
                if !r.satisfied {
                    violations += 1;
                }
                if r.gap > 0.0 {
                    tightest = tightest.min(r.gap / r.lhs_variance.max(f64::MIN_POSITIVE));
                }
            }
            Err(_) => errors += 1,
        }
    }
    check(
        violations == 0 && errors == 0,
        format!("{violations} violations, {errors} errors in 100 pairs, min gap / (c Var) = {tightest:.3}"),
    )
}

fn laplacian_constants() -> Outcome {
    let mut worst = 0.0f64;
    for w in [0.05, 0.3, 1.0, 2.5] {
        let r = compute_c_rho(&[vec![0.0, w], vec![w, 0.0]], 1.0, 1.0, 1.0, 2).map_err(|e| e.to_string())?;
        worst = worst.max((r.lambda2 - 2.0 * w).abs());
    }
    let path = vec![vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 0.0]];
    let r = compute_c_rho(&path, 1.0, 1.0, 1.0, 2).map_err(|e| e.to_string())?;
    worst = worst.max((r.lambda2 - 1.0).abs());
    let mut single = 0.0f64;
    for (dim, radius, m, big_m) in [(1, 1.0, 1.0, 1.0), (2, 2.0, 0.5, 1.5), (3, 0.7, 0.2, 0.9)] {
        let got = compute_c_rho(&[vec![0.0]], m, big_m, radius, dim).map_err(|e| e.to_string())?.c_rho;
        let formula = convex_support_constant(dim, radius, radius, m, big_m);
        // Closed form with the bracket N^2 + 2 N^3 / lambda2 equal to 1.
        let direct = 1.0
            / (std::f64::consts::E
                * (dim + 1) as f64
                * 2f64.powi(dim as i32 + 1)
                * radius
                * radius
                * (big_m / m).powi(2));
        single = single.max(((got - formula) / formula).abs()).max(((got - direct) / direct).abs());
    }
    check(
        worst <= 1e-9 && single <= 4.0 * f64::EPSILON,
        format!("max |lambda2 - expected| = {worst:.2e}, single-set rel err = {single:.2e}"),
    )
}

fn hnet() -> Outcome {
    let t = hnet_experiment(&[0.05, 0.1, 0.2], 50, SEED).map_err(|e| e.to_string())?;
    let (hs, ws) = (t.column("h").unwrap(), t.column("w2").unwrap());
    let violations = hs.iter().zip(&ws).filter(|(h, w)| w > h).count();
    let ratio = hs.iter().zip(&ws).map(|(h, w)| w / h).fold(0.0f64, f64::max);
    check(violations == 0 && ws.len() == 150, format!("{violations} violations in {} runs, max W2 / h = {ratio:.3}", ws.len()))
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for k in 0..n {
            let mut q = p.clone();
            q.insert(k, n - 1);
            out.push(q);
        }
    }
    out
}

/// Minimum of `sum pi_ij c_ij` over the vertices of the transportation
/// polytope, found by trying every set of `n + m - 1` cells as a basis.
fn vertex_enumeration(a: &[f64], b: &[f64], cost: &dyn Fn(usize, usize) -> f64) -> f64 {
    let (n, m) = (a.len(), b.len());
    let cells: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).collect();
    let size = n + m - 1;
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << cells.len()) {
        if mask.count_ones() as usize != size {
            continue;
        }
        let mut basis: Vec<(usize, usize)> = (0..cells.len()).filter(|k| mask >> k & 1 == 1).map(|k| cells[k]).collect();
        let (mut ra, mut rb) = (a.to_vec(), b.to_vec());
        let mut total = 0.0;
        let mut feasible = true;
        // Peel cells that are alone in their row or column.
        while !basis.is_empty() {
            let lone = (0..basis.len()).find_map(|t| {
                let (i, j) = basis[t];
                if basis.iter().filter(|c| c.0 == i).count() == 1 {
                    Some((t, true))
                } else if basis.iter().filter(|c| c.1 == j).count() == 1 {
                    Some((t, false))
                } else {
                    None
                }
            });
            let Some((t, by_row)) = lone else {
                feasible = false;
                break;
            };
            let (i, j) = basis.swap_remove(t);
            let x = if by_row { ra[i] } else { rb[j] };
            if x < -1e-12 {
                feasible = false;
                break;
            }
            ra[i] -= x;
            rb[j] -= x;
            total += x * cost(i, j);
        }
        let balanced = ra.iter().chain(&rb).all(|r| r.abs() < 1e-9);
        if feasible && balanced {
            best = best.min(total);
        }
    }
    best
}

fn normalized(m: &DiscreteMeasure) -> Vec<f64> {
    let s: f64 = m.weights().iter().sum();
    m.weights().iter().map(|w| w / s).collect()
}

fn oracles() -> Outcome {
    let mut worst_perm = 0.0f64;
    for case in 0..100u64 {
        let mut rng = rng_for(9000 + case);
        let dim = 1 + (case % 2) as usize;
        let n = rng.random_range(1..=6);
        let domain = Domain::new(1.0, dim).unwrap();
        let pts = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..n).map(|_| (0..dim).map(|_| rng.random_range(-0.7..0.7)).collect()).collect()
        };
        let (xs, ys) = (pts(&mut rng), pts(&mut rng));
        let rho = DiscreteMeasure::uniform(&xs, domain).unwrap();
        let mu = DiscreteMeasure::uniform(&ys, domain).unwrap();
        let brute = permutations(n)
            .iter()
            .map(|s| s.iter().enumerate().map(|(i, &j)| sq_dist(&xs[i], &ys[j])).sum::<f64>() / n as f64)
            .fold(f64::INFINITY, f64::min);
        let got = w2_exact(&rho, &mu).map_err(|e| e.to_string())?.1.cost;
        worst_perm = worst_perm.max((got - brute).abs());
    }
    let mut worst_nested = 0.0f64;
    for case in 0..50u64 {
        let mut rng = rng_for(9500 + case);
        let dim = 1 + (case % 2) as usize;
        let population = |rng: &mut ChaCha8Rng| {
            let k = rng.random_range(1..=3);
            let entries = (0..k).map(|_| (rng.random_range(0.1..1.0), random_measure(rng, dim, 3))).collect();
            Population::new(entries).unwrap()
        };
        let (p, q) = (population(&mut rng), population(&mut rng));
        let inner = |r: &DiscreteMeasure, s: &DiscreteMeasure| {
            let c = |i: usize, j: usize| sq_dist(r.point(i), s.point(j));
            vertex_enumeration(&normalized(r), &normalized(s), &c).max(0.0).sqrt()
        };
        let dist: Vec<Vec<f64>> =
            p.measures().map(|r| q.measures().map(|s| inner(r, s)).collect()).collect();
        let (lp, lq) = (p.lambdas(), q.lambdas());
        let (sp, sq): (f64, f64) = (lp.iter().sum(), lq.iter().sum());
        let lp: Vec<f64> = lp.iter().map(|l| l / sp).collect();
        let lq: Vec<f64> = lq.iter().map(|l| l / sq).collect();
        let brute = vertex_enumeration(&lp, &lq, &|i, j| dist[i][j]);
        let got = nested_w1(&p, &q).map_err(|e| e.to_string())?;
        worst_nested = worst_nested.max((got - brute).abs());
    }
    check(
        worst_perm <= 1e-12 && worst_nested <= 1e-9,
        format!("max permutation diff {worst_perm:.2e}, max nested diff {worst_nested:.2e}"),
    )
}

fn trends() -> Outcome {
    let cfg = ExperimentConfig::default();
    let t = empirical_barycenter_experiment(&default_population(), &[2, 4, 8, 16, 32], 50, SEED, &cfg.ot_config())
        .map_err(|e| e.to_string())?;
    let means = t.column("mean_w2").unwrap();
    let inversions: Vec<f64> = means.windows(2).filter(|w| w[1] > w[0]).map(|w| w[1] / w[0] - 1.0).collect();
    let empirical_ok = inversions.len() <= 1 && inversions.iter().all(|&r| r <= 0.05);

    let bias = regularization_bias_default(&cfg).map_err(|e| e.to_string())?;
    let (lambdas, w2) = (bias.column("lambda").unwrap(), bias.column("w2").unwrap());
    let ascending = lambdas.windows(2).all(|w| w[0] < w[1]);
    let monotone = w2.windows(2).all(|w| w[1] >= w[0] - 1e-4);
    let converged = bias.column("converged").unwrap().iter().all(|&c| c == 1.0);
    let vanishing = w2[0] <= w2[w2.len() - 1] && w2[0] <= 1e-2;
    check(
        empirical_ok && ascending && monotone && converged && vanishing,
        format!(
            "mean W2 by m {:?}; bias W2 by lambda {:?}",
            means.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>(),
            w2.iter().map(|v| format!("{v:.2e}")).collect::<Vec<_>>()
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, Duration, fn() -> Outcome); 11] = [
        ("1 two-point barycenter jump", Duration::from_secs(1), fig1),
        ("2 one-dimensional gap exponent", Duration::from_secs(10), remark),
        ("3 square family exponent", Duration::from_secs(300), fig2),
        ("4 1D Lipschitz stability", Duration::from_secs(30), lipschitz_1d),
        ("5 strong duality", Duration::from_secs(60), strong_duality),
        ("6 gap positivity", Duration::from_secs(120), positivity),
        ("7 variance inequality", Duration::from_secs(120), variance_inequality),
        ("8 Laplacian constants", Duration::from_secs(60), laplacian_constants),
        ("9 h-net bound", Duration::from_secs(60), hnet),
        ("10 oracle equivalence", Duration::from_secs(60), oracles),
        ("11 statistical trends", Duration::from_secs(600), trends),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, limit, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.starts_with(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let (pass, detail) = match outcome {
            Ok(d) if elapsed <= limit => (true, d),
            Ok(d) => (false, format!("{d}; over the {:.0} s limit", limit.as_secs_f64())),
            Err(d) => (false, d),
        };
        failed += usize::from(!pass);
        println!("{} [{name}] {:.2}s: {detail}", if pass { "PASS" } else { "FAIL" }, elapsed.as_secs_f64());
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
