//! Discrete Legendre conjugates and c-transforms over finite supports.

use rayon::prelude::*;

use crate::measures::{dot, sq_dist};

/// `psi*(x) = max_y <x, y> - psi(y)` over a finite support, for each row of `eval`.
/// Points are flat row-major buffers of dimension `d`.
pub fn legendre_flat(psi: &[f64], support: &[f64], eval: &[f64], d: usize) -> Vec<f64> {
    assert_eq!(support.len(), psi.len() * d, "one value per support point");
    eval.par_chunks_exact(d)
        .map(|x| {
            support
                .chunks_exact(d)
                .zip(psi)
                .map(|(y, p)| dot(x, y) - p)
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

/// `phi^c(x) = min_y |x - y|^2 / 2 - phi(y)` over a finite support.
pub fn c_transform_flat(phi: &[f64], support: &[f64], eval: &[f64], d: usize) -> Vec<f64> {
    assert_eq!(support.len(), phi.len() * d, "one value per support point");
    eval.par_chunks_exact(d)
        .map(|x| {
            support
                .chunks_exact(d)
                .zip(phi)
                .map(|(y, p)| 0.5 * sq_dist(x, y) - p)
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// Index of a maximizer of `<x, y> - psi(y)`; ties go to the lowest index.
pub fn legendre_argmax(psi: &[f64], support: &[f64], x: &[f64]) -> usize {
    let d = x.len();
    let mut best = f64::NEG_INFINITY;
    let mut arg = 0;
    for (j, (y, p)) in support.chunks_exact(d).zip(psi).enumerate() {
        let v = dot(x, y) - p;
        if v > best {
            best = v;
            arg = j;
        }
    }
    arg
}

fn flatten(points: &[Vec<f64>]) -> (Vec<f64>, usize) {
    let d = points.first().map_or(0, Vec::len);
    let mut out = Vec::with_capacity(points.len() * d);
    for p in points {
        assert_eq!(p.len(), d, "points must share a dimension");
        out.extend_from_slice(p);
    }
    (out, d)
}

/// Legendre conjugate of `psi` (given on `support`) evaluated at `eval_points`.
pub fn legendre_conjugate(psi: &[f64], support: &[Vec<f64>], eval_points: &[Vec<f64>]) -> Vec<f64> {
    let (ys, d) = flatten(support);
    let (xs, dx) = flatten(eval_points);
    if eval_points.is_empty() {
        return Vec::new();
    }
    assert_eq!(d, dx, "dimension mismatch");
    legendre_flat(psi, &ys, &xs, d)
}

/// c-transform of `phi` (given on `target_support`) evaluated at `source_points`.
pub fn c_transform(phi: &[f64], target_support: &[Vec<f64>], source_points: &[Vec<f64>]) -> Vec<f64> {
    let (ys, d) = flatten(target_support);
    let (xs, dx) = flatten(source_points);
    if source_points.is_empty() {
        return Vec::new();
    }
    assert_eq!(d, dx, "dimension mismatch");
    c_transform_flat(phi, &ys, &xs, d)
}
