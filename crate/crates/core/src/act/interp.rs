use std::f64::consts::PI;

use super::ChebPoly;
use crate::{Error, Result, Scalar};

/// Grid size used for approximation-error reports.
pub const DEFAULT_GRID: usize = 100_000;

/// Degree-`n` interpolant of `f` on `[-bound, bound]` at the first-kind
/// Chebyshev nodes, with coefficients from the discrete cosine sum.
pub fn cheb_interpolate<T: Scalar>(f: impl Fn(f64) -> f64, n: usize, bound: f64) -> ChebPoly<T> {
    let np = (n + 1) as f64;
    let samples: Vec<f64> = (0..=n)
        .map(|j| f(bound * (PI * (j as f64 + 0.5) / np).cos()))
        .collect();
    let coeffs = (0..=n)
        .map(|k| {
            let sum: f64 = samples
                .iter()
                .enumerate()
                .map(|(j, &y)| y * (PI * k as f64 * (j as f64 + 0.5) / np).cos())
                .sum();
            let c = 2.0 * sum / np;
            T::of(if k == 0 { c / 2.0 } else { c })
        })
        .collect();
    ChebPoly::new(coeffs, T::of(bound)).expect("positive bound and n+1 coefficients")
}

/// Largest `|poly(x) - f(x)|` over `points` evenly spaced points of
/// `[-bound, bound]`, endpoints included.
pub fn max_abs_error<T: Scalar>(poly: &ChebPoly<T>, f: impl Fn(f64) -> f64, points: usize) -> Result<f64> {
    if points < 2 {
        return Err(Error::Invalid(format!("need at least 2 grid points, got {points}")));
    }
    let p64 = poly.cast::<f64>();
    let b = p64.bound();
    Ok((0..points)
        .map(|i| {
            let x = -b + 2.0 * b * i as f64 / (points - 1) as f64;
            (p64.eval(x) - f(x)).abs()
        })
        .fold(0.0, f64::max))
}
