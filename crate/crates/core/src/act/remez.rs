use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::ChebPoly;
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct RemezResult {
    pub poly: ChebPoly<f64>,
    /// Max error on the final search grid.
    pub error: f64,
    pub iterations: usize,
}

fn cheb_row(t: f64, n: usize) -> Vec<f64> {
    let mut row = vec![1.0; n + 1];
    if n >= 1 {
        row[1] = t;
    }
    for k in 2..=n {
        row[k] = 2.0 * t * row[k - 1] - row[k - 2];
    }
    row
}

/// Alternating extrema of `err` over the grid: one point per run of equal
/// sign, thinned to `want` points while keeping the signs alternating.
fn pick_extrema(grid: &[f64], err: &[f64], want: usize) -> Option<Vec<f64>> {
    let mut picks: Vec<(usize, f64)> = Vec::new();
    for (i, &e) in err.iter().enumerate() {
        if e == 0.0 {
            continue;
        }
        match picks.last_mut() {
            Some(last) if last.1.signum() == e.signum() => {
                if e.abs() > last.1.abs() {
                    *last = (i, e);
                }
            }
            _ => picks.push((i, e)),
        }
    }
    while picks.len() > want {
        let (weakest, _) = picks
            .iter()
            .enumerate()
            .min_by(|a, b| a.1 .1.abs().total_cmp(&b.1 .1.abs()))
            .expect("nonempty");
        if weakest == 0 || weakest == picks.len() - 1 {
            picks.remove(weakest);
        } else {
            let drop = if picks[weakest - 1].1.abs() < picks[weakest + 1].1.abs() {
                weakest - 1
            } else {
                weakest + 1
            };
            picks.remove(weakest.max(drop));
            picks.remove(weakest.min(drop));
        }
    }
    (picks.len() == want).then(|| picks.iter().map(|&(i, _)| grid[i]).collect())
}

/// Minimax polynomial of degree `n` for `f` on `[-bound, bound]` by the
/// Remez exchange, searching extrema on a grid of `grid_points` points.
pub fn remez(f: impl Fn(f64) -> f64, n: usize, bound: f64, grid_points: usize, max_iter: usize) -> Result<RemezResult> {
    let grid: Vec<f64> = (0..grid_points)
        .map(|i| -1.0 + 2.0 * i as f64 / (grid_points - 1) as f64)
        .collect();
    let fg: Vec<f64> = grid.iter().map(|&t| f(bound * t)).collect();
    let rows: Vec<Vec<f64>> = grid.iter().map(|&t| cheb_row(t, n)).collect();
    let size = n + 2;
    let mut reference: Vec<f64> = (0..size).map(|i| -(PI * i as f64 / (n + 1) as f64).cos()).collect();
    let mut best: Option<RemezResult> = None;
    for iter in 1..=max_iter {
        let mut a = DMatrix::zeros(size, size);
        let mut rhs = DVector::zeros(size);
        for (i, &t) in reference.iter().enumerate() {
            for (k, v) in cheb_row(t, n).into_iter().enumerate() {
                a[(i, k)] = v;
            }
            a[(i, n + 1)] = if i % 2 == 0 { 1.0 } else { -1.0 };
            rhs[i] = f(bound * t);
        }
        let sol = a
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Invalid("singular Remez system".into()))?;
        let coeffs: Vec<f64> = sol.iter().take(n + 1).copied().collect();
        let level = sol[n + 1].abs();
        let err: Vec<f64> = rows
            .iter()
            .zip(&fg)
            .map(|(row, &y)| row.iter().zip(&coeffs).map(|(a, b)| a * b).sum::<f64>() - y)
            .collect();
        let max_err = err.iter().fold(0.0f64, |m, e| m.max(e.abs()));
        if best.as_ref().is_none_or(|b| max_err < b.error) {
            best = Some(RemezResult {
                poly: ChebPoly::new(coeffs, bound)?,
                error: max_err,
                iterations: iter,
            });
        }
        if max_err - level <= 1e-6 * max_err {
            break;
        }
        match pick_extrema(&grid, &err, size) {
            Some(next) => reference = next,
            None => break,
        }
    }
    best.ok_or_else(|| Error::Invalid("Remez made no iterations".into()))
}
