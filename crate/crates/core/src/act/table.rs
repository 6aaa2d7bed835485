//! Approximation-error table for GELU and ReLU on `[-16, 16]`.

use serde::Serialize;

use super::{cheb_interpolate, gelu, max_abs_error, relu, remez};
use crate::Result;

pub const TABLE_BOUND: f64 = 16.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ReferenceRow {
    pub function: &'static str,
    pub degree: usize,
    /// Published interpolation error and the tolerance it is checked with.
    pub interpolation: f64,
    pub tolerance: f64,
    /// Published minimax error (compared within 10%).
    pub minimax: f64,
}

pub const REFERENCE_ROWS: [ReferenceRow; 4] = [
    ReferenceRow { function: "gelu", degree: 27, interpolation: 0.0794, tolerance: 0.001, minimax: 0.0267 },
    ReferenceRow { function: "gelu", degree: 59, interpolation: 0.0002, tolerance: 0.00005, minimax: 0.0001 },
    ReferenceRow { function: "relu", degree: 27, interpolation: 0.2862, tolerance: 0.003, minimax: 0.0866 },
    ReferenceRow { function: "relu", degree: 59, interpolation: 0.1334, tolerance: 0.002, minimax: 0.0391 },
];

pub const MINIMAX_RELATIVE_TOLERANCE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TableEntry {
    pub reference: ReferenceRow,
    pub interpolation: f64,
    pub interpolation_ok: bool,
    pub minimax: Option<f64>,
    pub minimax_ok: Option<bool>,
}

pub fn function_by_name(name: &str) -> Option<fn(f64) -> f64> {
    match name {
        "gelu" => Some(gelu),
        "relu" => Some(relu),
        _ => None,
    }
}

/// Measures every reference row; minimax columns only when `with_remez`.
pub fn reproduce_table(grid: usize, with_remez: bool) -> Result<Vec<TableEntry>> {
    REFERENCE_ROWS
        .iter()
        .map(|&row| {
            let f = function_by_name(row.function).expect("reference rows name known functions");
            let poly = cheb_interpolate::<f64>(f, row.degree, TABLE_BOUND);
            let err = max_abs_error(&poly, f, grid)?;
            let minimax = if with_remez {
                Some(remez(f, row.degree, TABLE_BOUND, 20_001, 60)?.error)
            } else {
                None
            };
            Ok(TableEntry {
                reference: row,
                interpolation: err,
                interpolation_ok: (err - row.interpolation).abs() <= row.tolerance,
                minimax,
                minimax_ok: minimax
                    .map(|e| (e - row.minimax).abs() <= MINIMAX_RELATIVE_TOLERANCE * row.minimax),
            })
        })
        .collect()
}
