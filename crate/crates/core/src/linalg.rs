//! Small complex least-squares helpers.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Relative threshold on `|R_ii| / ‖a_i‖` below which a column is treated as
/// linearly dependent on the preceding ones.
const RANK_TOL: f64 = 1e-9;

pub fn dot_conj(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn dot_plain(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sqr(a: &[Complex64]) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum()
}

/// Solves `min ‖y − A·g‖²` for the columns of `A` via a thin QR factorisation.
pub fn least_squares(columns: &[Vec<Complex64>], y: &[Complex64]) -> Result<Vec<Complex64>> {
    if columns.is_empty() {
        return Ok(Vec::new());
    }
    let n = y.len();
    let s = columns.len();
    if s > n {
        return Err(Error::RankDeficient);
    }
    for c in columns {
        if c.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: c.len(),
            });
        }
    }
    let a = DMatrix::from_fn(n, s, |i, j| columns[j][i]);
    let qr = a.qr();
    let r = qr.r();
    for (j, c) in columns.iter().enumerate() {
        let col_norm = norm_sqr(c).sqrt();
        if col_norm == 0.0 || r[(j, j)].norm() / col_norm < RANK_TOL {
            return Err(Error::RankDeficient);
        }
    }
    let qty = qr.q().adjoint() * DVector::from_column_slice(y);
    let g = r
        .solve_upper_triangular(&qty)
        .ok_or(Error::RankDeficient)?;
    Ok(g.iter().copied().collect())
}

/// `y − Σ g_s·a_s`.
pub fn residual(columns: &[Vec<Complex64>], gains: &[Complex64], y: &[Complex64]) -> Vec<Complex64> {
    let mut r = y.to_vec();
    for (c, g) in columns.iter().zip(gains) {
        for (rv, cv) in r.iter_mut().zip(c) {
            *rv -= g * cv;
        }
    }
    r
}
