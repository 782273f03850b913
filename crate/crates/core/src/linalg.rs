//! Small dense helpers for the symmetric positive-definite systems that show
//! up in the Fisher and acceleration code.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Condition-number ceiling beyond which a block is reported as degenerate.
pub const MAX_CONDITION: f64 = 1e12;

/// Condition number of `m` after symmetric diagonal equilibration
/// (`D^-1/2 m D^-1/2` with `D = diag(m)`). Infinite when the matrix is not
/// positive definite.
pub fn scaled_condition(m: &DMatrix<f64>) -> f64 {
    match equilibrate(m) {
        Some((s, _)) => condition(&s),
        None => f64::INFINITY,
    }
}

fn equilibrate(m: &DMatrix<f64>) -> Option<(DMatrix<f64>, Vec<f64>)> {
    let n = m.nrows();
    let mut d = Vec::with_capacity(n);
    for i in 0..n {
        let v = m[(i, i)];
        if !(v > 0.0 && v.is_finite()) {
            return None;
        }
        d.push(1.0 / v.sqrt());
    }
    let s = DMatrix::from_fn(n, n, |i, j| m[(i, j)] * d[i] * d[j]);
    Some((s, d))
}

fn condition(s: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(s.clone());
    let min = eig.eigenvalues.min();
    let max = eig.eigenvalues.max();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Errors with `DegenerateGeometry` when the equilibrated condition number
/// of `m` exceeds `max_condition`.
pub fn check_condition(m: &DMatrix<f64>, block: &'static str, max_condition: f64) -> Result<()> {
    let cond = scaled_condition(m);
    if cond <= max_condition {
        Ok(())
    } else {
        Err(Error::DegenerateGeometry {
            block,
            condition: cond,
            matrix: m.clone(),
        })
    }
}

/// Inverse of a symmetric positive-definite matrix, refusing blocks whose
/// equilibrated condition number exceeds `max_condition`.
pub fn spd_inverse(m: &DMatrix<f64>, block: &'static str, max_condition: f64) -> Result<DMatrix<f64>> {
    let degenerate = |condition: f64| Error::DegenerateGeometry {
        block,
        condition,
        matrix: m.clone(),
    };
    let (s, d) = equilibrate(m).ok_or_else(|| degenerate(f64::INFINITY))?;
    let cond = condition(&s);
    if !(cond <= max_condition) {
        return Err(degenerate(cond));
    }
    let chol = Cholesky::new(s).ok_or_else(|| degenerate(f64::INFINITY))?;
    let inv = chol.inverse();
    let n = m.nrows();
    let mut out = DMatrix::from_fn(n, n, |i, j| inv[(i, j)] * d[i] * d[j]);
    // exact symmetry
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (out[(i, j)] + out[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

/// `max |a_ij - a_ji|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in 0..i {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}
