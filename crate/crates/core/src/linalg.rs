//! Small dense linear-algebra helpers shared by the Gaussian and GP code.
//!
//! Symmetric positive-definite matrices are factored with Cholesky; when the
//! plain factorization fails a jitter ladder adds `scale * {1e-10 .. 1e-6}` to
//! the diagonal, where `scale` is the mean diagonal magnitude.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Matrices with a larger condition number are treated as singular.
pub const CONDITION_LIMIT: f64 = 1e12;

pub const JITTER_LADDER: [f64; 5] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest `|a_ij - a_ji|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(symmetrize(m)).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Spectral condition number of a symmetric matrix; infinite when it is not
/// positive definite.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    let ev = symmetric_eigenvalues(m);
    let (lo, hi) = (ev[0], ev[ev.len() - 1]);
    if lo <= 0.0 || !lo.is_finite() || !hi.is_finite() {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Cholesky with the jitter ladder. Returns the factor and the jitter that was
/// added (0 when none was needed).
pub fn cholesky_jittered(a: &DMatrix<f64>, what: &str) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what.to_string()));
    }
    if let Some(c) = Cholesky::new(a.clone()) {
        return Ok((c, 0.0));
    }
    let n = a.nrows();
    let scale = if n == 0 {
        1.0
    } else {
        let mean_diag = a.diagonal().iter().map(|v| v.abs()).sum::<f64>() / n as f64;
        if mean_diag > 0.0 {
            mean_diag
        } else {
            1.0
        }
    };
    for rung in JITTER_LADDER {
        let jitter = rung * scale;
        let mut b = a.clone();
        for i in 0..n {
            b[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(b) {
            return Ok((c, jitter));
        }
    }
    Err(Error::Singular {
        what: what.to_string(),
        condition: condition_number(a),
    })
}

/// Rejects matrices whose condition number exceeds [`CONDITION_LIMIT`].
pub fn check_conditioning(a: &DMatrix<f64>, what: &str) -> Result<()> {
    let condition = condition_number(a);
    if condition > CONDITION_LIMIT {
        return Err(Error::Singular {
            what: what.to_string(),
            condition,
        });
    }
    Ok(())
}

/// Inverse of a symmetric positive-definite matrix, symmetrized.
pub fn spd_inverse(a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    check_conditioning(a, what)?;
    let (chol, _) = cholesky_jittered(a, what)?;
    Ok(symmetrize(&chol.inverse()))
}

/// Solves `a x = b` for symmetric positive-definite `a`.
pub fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    check_conditioning(a, what)?;
    let (chol, _) = cholesky_jittered(a, what)?;
    Ok(chol.solve(b))
}

/// Relative Frobenius error `||a - b|| / ||b||`.
pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jitter_rescues_semidefinite() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let (_, jitter) = cholesky_jittered(&a, "a").unwrap();
        assert!(jitter > 0.0 && jitter <= 1e-6);
    }

    #[test]
    fn rejects_ill_conditioned() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1e-13]));
        match spd_inverse(&a, "cov") {
            Err(Error::Singular { what, .. }) => assert_eq!(what, "cov"),
            other => panic!("expected singular error, got {other:?}"),
        }
    }

    #[test]
    fn inverse_round_trip() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let inv = spd_inverse(&a, "a").unwrap();
        let eye = &a * &inv;
        assert!((eye - DMatrix::identity(3, 3)).norm() < 1e-12);
    }
}
