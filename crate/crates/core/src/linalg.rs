//! Small dense helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};

/// Jitter multipliers tried in order; each is scaled by `max(1, mean |diag|)`.
const JITTER_LADDER: [f64; 6] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// Cholesky factorization of a symmetric positive definite matrix, adding
/// escalating diagonal jitter when the plain factorization fails.
pub fn cholesky_jittered(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::validation(format!(
            "cholesky of non-square {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("matrix has non-finite entries"));
    }
    let scale = if n == 0 {
        1.0
    } else {
        (m.diagonal().iter().map(|d| d.abs()).sum::<f64>() / n as f64).max(1.0)
    };
    for jitter in JITTER_LADDER {
        let mut candidate = m.clone();
        if jitter > 0.0 {
            for i in 0..n {
                candidate[(i, i)] += jitter * scale;
            }
        }
        if let Some(chol) = Cholesky::new(candidate) {
            return Ok(chol);
        }
    }
    Err(Error::numerical(format!(
        "matrix is not positive definite even after jitter {:e}",
        JITTER_LADDER[JITTER_LADDER.len() - 1] * scale
    )))
}

/// log |M| from a Cholesky factor.
pub fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Average `m` with its transpose, removing round-off asymmetry.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_spd_needs_no_jitter() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 3.0]);
        let chol = cholesky_jittered(&m).unwrap();
        assert!((log_det(&chol) - 8.0f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn rank_deficient_is_rescued_by_jitter() {
        // Exactly collinear Gram matrix.
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(Cholesky::new(m.clone()).is_none());
        assert!(cholesky_jittered(&m).is_ok());
    }

    #[test]
    fn indefinite_fails() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(cholesky_jittered(&m), Err(Error::Numerical(_))));
    }
}
