//! Eigenvalue helpers for general (nonsymmetric) matrices.
//!
//! nalgebra's real Schur iteration has no iteration limit by default and can
//! cycle forever on some inputs, so every call here is capped and falls back to
//! a Gelfand-formula estimate of the spectral radius.

use nalgebra::linalg::Schur;
use nalgebra::{Complex, DMatrix};

/// Schur sweeps allowed per dimension before giving up.
const SCHUR_ITER_PER_DIM: usize = 200;
/// Repeated squarings in the Gelfand estimate, i.e. `||A^k||^{1/k}` at `k = 2^64`.
const GELFAND_SQUARINGS: usize = 64;

/// All eigenvalues, or `None` when the Schur iteration does not converge.
pub(crate) fn eigenvalues(m: &DMatrix<f64>) -> Option<Vec<Complex<f64>>> {
    if m.is_empty() {
        return Some(Vec::new());
    }
    let cap = SCHUR_ITER_PER_DIM * m.nrows().max(1);
    let schur = Schur::try_new(m.clone(), f64::EPSILON, cap)?;
    Some(schur.complex_eigenvalues().iter().copied().collect())
}

/// `max |lambda|` over the spectrum of a square matrix.
pub(crate) fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    match eigenvalues(m) {
        Some(eigs) => eigs.iter().map(|z| z.norm()).fold(0.0, f64::max),
        None => {
            log::debug!("Schur iteration did not converge on a {}x{} matrix, using the Gelfand estimate", m.nrows(), m.ncols());
            gelfand_radius(m)
        }
    }
}

/// `lim ||A^k||^{1/k}` by normalized repeated squaring; the log of the scale is
/// carried separately so nothing overflows.
pub(crate) fn gelfand_radius(m: &DMatrix<f64>) -> f64 {
    let norm = m.norm();
    if norm == 0.0 || !norm.is_finite() {
        return if norm == 0.0 { 0.0 } else { f64::NAN };
    }
    let mut b = m / norm;
    // ||A^(2^j)|| = exp(ln_scale) * ||b||
    let mut ln_scale = norm.ln();
    let mut power = 1.0f64;
    for _ in 0..GELFAND_SQUARINGS {
        let sq = &b * &b;
        let s = sq.norm();
        if s == 0.0 {
            return 0.0;
        }
        ln_scale = 2.0 * ln_scale + s.ln();
        power *= 2.0;
        b = sq / s;
    }
    (ln_scale / power).exp()
}
