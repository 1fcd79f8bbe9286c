//! Feature matrix `Phi` (one row `phi(s)` per state).

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{Error, Result};

pub const NORM_TOL: f64 = 1e-12;
/// Smallest singular value `Phi` must exceed to count as full column rank.
pub const RANK_TOL: f64 = 1e-8;
pub const MAX_FEATURE_ATTEMPTS: usize = 10;

/// Validated features: every row has norm at most one and the columns are independent.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    phi: DMatrix<f64>,
    /// Row-major copy of `phi` so a state's features are one contiguous slice.
    rows: Vec<f64>,
    state_dim: usize,
    projection: DMatrix<f64>,
    raw_states: DMatrix<f64>,
}

impl FeatureMap {
    /// Cosine features `phi(s) = cos(A s) / sqrt(p)` over raw states drawn uniformly from `[-1, 1]^state_dim`.
    ///
    /// The projection `A` (standard normal, `p x state_dim`) is redrawn up to
    /// [`MAX_FEATURE_ATTEMPTS`] times until `Phi` has full column rank.
    pub fn cosine<R: Rng + ?Sized>(num_states: usize, state_dim: usize, p: usize, rng: &mut R) -> Result<Self> {
        if num_states == 0 {
            return Err(Error::config("num_states", "must be positive"));
        }
        if state_dim == 0 {
            return Err(Error::config("state_dim", "must be positive"));
        }
        if p == 0 || p > num_states {
            return Err(Error::config("dim", format!("must lie in 1..={num_states}, got {p}")));
        }
        let unit = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
        let raw_states = DMatrix::from_fn(num_states, state_dim, |_, _| unit.sample(rng));
        let scale = 1.0 / (p as f64).sqrt();
        let mut sigma_min = 0.0;
        for _ in 0..MAX_FEATURE_ATTEMPTS {
            let projection = DMatrix::from_fn(p, state_dim, |_, _| -> f64 { StandardNormal.sample(rng) });
            let phi = (&raw_states * projection.transpose()).map(|x| x.cos() * scale);
            let report = validate_features(&phi);
            if report.passed() {
                return Ok(Self::assemble(phi, state_dim, projection, raw_states));
            }
            sigma_min = report.min_singular_value;
            log::debug!("cosine features rank deficient (sigma_min = {sigma_min:e}), redrawing projection");
        }
        Err(Error::RankDeficient { attempts: MAX_FEATURE_ATTEMPTS, sigma_min })
    }

    /// Exact representation `Phi = I`, so `p = |S|`.
    pub fn identity(num_states: usize) -> Result<Self> {
        if num_states == 0 {
            return Err(Error::config("num_states", "must be positive"));
        }
        let eye = DMatrix::identity(num_states, num_states);
        Ok(Self::assemble(eye.clone(), num_states, eye.clone(), eye))
    }

    /// Wraps an explicit feature matrix, rejecting it unless both invariants hold.
    pub fn from_matrix(phi: DMatrix<f64>) -> Result<Self> {
        let report = validate_features(&phi);
        if !report.norm_ok {
            return Err(Error::config("features", format!("row norm {} exceeds 1", report.max_row_norm)));
        }
        if !report.rank_ok {
            return Err(Error::RankDeficient { attempts: 1, sigma_min: report.min_singular_value });
        }
        let n = phi.nrows();
        Ok(Self::assemble(phi, n, DMatrix::identity(n, n), DMatrix::identity(n, n)))
    }

    fn assemble(phi: DMatrix<f64>, state_dim: usize, projection: DMatrix<f64>, raw_states: DMatrix<f64>) -> Self {
        let rows = phi.transpose().as_slice().to_vec();
        Self { phi, rows, state_dim, projection, raw_states }
    }

    pub fn num_states(&self) -> usize {
        self.phi.nrows()
    }

    pub fn dim(&self) -> usize {
        self.phi.ncols()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn projection(&self) -> &DMatrix<f64> {
        &self.projection
    }

    pub fn raw_states(&self) -> &DMatrix<f64> {
        &self.raw_states
    }

    /// `phi(s)` as a contiguous slice.
    pub fn feature(&self, s: usize) -> &[f64] {
        let p = self.dim();
        &self.rows[s * p..(s + 1) * p]
    }

    pub fn validate(&self) -> ValidationReport {
        validate_features(&self.phi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationReport {
    pub max_row_norm: f64,
    pub min_singular_value: f64,
    pub norm_ok: bool,
    pub rank_ok: bool,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.norm_ok && self.rank_ok
    }
}

pub fn validate_features(phi: &DMatrix<f64>) -> ValidationReport {
    let max_row_norm = phi.row_iter().map(|r| r.norm()).fold(0.0, f64::max);
    let min_singular_value = if phi.nrows() < phi.ncols() || phi.is_empty() {
        0.0
    } else {
        phi.clone().singular_values().min()
    };
    ValidationReport {
        max_row_norm,
        min_singular_value,
        norm_ok: max_row_norm <= 1.0 + NORM_TOL,
        rank_ok: min_singular_value > RANK_TOL,
    }
}
