//! TD(0) kernel: per-sample gradients, mean dynamics and the update maps.
//!
//! For a transition `xi = (s, s', r)` the semi-gradient is
//! `g(theta) = H(xi) theta + r phi(s)` with `H(xi) = phi(s) [gamma phi(s') - phi(s)]^T`,
//! which collapses to `phi(s) * delta` where `delta` is the TD error. The
//! kernel always evaluates it in that O(p) form.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::env::{MarkovRewardProcess, StationaryDistribution, TransitionSample};
use crate::error::{Error, Result};
use crate::featmap::FeatureMap;

/// Any parameter entry above this magnitude aborts the run.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// Stacked local estimates `Theta`, one agent per row.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentMatrix(DMatrix<f64>);

impl AgentMatrix {
    pub fn new(theta: DMatrix<f64>) -> Self {
        Self(theta)
    }

    pub fn zeros(num_agents: usize, dim: usize) -> Self {
        Self(DMatrix::zeros(num_agents, dim))
    }

    /// Every agent starts from `theta`.
    pub fn consensus(num_agents: usize, theta: &DVector<f64>) -> Self {
        Self(DMatrix::from_fn(num_agents, theta.len(), |_, j| theta[j]))
    }

    /// Rows drawn independently and uniformly from `[-1, 1]^p`.
    pub fn uniform<R: Rng + ?Sized>(num_agents: usize, dim: usize, rng: &mut R) -> Self {
        let unit = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
        // Filled row by row so the draw order does not depend on storage layout.
        let mut theta = DMatrix::zeros(num_agents, dim);
        for m in 0..num_agents {
            for j in 0..dim {
                theta[(m, j)] = unit.sample(rng);
            }
        }
        Self(theta)
    }

    pub fn num_agents(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn row(&self, m: usize) -> DVector<f64> {
        self.0.row(m).transpose()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    fn within_limit(&self) -> bool {
        self.0.iter().all(|x| x.abs() <= DIVERGENCE_LIMIT)
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimMismatch { expected, got });
    }
    Ok(())
}

/// `H(xi) = phi(s) [gamma phi(s') - phi(s)]^T`.
pub fn h_matrix(phi_s: &[f64], phi_next: &[f64], gamma: f64) -> Result<DMatrix<f64>> {
    check_len(phi_s.len(), phi_next.len())?;
    let p = phi_s.len();
    Ok(DMatrix::from_fn(p, p, |i, j| phi_s[i] * (gamma * phi_next[j] - phi_s[j])))
}

/// TD error `r + (gamma phi(s') - phi(s))^T theta`.
#[inline]
fn td_error(phi_s: &[f64], phi_next: &[f64], gamma: f64, theta: impl Iterator<Item = f64>, reward: f64) -> f64 {
    let mut acc = reward;
    for ((a, b), t) in phi_s.iter().zip(phi_next).zip(theta) {
        acc += (gamma * b - a) * t;
    }
    acc
}

fn sample_features<'f>(fm: &'f FeatureMap, sample: &TransitionSample<'_>) -> Result<(&'f [f64], &'f [f64])> {
    let n = fm.num_states();
    for state in [sample.s, sample.s_next] {
        if state >= n {
            return Err(Error::BadState { state, num_states: n });
        }
    }
    Ok((fm.feature(sample.s), fm.feature(sample.s_next)))
}

/// Local semi-gradient `g_m = H(xi) theta_m + r_m phi(s)` of agent `agent`.
pub fn local_gradient(
    theta_m: &DVector<f64>,
    agent: usize,
    sample: &TransitionSample<'_>,
    fm: &FeatureMap,
    gamma: f64,
) -> Result<DVector<f64>> {
    check_len(fm.dim(), theta_m.len())?;
    if agent >= sample.rewards.len() {
        return Err(Error::OutOfRange { index: agent, len: sample.rewards.len() });
    }
    let (phi_s, phi_next) = sample_features(fm, sample)?;
    let delta = td_error(phi_s, phi_next, gamma, theta_m.iter().copied(), sample.rewards[agent]);
    Ok(DVector::from_iterator(phi_s.len(), phi_s.iter().map(|f| f * delta)))
}

/// Stacked gradients `G(Theta, xi)`, row `m` being `g_m(theta_m)^T`.
pub fn stacked_gradient(theta: &AgentMatrix, sample: &TransitionSample<'_>, fm: &FeatureMap, gamma: f64) -> Result<AgentMatrix> {
    check_len(fm.dim(), theta.dim())?;
    check_len(theta.num_agents(), sample.rewards.len())?;
    let (phi_s, phi_next) = sample_features(fm, sample)?;
    let m_count = theta.num_agents();
    let mut g = DMatrix::zeros(m_count, theta.dim());
    for m in 0..m_count {
        let delta = td_error(phi_s, phi_next, gamma, theta.0.row(m).iter().copied(), sample.rewards[m]);
        for (j, f) in phi_s.iter().enumerate() {
            g[(m, j)] = f * delta;
        }
    }
    Ok(AgentMatrix(g))
}

/// Single-learner TD(0) step driven by the network-average reward.
pub fn centralized_step(
    theta: &DVector<f64>,
    sample: &TransitionSample<'_>,
    fm: &FeatureMap,
    gamma: f64,
    alpha: f64,
) -> Result<DVector<f64>> {
    check_len(fm.dim(), theta.len())?;
    let (phi_s, phi_next) = sample_features(fm, sample)?;
    let delta = td_error(phi_s, phi_next, gamma, theta.iter().copied(), sample.mean_reward());
    let step = alpha * delta;
    Ok(DVector::from_iterator(theta.len(), theta.iter().zip(phi_s).map(|(t, f)| t + step * f)))
}

/// One round of the decentralized algorithm: `Theta <- W Theta + alpha G(Theta, xi)`.
pub fn decentralized_step(
    theta: &AgentMatrix,
    w: &DMatrix<f64>,
    sample: &TransitionSample<'_>,
    fm: &FeatureMap,
    gamma: f64,
    alpha: f64,
) -> Result<AgentMatrix> {
    let mut out = AgentMatrix::zeros(theta.num_agents(), theta.dim());
    decentralized_step_into(theta, w, sample, fm, gamma, alpha, &mut out)?;
    Ok(out)
}

/// Allocation-free form of [`decentralized_step`] writing into `out`.
///
/// Reports divergence as `Diverged { step: 0 }`; callers that track the
/// iteration count substitute their own index.
pub fn decentralized_step_into(
    theta: &AgentMatrix,
    w: &DMatrix<f64>,
    sample: &TransitionSample<'_>,
    fm: &FeatureMap,
    gamma: f64,
    alpha: f64,
    out: &mut AgentMatrix,
) -> Result<()> {
    let m_count = theta.num_agents();
    check_len(fm.dim(), theta.dim())?;
    check_len(m_count, w.nrows())?;
    check_len(m_count, w.ncols())?;
    check_len(m_count, sample.rewards.len())?;
    check_len(m_count, out.num_agents())?;
    check_len(theta.dim(), out.dim())?;
    let (phi_s, phi_next) = sample_features(fm, sample)?;
    out.0.gemm(1.0, w, &theta.0, 0.0);
    for m in 0..m_count {
        let delta = td_error(phi_s, phi_next, gamma, theta.0.row(m).iter().copied(), sample.rewards[m]);
        let step = alpha * delta;
        for (j, f) in phi_s.iter().enumerate() {
            out.0[(m, j)] += step * f;
        }
    }
    if !out.within_limit() {
        return Err(Error::Diverged { step: 0 });
    }
    Ok(())
}

/// Network average `theta_bar = Theta^T 1 / M`.
pub fn average_params(theta: &AgentMatrix) -> DVector<f64> {
    theta.0.row_mean().transpose()
}

/// Stationary expectations of the TD quantities and the fixed point they define.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanDynamics {
    /// `Phi^T D (gamma P - I) Phi`.
    pub h_bar: DMatrix<f64>,
    /// `Phi^T D rbar'`.
    pub b_bar: DVector<f64>,
    /// Solution of `h_bar theta + b_bar = 0`.
    pub theta_star: DVector<f64>,
}

impl MeanDynamics {
    /// Mean direction `h_bar theta + b_bar`.
    pub fn mean_gradient(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.h_bar * theta + &self.b_bar
    }

    pub fn residual(&self) -> f64 {
        self.mean_gradient(&self.theta_star).norm()
    }
}

pub fn mean_dynamics(mrp: &MarkovRewardProcess, fm: &FeatureMap, pi: &StationaryDistribution) -> Result<MeanDynamics> {
    let n = mrp.num_states();
    check_len(n, fm.num_states())?;
    check_len(n, pi.probs().len())?;
    let phi = fm.phi();
    // Rows of Phi^T D.
    let phi_t_d = DMatrix::from_fn(fm.dim(), n, |i, s| phi[(s, i)] * pi.get(s));
    let drift = mrp.transitions() * mrp.gamma() - DMatrix::identity(n, n);
    let h_bar = &phi_t_d * drift * phi;
    let b_bar = &phi_t_d * mrp.expected_network_reward();
    let scale = h_bar.norm().max(1.0);
    let sigma_min = h_bar.clone().singular_values().min();
    if sigma_min <= 1e-14 * scale {
        return Err(Error::SingularH);
    }
    let theta_star = h_bar.clone().lu().solve(&(-&b_bar)).ok_or(Error::SingularH)?;
    Ok(MeanDynamics { h_bar, b_bar, theta_star })
}
