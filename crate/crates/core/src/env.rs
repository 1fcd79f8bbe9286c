//! Policy-marginalized Markov reward process shared by all agents.
//!
//! The fixed policy is folded into a single transition matrix `P`; each agent
//! sees its own deterministic reward tensor `R_m(s, s')`.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::error::{Error, Result};

/// Row sums of `P` must equal one within this tolerance.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Lower clamp for the estimated mixing rate.
pub const RHO_FLOOR: f64 = 1e-6;
/// Total-variation values below this are treated as fully mixed when fitting `nu0`.
const TV_FLOOR: f64 = 1e-12;
/// Above this many states the stationary law is found by power iteration.
const DIRECT_SOLVE_MAX_STATES: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvConfig {
    pub num_states: usize,
    pub num_agents: usize,
    pub r_max: f64,
    pub gamma: f64,
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_states == 0 {
            return Err(Error::config("num_states", "must be positive"));
        }
        if self.num_agents == 0 {
            return Err(Error::config("num_agents", "must be positive"));
        }
        if !(self.r_max > 0.0 && self.r_max.is_finite()) {
            return Err(Error::config("r_max", "must be a positive finite number"));
        }
        validate_gamma(self.gamma)
    }
}

fn validate_gamma(gamma: f64) -> Result<()> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::config("gamma", format!("must lie in [0, 1), got {gamma}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarkovRewardProcess {
    transitions: DMatrix<f64>,
    /// Flattened `[s][s'][m]` so the rewards of one transition are contiguous.
    rewards: Vec<f64>,
    num_agents: usize,
    gamma: f64,
    r_max: f64,
}

impl MarkovRewardProcess {
    /// Builds an MRP from an explicit transition matrix and one reward matrix per agent.
    ///
    /// Checks stochasticity, reward range and discount. Ergodicity is checked
    /// separately (see [`MarkovRewardProcess::is_ergodic`]) so that degenerate
    /// chains can still be represented and rejected by the operations that need it.
    pub fn new(
        transitions: DMatrix<f64>,
        rewards: &[DMatrix<f64>],
        gamma: f64,
        r_max: f64,
    ) -> Result<Self> {
        let n = transitions.nrows();
        if n == 0 || transitions.ncols() != n {
            return Err(Error::config("transitions", "must be a non-empty square matrix"));
        }
        if rewards.is_empty() {
            return Err(Error::config("rewards", "need at least one agent"));
        }
        if !(r_max > 0.0 && r_max.is_finite()) {
            return Err(Error::config("r_max", "must be a positive finite number"));
        }
        validate_gamma(gamma)?;
        for s in 0..n {
            let row = transitions.row(s);
            if row.iter().any(|&p| !p.is_finite() || p < 0.0) {
                return Err(Error::config("transitions", format!("row {s} has a negative or non-finite entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::config("transitions", format!("row {s} sums to {sum}")));
            }
        }
        let num_agents = rewards.len();
        let mut flat = vec![0.0; n * n * num_agents];
        for (m, r) in rewards.iter().enumerate() {
            if r.nrows() != n || r.ncols() != n {
                return Err(Error::DimMismatch { expected: n, got: r.nrows() });
            }
            for s in 0..n {
                for t in 0..n {
                    let v = r[(s, t)];
                    if !(0.0..=r_max).contains(&v) {
                        return Err(Error::config("rewards", format!("R_{m}({s},{t}) = {v} outside [0, r_max]")));
                    }
                    flat[(s * n + t) * num_agents + m] = v;
                }
            }
        }
        Ok(Self { transitions, rewards: flat, num_agents, gamma, r_max })
    }

    /// Random ergodic MRP: strictly positive normalized rows, rewards uniform on `[0, r_max]`.
    pub fn generate<R: Rng + ?Sized>(config: &EnvConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let n = config.num_states;
        let mut transitions = DMatrix::zeros(n, n);
        for s in 0..n {
            // 1 - U[0,1) lies in (0, 1], so every entry is strictly positive.
            let row: Vec<f64> = (0..n).map(|_| 1.0 - rng.random::<f64>()).collect();
            let total: f64 = row.iter().sum();
            for (t, w) in row.into_iter().enumerate() {
                transitions[(s, t)] = w / total;
            }
        }
        let rewards: Vec<DMatrix<f64>> = (0..config.num_agents)
            .map(|_| DMatrix::from_fn(n, n, |_, _| config.r_max * rng.random::<f64>()))
            .collect();
        Self::new(transitions, &rewards, config.gamma, config.r_max)
    }

    pub fn num_states(&self) -> usize {
        self.transitions.nrows()
    }

    pub fn num_agents(&self) -> usize {
        self.num_agents
    }

    pub fn transitions(&self) -> &DMatrix<f64> {
        &self.transitions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn reward(&self, agent: usize, s: usize, s_next: usize) -> f64 {
        self.rewards_for(s, s_next)[agent]
    }

    /// Rewards of every agent for the transition `s -> s_next`.
    pub fn rewards_for(&self, s: usize, s_next: usize) -> &[f64] {
        let n = self.num_states();
        let start = (s * n + s_next) * self.num_agents;
        &self.rewards[start..start + self.num_agents]
    }

    /// Network-average reward of the transition `s -> s_next`.
    pub fn mean_reward(&self, s: usize, s_next: usize) -> f64 {
        mean(self.rewards_for(s, s_next))
    }

    /// Expected one-step network-average reward from each state.
    pub fn expected_network_reward(&self) -> DVector<f64> {
        let n = self.num_states();
        DVector::from_fn(n, |s, _| (0..n).map(|t| self.transitions[(s, t)] * self.mean_reward(s, t)).sum())
    }

    /// Irreducible and aperiodic, decided on the support graph of `P`.
    pub fn is_ergodic(&self) -> bool {
        is_primitive(&self.transitions)
    }

    fn check_state(&self, state: usize) -> Result<()> {
        if state >= self.num_states() {
            return Err(Error::BadState { state, num_states: self.num_states() });
        }
        Ok(())
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Strong connectivity plus period one of the directed support graph.
fn is_primitive(p: &DMatrix<f64>) -> bool {
    let n = p.nrows();
    let succ: Vec<Vec<usize>> = (0..n).map(|s| (0..n).filter(|&t| p[(s, t)] > 0.0).collect()).collect();
    let mut pred = vec![Vec::new(); n];
    for (s, ts) in succ.iter().enumerate() {
        for &t in ts {
            pred[t].push(s);
        }
    }
    let levels = bfs_levels(&succ);
    if levels.iter().any(Option::is_none) || bfs_levels(&pred).iter().any(Option::is_none) {
        return false;
    }
    // The period is the gcd of level(u) + 1 - level(v) over all edges u -> v.
    let mut period = 0usize;
    for (u, ts) in succ.iter().enumerate() {
        for &v in ts {
            let (lu, lv) = (levels[u].unwrap(), levels[v].unwrap());
            period = gcd(period, (lu + 1).abs_diff(lv));
        }
    }
    period == 1
}

fn bfs_levels(adj: &[Vec<usize>]) -> Vec<Option<usize>> {
    let mut levels = vec![None; adj.len()];
    let mut queue = VecDeque::from([0]);
    levels[0] = Some(0);
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if levels[v].is_none() {
                levels[v] = Some(levels[u].unwrap() + 1);
                queue.push_back(v);
            }
        }
    }
    levels
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 { a } else { gcd(b, a % b) }
}

/// Stationary law `pi` of an ergodic chain, with `D = diag(pi)` implied.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDistribution {
    pi: DVector<f64>,
}

impl StationaryDistribution {
    pub fn probs(&self) -> &DVector<f64> {
        &self.pi
    }

    pub fn get(&self, s: usize) -> f64 {
        self.pi[s]
    }

    /// `||pi P - pi||_inf`.
    pub fn residual(&self, p: &DMatrix<f64>) -> f64 {
        (p.tr_mul(&self.pi) - &self.pi).amax()
    }
}

pub fn stationary_distribution(mrp: &MarkovRewardProcess) -> Result<StationaryDistribution> {
    if !mrp.is_ergodic() {
        return Err(Error::NotErgodic);
    }
    let p = mrp.transitions();
    let n = p.nrows();
    let pi = if n <= DIRECT_SOLVE_MAX_STATES {
        // (P^T - I) pi = 0 with the last equation replaced by sum(pi) = 1.
        let mut a = p.transpose() - DMatrix::identity(n, n);
        a.row_mut(n - 1).fill(1.0);
        let mut rhs = DVector::zeros(n);
        rhs[n - 1] = 1.0;
        a.lu().solve(&rhs).ok_or(Error::NotErgodic)?
    } else {
        power_iteration(p)
    };
    let mut pi = pi.map(|x| x.max(0.0));
    let total = pi.sum();
    pi /= total;
    Ok(StationaryDistribution { pi })
}

fn power_iteration(p: &DMatrix<f64>) -> DVector<f64> {
    let n = p.nrows();
    let mut pi = DVector::from_element(n, 1.0 / n as f64);
    for _ in 0..1_000_000 {
        let next = p.tr_mul(&pi);
        let delta = (&next - &pi).amax();
        pi = next;
        if delta <= 1e-12 {
            break;
        }
    }
    pi
}

/// Exact network value function `v_G = (I - gamma P)^{-1} rbar_G`.
pub fn exact_value_oracle(mrp: &MarkovRewardProcess) -> DVector<f64> {
    let n = mrp.num_states();
    let a = DMatrix::identity(n, n) - mrp.transitions() * mrp.gamma();
    a.lu()
        .solve(&mrp.expected_network_reward())
        .expect("I - gamma P is nonsingular for gamma < 1")
}

/// Bellman residual `max_s |v(s) - sum_s' P(s,s')[rbar(s,s') + gamma v(s')]|`.
pub fn bellman_residual(mrp: &MarkovRewardProcess, v: &DVector<f64>) -> f64 {
    let rhs = mrp.expected_network_reward() + mrp.transitions() * v * mrp.gamma();
    (v - rhs).amax()
}

/// Geometric mixing envelope `TV(law of s(j) | s0, pi) <= nu0 * rho^j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixingParams {
    pub nu0: f64,
    pub rho: f64,
    /// Number of steps over which `nu0` was fitted.
    pub horizon: usize,
}

/// `10 * ceil(1 / (1 - rho))`.
pub fn default_mixing_horizon(rho: f64) -> usize {
    (10.0 * (1.0 / (1.0 - rho)).ceil()) as usize
}

/// Second-largest eigenvalue modulus of a stochastic matrix (0 for a single state).
pub fn second_largest_eigenvalue_modulus(p: &DMatrix<f64>) -> f64 {
    if p.nrows() < 2 {
        return 0.0;
    }
    let Some(eigs) = crate::spectral::eigenvalues(p) else {
        // Deflate the unit eigenvalue: the spectrum of P - 1 pi^T is that of P with 1 replaced by 0.
        let pi = power_iteration(p);
        let deflated = p - DVector::from_element(p.nrows(), 1.0) * pi.transpose();
        return crate::spectral::gelfand_radius(&deflated);
    };
    let unit = eigs
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - 1.0).norm().total_cmp(&(b.1 - 1.0).norm()))
        .map(|(i, _)| i)
        .unwrap();
    eigs.iter()
        .enumerate()
        .filter(|&(i, _)| i != unit)
        .map(|(_, z)| z.norm())
        .fold(0.0, f64::max)
}

/// Estimate `(nu0, rho)`: `rho` is the clamped SLEM of `P`, `nu0` the smallest
/// envelope constant (at least 1) covering every start state over `horizon` steps.
pub fn mixing_parameters(mrp: &MarkovRewardProcess, horizon: usize) -> Result<MixingParams> {
    if horizon < 2 {
        return Err(Error::config("horizon", "must be at least 2"));
    }
    let pi = stationary_distribution(mrp)?;
    let p = mrp.transitions();
    let rho = second_largest_eigenvalue_modulus(p).max(RHO_FLOOR);
    let n = p.nrows();
    let mut law = DMatrix::<f64>::identity(n, n);
    let mut nu0: f64 = 1.0;
    for j in 1..=horizon {
        law = &law * p;
        for s0 in 0..n {
            let tv = total_variation(law.row(s0).iter().copied(), pi.probs().iter().copied());
            if tv > TV_FLOOR {
                nu0 = nu0.max(tv / rho.powi(j as i32));
            }
        }
    }
    Ok(MixingParams { nu0, rho, horizon })
}

pub(crate) fn total_variation(a: impl Iterator<Item = f64>, b: impl Iterator<Item = f64>) -> f64 {
    0.5 * a.zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// One observed transition `(s, s', {r_m})`; the reward slice is borrowed from the MRP.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionSample<'a> {
    pub s: usize,
    pub s_next: usize,
    pub rewards: &'a [f64],
}

impl TransitionSample<'_> {
    pub fn mean_reward(&self) -> f64 {
        mean(self.rewards)
    }
}

/// Draws transitions either i.i.d. from `pi(s) P(s, s')` or along a single trajectory.
#[derive(Debug, Clone)]
pub struct TransitionSampler<'a> {
    mrp: &'a MarkovRewardProcess,
    stationary: WeightedIndex<f64>,
    rows: Vec<WeightedIndex<f64>>,
}

impl<'a> TransitionSampler<'a> {
    pub fn new(mrp: &'a MarkovRewardProcess, pi: &StationaryDistribution) -> Result<Self> {
        let n = mrp.num_states();
        if pi.probs().len() != n {
            return Err(Error::DimMismatch { expected: n, got: pi.probs().len() });
        }
        let stationary = WeightedIndex::new(pi.probs().iter().copied())
            .map_err(|e| Error::config("stationary distribution", e.to_string()))?;
        let rows = (0..n)
            .map(|s| {
                WeightedIndex::new(mrp.transitions().row(s).iter().copied())
                    .map_err(|e| Error::config("transitions", e.to_string()))
            })
            .collect::<Result<_>>()?;
        Ok(Self { mrp, stationary, rows })
    }

    pub fn mrp(&self) -> &'a MarkovRewardProcess {
        self.mrp
    }

    /// `s ~ pi`, `s' ~ P(s, .)`.
    pub fn sample_iid<R: Rng + ?Sized>(&self, rng: &mut R) -> TransitionSample<'a> {
        let s = self.stationary.sample(rng);
        self.transition_from(s, rng)
    }

    /// Next transition of a trajectory currently at `state`.
    pub fn step_markov<R: Rng + ?Sized>(&self, state: usize, rng: &mut R) -> Result<TransitionSample<'a>> {
        self.mrp.check_state(state)?;
        Ok(self.transition_from(state, rng))
    }

    fn transition_from<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> TransitionSample<'a> {
        let s_next = self.rows[s].sample(rng);
        TransitionSample { s, s_next, rewards: self.mrp.rewards_for(s, s_next) }
    }
}
