//! Closed-form constants and finite-sample bounds.
//!
//! The Markov-sampling constants grow like `3^K_G` and routinely leave the
//! range of `f64`, so `c5`, `c6` and every bound built from them are carried
//! as [`LogReal`] values.

use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::ops::{Add, Div, Mul};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::env::{
    default_mixing_horizon, mixing_parameters, second_largest_eigenvalue_modulus, MarkovRewardProcess, MixingParams,
    RHO_FLOOR,
};
use crate::error::{Error, Result};
use crate::featmap::FeatureMap;
use crate::network::CommNetwork;
use crate::tdcore::{h_matrix, MeanDynamics};

/// Search cap for the bias-averaging horizon `K_G`.
pub const K_G_CAP: u64 = 1_000_000;
pub const BISECTION_MAX_ITER: usize = 200;
pub const BISECTION_TOL: f64 = 1e-10;

/// Nonnegative real stored as its natural logarithm (`-inf` encodes zero).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct LogReal(f64);

impl LogReal {
    pub const ZERO: Self = Self(f64::NEG_INFINITY);
    pub const ONE: Self = Self(0.0);

    pub fn new(x: f64) -> Self {
        assert!(x >= 0.0, "LogReal requires a nonnegative value, got {x}");
        Self(x.ln())
    }

    pub fn from_ln(ln: f64) -> Self {
        assert!(!ln.is_nan(), "LogReal from NaN logarithm");
        Self(ln)
    }

    pub fn ln(self) -> f64 {
        self.0
    }

    /// Plain value; `inf` once it exceeds the `f64` range.
    pub fn value(self) -> f64 {
        self.0.exp()
    }

    pub fn powf(self, k: f64) -> Self {
        if k == 0.0 {
            Self::ONE
        } else {
            Self(self.0 * k)
        }
    }

    pub fn min(self, other: Self) -> Self {
        if self <= other { self } else { other }
    }

    pub fn max(self, other: Self) -> Self {
        if self >= other { self } else { other }
    }
}

impl Add for LogReal {
    type Output = Self;

    fn add(self, rhs: Self) -> Self {
        let (hi, lo) = if self.0 >= rhs.0 { (self.0, rhs.0) } else { (rhs.0, self.0) };
        if lo == f64::NEG_INFINITY {
            return Self(hi);
        }
        Self(hi + (lo - hi).exp().ln_1p())
    }
}

impl Mul for LogReal {
    type Output = Self;

    fn mul(self, rhs: Self) -> Self {
        if self.0 == f64::NEG_INFINITY || rhs.0 == f64::NEG_INFINITY {
            return Self::ZERO;
        }
        Self(self.0 + rhs.0)
    }
}

impl Div for LogReal {
    type Output = Self;

    fn div(self, rhs: Self) -> Self {
        assert!(rhs.0 != f64::NEG_INFINITY, "LogReal division by zero");
        if self.0 == f64::NEG_INFINITY {
            return Self::ZERO;
        }
        Self(self.0 - rhs.0)
    }
}

impl fmt::Display for LogReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = self.value();
        if v == 0.0 && self.0 == f64::NEG_INFINITY {
            return write!(f, "0");
        }
        if v.is_finite() && v > 0.0 {
            return write!(f, "{v:e}");
        }
        let log10 = self.0 / std::f64::consts::LN_10;
        let mut exponent = log10.floor();
        let mut mantissa = 10f64.powf(log10 - exponent);
        if mantissa >= 9.9999995 {
            mantissa /= 10.0;
            exponent += 1.0;
        }
        write!(f, "{mantissa:.6}e{}", exponent as i64)
    }
}

/// Quantity of the form `1 - gap` with `gap` kept in log form, so powers stay
/// accurate when `gap` is far below machine epsilon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NearOne {
    ln_gap: f64,
}

impl NearOne {
    pub fn from_ln_gap(ln_gap: f64) -> Self {
        Self { ln_gap }
    }

    pub fn gap(self) -> f64 {
        self.ln_gap.exp()
    }

    pub fn ln_gap(self) -> f64 {
        self.ln_gap
    }

    /// Rounded `f64` value (equal to 1.0 when the gap is below half an ulp).
    pub fn value(self) -> f64 {
        1.0 - self.gap()
    }

    /// Strictly inside `(0, 1)`, decided on the exact gap.
    pub fn in_unit_interval(self) -> bool {
        self.ln_gap.is_finite() && self.ln_gap < 0.0
    }

    /// `(1 - gap)^k` for any real `k`.
    pub fn powf(self, k: f64) -> LogReal {
        LogReal::from_ln(k * (-self.gap()).ln_1p())
    }
}

/// `ln(1 - e^x)` for `x < 0`.
fn ln_1m_exp(x: f64) -> f64 {
    if x > -std::f64::consts::LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}

/// Step-size independent spectral and mixing summary of a model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConstants {
    pub num_agents: usize,
    pub gamma: f64,
    pub r_max: f64,
    /// Signed second-largest eigenvalue of `W`.
    pub lambda2_w: f64,
    /// Largest modulus among the non-leading eigenvalues of `W`.
    pub slem_w: f64,
    /// Extreme eigenvalues of the symmetric part of `H_bar`.
    pub lambda_max_h: f64,
    pub lambda_min_h: f64,
    pub beta: f64,
    pub mixing: MixingParams,
    pub theta_star_norm: f64,
}

impl ModelConstants {
    pub fn compute(mrp: &MarkovRewardProcess, fm: &FeatureMap, net: &CommNetwork, mean: &MeanDynamics) -> Result<Self> {
        let (lambda_max_h, lambda_min_h) = h_bar_eigs(mean)?;
        let rho = second_largest_eigenvalue_modulus(mrp.transitions()).max(RHO_FLOOR);
        let mixing = mixing_parameters(mrp, default_mixing_horizon(rho))?;
        Ok(Self {
            num_agents: mrp.num_agents(),
            gamma: mrp.gamma(),
            r_max: mrp.r_max(),
            lambda2_w: net.lambda2(),
            slem_w: net.slem(),
            lambda_max_h,
            lambda_min_h,
            beta: spectral_beta(mrp, fm, mean),
            mixing,
            theta_star_norm: mean.theta_star.norm(),
        })
    }

    /// Consensus window `(1 - lambda2) / 4`.
    pub fn alpha_max_consensus(&self) -> f64 {
        (1.0 - self.lambda2_w) / 4.0
    }

    /// `lambda2` is the true contraction factor of `W` off consensus.
    pub fn lambda2_is_contraction(&self) -> bool {
        crate::network::lambda2_is_contraction(self.num_agents, self.lambda2_w, self.slem_w)
    }

    /// Bias-envelope constant `C` with `sigma_k(K) = C rho^k / K`.
    fn sigma_scale(&self) -> f64 {
        let MixingParams { nu0, rho, .. } = self.mixing;
        (1.0 + self.gamma) * nu0 / (1.0 - rho) * (2.0 * self.theta_star_norm + self.r_max).max(1.0)
    }

    /// `(sigma_k(K), sigma(K))`.
    pub fn sigma(&self, k: u64, horizon: u64) -> (f64, f64) {
        let sigma = self.sigma_scale() / horizon as f64;
        (sigma * self.mixing.rho.powf(k as f64), sigma)
    }

    /// Upper bound on the conditional second moment of the averaged gradient noise.
    pub fn iid_variance_bound(&self, avg_err_sq: f64) -> f64 {
        let b2 = self.beta * self.beta;
        4.0 * b2 * avg_err_sq + 4.0 * b2 * self.theta_star_norm.powi(2) + 8.0 * self.r_max.powi(2)
    }
}

/// Largest spectral radius of `H(xi) - H_bar` over transitions with `P(s, s') > 0`.
pub fn spectral_beta(mrp: &MarkovRewardProcess, fm: &FeatureMap, mean: &MeanDynamics) -> f64 {
    let n = mrp.num_states();
    let per_state = |s: usize| -> f64 {
        (0..n)
            .filter(|&t| mrp.transitions()[(s, t)] > 0.0)
            .map(|t| {
                let h = h_matrix(fm.feature(s), fm.feature(t), mrp.gamma()).expect("features share one dimension");
                crate::spectral::spectral_radius(&(h - &mean.h_bar))
            })
            .fold(0.0, f64::max)
    };
    #[cfg(feature = "parallel")]
    let beta = (0..n).into_par_iter().map(per_state).reduce(|| 0.0, f64::max);
    #[cfg(not(feature = "parallel"))]
    let beta = (0..n).map(per_state).fold(0.0, f64::max);
    beta
}

/// `(lambda_max, lambda_min)` of `(H_bar + H_bar^T) / 2`; the first must be negative.
pub fn h_bar_eigs(mean: &MeanDynamics) -> Result<(f64, f64)> {
    let sym = (&mean.h_bar + mean.h_bar.transpose()) * 0.5;
    let eigs = sym.symmetric_eigenvalues();
    let (max, min) = (eigs.max(), eigs.min());
    if max >= 0.0 {
        return Err(Error::NotNegativeDefinite(max));
    }
    Ok((max, min))
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::config("alpha", format!("must be a positive finite number, got {alpha}")));
    }
    Ok(())
}

/// Zero is allowed where the constants degenerate gracefully (pure consensus).
fn check_alpha_nonneg(alpha: f64) -> Result<()> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::config("alpha", format!("must be a nonnegative finite number, got {alpha}")));
    }
    Ok(())
}

/// Consensus bound `(lambda2 + 2 alpha)^k ||Delta Theta(0)|| + 2 alpha sqrt(M) r_max / (1 - lambda2)`
/// without checking the step-size window.
pub fn consensus_bound_value(k: u64, norm_dtheta0: f64, lambda2: f64, alpha: f64, num_agents: usize, r_max: f64) -> f64 {
    (lambda2 + 2.0 * alpha).powf(k as f64) * norm_dtheta0
        + 2.0 * alpha * (num_agents as f64).sqrt() * r_max / (1.0 - lambda2)
}

/// Consensus bound, rejecting `alpha > (1 - lambda2) / 4`.
pub fn consensus_bound(k: u64, norm_dtheta0: f64, lambda2: f64, alpha: f64, num_agents: usize, r_max: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let limit = (1.0 - lambda2) / 4.0;
    if alpha > limit {
        return Err(Error::StepTooLarge { alpha, limit, bound: "consensus" });
    }
    Ok(consensus_bound_value(k, norm_dtheta0, lambda2, alpha, num_agents, r_max))
}

/// Constants of the i.i.d. analysis at one step size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IidConstants {
    pub alpha: f64,
    pub alpha_max: f64,
    pub c1: f64,
    pub c2: f64,
}

impl IidConstants {
    pub fn within_window(&self) -> bool {
        self.alpha <= self.alpha_max
    }

    pub fn require_window(&self) -> Result<&Self> {
        if !self.within_window() {
            return Err(Error::StepTooLarge { alpha: self.alpha, limit: self.alpha_max, bound: "iid" });
        }
        Ok(self)
    }

    /// `c1^k err0 + c2 alpha`.
    pub fn bound(&self, k: u64, err0: f64) -> f64 {
        self.c1.powf(k as f64) * err0 + self.c2 * self.alpha
    }
}

/// `c1`, `c2` and the admissible step `-lambda_max / (2 [4 beta^2 + lambda_min^2])`.
pub fn iid_constants(lambda_max: f64, lambda_min: f64, beta: f64, theta_star_norm: f64, r_max: f64, alpha: f64) -> Result<IidConstants> {
    check_alpha_nonneg(alpha)?;
    let b2 = beta * beta;
    let alpha_max = -lambda_max / (2.0 * (4.0 * b2 + lambda_min * lambda_min));
    let c1 = 1.0 + 2.0 * alpha * lambda_max + 8.0 * alpha * alpha * b2 + 2.0 * alpha * alpha * lambda_min * lambda_min;
    let c2 = (8.0 * b2 * theta_star_norm.powi(2) + 16.0 * r_max * r_max) / -lambda_max;
    Ok(IidConstants { alpha, alpha_max, c1, c2 })
}

/// Constants of the per-agent i.i.d. result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalIidConstants {
    pub alpha_max: f64,
    pub c3: f64,
    pub c4: f64,
}

impl LocalIidConstants {
    pub fn bound(&self, k: u64, v0: f64, alpha: f64) -> f64 {
        self.c3.powf(k as f64) * v0 + self.c4 * alpha
    }
}

/// `V0 = 2 max{4 ||Delta Theta(0)||^2, 2 err0}`.
pub fn local_iid_v0(norm_dtheta0: f64, err0: f64) -> f64 {
    2.0 * f64::max(4.0 * norm_dtheta0 * norm_dtheta0, 2.0 * err0)
}

pub fn local_iid_constants(mc: &ModelConstants, iid: &IidConstants) -> LocalIidConstants {
    let alpha_max = mc.alpha_max_consensus().min(iid.alpha_max);
    let gap = 1.0 - mc.lambda2_w;
    let c3 = (mc.lambda2_w + 2.0 * alpha_max).powi(2).max(iid.c1);
    let m = mc.num_agents as f64;
    let r2 = mc.r_max * mc.r_max;
    let c4 = alpha_max * 8.0 * m * m * r2 / (gap * gap)
        + (16.0 * mc.beta * mc.beta * mc.theta_star_norm.powi(2) + 32.0 * r2) / -mc.lambda_max_h;
    LocalIidConstants { alpha_max, c3, c4 }
}

/// `K_G = min{K : sigma(K) < -lambda_max / 4}` by linear scan.
pub fn compute_k_g(mc: &ModelConstants) -> Result<u64> {
    let threshold = -mc.lambda_max_h / 4.0;
    (1..=K_G_CAP)
        .find(|&k| mc.sigma(0, k).1 < threshold)
        .ok_or(Error::HorizonOverflow { cap: K_G_CAP })
}

/// `a * K^e * (1 + 2 alpha)^f` evaluated through logarithms.
fn growth_term(coef: f64, alpha: f64, alpha_pow: i32, horizon: u64, k_pow: i32, exponent: f64) -> f64 {
    let ln = coef.ln() + alpha_pow as f64 * alpha.ln() + k_pow as f64 * (horizon as f64).ln() + exponent * (2.0 * alpha).ln_1p();
    ln.exp()
}

/// `(Gamma_1(alpha, K), Gamma_2(alpha, K))` as printed.
pub fn gamma_functions(alpha: f64, horizon: u64, mc: &ModelConstants) -> (f64, f64) {
    let k = horizon as f64;
    let sigma = mc.sigma(0, horizon).1;
    let cubic = growth_term(1.0, alpha, 3, horizon, 4, 2.0 * k - 4.0);
    let quad = growth_term(1.0, alpha, 1, horizon, 2, k - 2.0);
    let gamma1 = 32.0 * cubic + 32.0 * k * alpha + 8.0 * quad + 4.0 * k * sigma;
    let gamma2 = (32.0 * cubic + 32.0 * k * alpha + quad) * mc.theta_star_norm.powi(2)
        + (4.0 * cubic + 0.5 * quad + 4.0 * alpha * k) * mc.r_max.powi(2)
        + 0.5 * k * sigma;
    (gamma1, gamma2)
}

/// `Gamma_0(alpha, K) = 32 a^3 K^6 (1+2a)^{2K-4} + 32 a + 8 a K^3 (1+2a)^{K-2} + K lambda_max`.
pub fn gamma0(alpha: f64, horizon: u64, lambda_max: f64) -> f64 {
    let k = horizon as f64;
    if alpha == 0.0 {
        return k * lambda_max;
    }
    32.0 * growth_term(1.0, alpha, 3, horizon, 6, 2.0 * k - 4.0)
        + 32.0 * alpha
        + 8.0 * growth_term(1.0, alpha, 1, horizon, 3, k - 2.0)
        + k * lambda_max
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkovStep {
    pub alpha0: f64,
    pub alpha_max: f64,
    /// `|Gamma_0(alpha0) - K lambda_max / 2|`.
    pub residual: f64,
}

/// Root `alpha0` of `Gamma_0(alpha, K_G) = K_G lambda_max / 2` and `alpha_max = min{-1/(2 K_G lambda_max), alpha0}`.
///
/// Bisection on `(0, -1/(2 K_G lambda_max) + 1)`. The returned root is the
/// lower end of the final bracket, so `Gamma_0(alpha0) <= K_G lambda_max / 2`.
pub fn alpha_max_markov(lambda_max: f64, k_g: u64) -> MarkovStep {
    let target = 0.5 * k_g as f64 * lambda_max;
    let clamp = -1.0 / (2.0 * k_g as f64 * lambda_max);
    let (mut lo, mut hi) = (0.0, clamp + 1.0);
    for _ in 0..BISECTION_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if gamma0(mid, k_g, lambda_max) <= target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= BISECTION_TOL * hi * f64::EPSILON {
            break;
        }
    }
    let residual = (gamma0(lo, k_g, lambda_max) - target).abs();
    MarkovStep { alpha0: lo, alpha_max: clamp.min(lo), residual }
}

/// `k_alpha = max{k : rho^k >= alpha}`, clamped at zero.
pub fn k_alpha(rho: f64, alpha: f64) -> u64 {
    // rho^k >= 0 for every k.
    if alpha <= 0.0 {
        return u64::MAX;
    }
    if alpha >= 1.0 {
        return 0;
    }
    let ln_rho = rho.ln();
    let mut k = (alpha.ln() / ln_rho).floor().max(0.0) as u64;
    while ((k + 1) as f64) * ln_rho >= alpha.ln() {
        k += 1;
    }
    while k > 0 && (k as f64) * ln_rho < alpha.ln() {
        k -= 1;
    }
    k
}

/// Constants of the Markov-sampling analysis at one step size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkovConstants {
    pub alpha: f64,
    pub k_g: u64,
    pub step: MarkovStep,
    pub c5: LogReal,
    pub c6: LogReal,
    pub c7: NearOne,
    pub c8: f64,
    pub c8_prime: f64,
    pub c9: NearOne,
    pub k_alpha: u64,
    lambda_max: f64,
    lambda2_w: f64,
    num_agents: usize,
    r_max: f64,
}

impl MarkovConstants {
    pub fn compute(mc: &ModelConstants, alpha: f64) -> Result<Self> {
        check_alpha_nonneg(alpha)?;
        let k_g = compute_k_g(mc)?;
        let step = alpha_max_markov(mc.lambda_max_h, k_g);
        let a = step.alpha_max;
        let k = k_g as f64;
        let q = 3.0 + 12.0 * a * a;
        let ln_q = q.ln();
        let c5 = LogReal::from_ln(k * ln_q + ln_1m_exp(-k * ln_q) - (2.0 + 3.0 * a * a).ln());

        // c6 numerator 6 q^K - 6 q - 6 K + 6, factored as 6 q^K (1 - (q + K - 1) / q^K).
        let tail = (q + k - 1.0).ln() - k * ln_q;
        let ln_num = if tail >= 0.0 {
            f64::NEG_INFINITY
        } else {
            6f64.ln() + k * ln_q + ln_1m_exp(tail)
        };
        let weight = 4.0 * mc.theta_star_norm.powi(2) + mc.r_max.powi(2);
        let c6 = if ln_num == f64::NEG_INFINITY || weight == 0.0 {
            LogReal::ZERO
        } else {
            LogReal::from_ln(ln_num - (2.0 + 12.0 * a * a).ln() + weight.ln())
        };

        let k_lambda = k * mc.lambda_max_h;
        let c7 = NearOne::from_ln_gap((a * k * -mc.lambda_max_h / 2.0).ln() - c5.ln());
        let c6_over_c5 = (c6 / c5).value();
        let (_, gamma2) = gamma_functions(a, k_g, mc);
        let c8 = gamma2 - a * a * c6_over_c5 * k_lambda;
        let c8_prime = (16.0 * growth_term(1.0, a, 2, k_g, 6, 2.0 * k - 4.0)
            + 32.0 * k
            + 2.0 * growth_term(1.0, a, 0, k_g, 3, k - 2.0))
            * mc.theta_star_norm.powi(2)
            + 4.0 * k * mc.r_max.powi(2)
            - k_lambda / 8.0
            - a * c6_over_c5 * k_lambda;

        // c9 = max{(lambda2 + 2 alpha_max)^2, c7}; both are below one, keep the larger as a gap.
        let consensus_rate = (mc.lambda2_w + 2.0 * a).powi(2);
        let c9 = if consensus_rate > c7.value() {
            NearOne::from_ln_gap((1.0 - consensus_rate).ln())
        } else {
            c7
        };

        Ok(Self {
            alpha,
            k_g,
            step,
            c5,
            c6,
            c7,
            c8,
            c8_prime,
            c9,
            k_alpha: k_alpha(mc.mixing.rho, alpha),
            lambda_max: mc.lambda_max_h,
            lambda2_w: mc.lambda2_w,
            num_agents: mc.num_agents,
            r_max: mc.r_max,
        })
    }

    pub fn within_window(&self) -> bool {
        self.alpha < self.step.alpha_max
    }

    pub fn require_window(&self) -> Result<&Self> {
        if !self.within_window() {
            return Err(Error::StepTooLarge { alpha: self.alpha, limit: self.step.alpha_max, bound: "markov" });
        }
        Ok(self)
    }

    /// `-2 c5 c8' / (K_G lambda_max)`, the phase-one neighborhood.
    fn neighborhood(&self) -> LogReal {
        LogReal::new(2.0) * self.c5 * LogReal::new(self.c8_prime) / LogReal::new(self.k_g as f64 * -self.lambda_max)
    }

    /// `min{1, c7^{k - k_alpha}} (alpha^2 c6 - 2 c5 c8' / (K_G lambda_max))`.
    fn phase_term(&self, k: u64) -> LogReal {
        let decay = self.c7.powf(k as f64 - self.k_alpha as f64).min(LogReal::ONE);
        decay * (LogReal::new(self.alpha * self.alpha) * self.c6 + self.neighborhood())
    }

    /// Right-hand side of the averaged-parameter bound under Markov sampling.
    pub fn bound(&self, k: u64, err0: f64) -> LogReal {
        self.c5 * self.c7.powf(k as f64) * LogReal::new(err0)
            + self.neighborhood() * LogReal::new(self.alpha)
            + self.phase_term(k)
    }

    /// `V0' = 2 max{4 ||Delta Theta(0)||^2, 2 c5 err0}`.
    pub fn v0_prime(&self, norm_dtheta0: f64, err0: f64) -> LogReal {
        let consensus = LogReal::new(4.0 * norm_dtheta0 * norm_dtheta0);
        LogReal::new(2.0) * consensus.max(LogReal::new(2.0 * err0) * self.c5)
    }

    /// Right-hand side of the per-agent bound under Markov sampling.
    pub fn local_markov_bound(&self, k: u64, v0_prime: LogReal) -> LogReal {
        let gap = 1.0 - self.lambda2_w;
        let consensus = 8.0 * self.alpha * self.alpha * self.num_agents as f64 * self.r_max.powi(2) / (gap * gap);
        self.c9.powf(k as f64) * v0_prime
            + LogReal::new(consensus)
            + self.neighborhood() * LogReal::new(self.alpha)
            + self.phase_term(k)
    }

    /// Drift bound `c5 ||theta_bar(k) - theta*||^2 + c6 alpha^2`.
    pub fn lyapunov_bound(&self, err_sq: f64) -> LogReal {
        self.c5 * LogReal::new(err_sq) + self.c6 * LogReal::new(self.alpha * self.alpha)
    }

    /// Contraction factor over one averaging horizon `1 + 2 alpha K_G lambda_max + alpha Gamma_1(alpha_max, K_G)`.
    pub fn lyapunov_rate(&self, mc: &ModelConstants, alpha: f64) -> f64 {
        let (gamma1, _) = gamma_functions(self.step.alpha_max, self.k_g, mc);
        1.0 + 2.0 * alpha * self.k_g as f64 * mc.lambda_max_h + alpha * gamma1
    }
}

/// `V(k) = sum_{j=k}^{k+K-1} ||theta_bar(j) - theta*||^2` over a recorded trajectory.
pub fn multi_step_lyapunov<V: AsRef<[f64]>>(trajectory: &[V], k: usize, horizon: usize, theta_star: &[f64]) -> Result<f64> {
    let end = k + horizon;
    if horizon == 0 || end > trajectory.len() {
        return Err(Error::OutOfRange { index: end.saturating_sub(1), len: trajectory.len() });
    }
    let mut acc = 0.0;
    for theta in &trajectory[k..end] {
        let theta = theta.as_ref();
        if theta.len() != theta_star.len() {
            return Err(Error::DimMismatch { expected: theta_star.len(), got: theta.len() });
        }
        acc += theta.iter().zip(theta_star).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(acc)
}

/// Every constant of the analysis for one model and one step size.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoryConstants {
    pub alpha: f64,
    pub model: ModelConstants,
    pub iid: IidConstants,
    pub iid_local: LocalIidConstants,
    /// Fails with `HorizonOverflow` when no bias-averaging horizon exists below the cap.
    pub markov: std::result::Result<MarkovConstants, Error>,
}

impl TheoryConstants {
    pub fn compute(mc: ModelConstants, alpha: f64) -> Result<Self> {
        let iid = iid_constants(mc.lambda_max_h, mc.lambda_min_h, mc.beta, mc.theta_star_norm, mc.r_max, alpha)?;
        let iid_local = local_iid_constants(&mc, &iid);
        let markov = MarkovConstants::compute(&mc, alpha);
        if let Err(e) = &markov {
            log::warn!("Markov-sampling constants unavailable: {e}");
        }
        Ok(Self { alpha, model: mc, iid, iid_local, markov })
    }

    pub fn consensus_within_window(&self) -> bool {
        self.alpha <= self.model.alpha_max_consensus()
    }

    /// Stable identifier of the model and step size these constants describe.
    pub fn fingerprint(&self) -> String {
        let mc = &self.model;
        let mut h = DefaultHasher::new();
        for x in [
            self.alpha,
            mc.gamma,
            mc.r_max,
            mc.lambda2_w,
            mc.slem_w,
            mc.lambda_max_h,
            mc.lambda_min_h,
            mc.beta,
            mc.mixing.nu0,
            mc.mixing.rho,
            mc.theta_star_norm,
        ] {
            x.to_bits().hash(&mut h);
        }
        mc.num_agents.hash(&mut h);
        format!("{:016x}", h.finish())
    }
}
