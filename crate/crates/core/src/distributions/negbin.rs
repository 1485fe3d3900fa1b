//! NB2 negative binomial and zero-inflated negative binomial kernels.
//!
//! Both are parameterized by the mean `mu` of the count component and the
//! dispersion `alpha` (variance `mu * (1 + alpha * mu)`). `alpha = 0` is the
//! Poisson limit and `alpha = 1` the geometric distribution. The zero-inflated
//! variant mixes in a point mass at zero with probability `pi`.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use statrs::function::gamma::{gamma_lr, ln_gamma};

use super::{check_positive, DistError};

/// Dispersion below which the Poisson branch is used.
///
/// `alpha = 0` is a removable singularity of the NB2 formulas; evaluating
/// `(1 / alpha)`-powers close to it loses all precision.
pub const POISSON_ALPHA_THRESHOLD: f64 = 1e-8;

/// Below this dispersion `ln Γ(x + 1/α) - ln Γ(1/α)` is evaluated as a sum of
/// logarithms instead of a difference of two huge log-gamma values.
const SMALL_ALPHA: f64 = 1e-3;
const SMALL_ALPHA_MAX_TERMS: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NbParams {
    pub mu: f64,
    pub alpha: f64,
}

impl NbParams {
    pub fn new(mu: f64, alpha: f64) -> Result<Self, DistError> {
        let p = Self { mu, alpha };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), DistError> {
        check_positive("mu", self.mu)?;
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(DistError::InvalidParameter {
                name: "alpha",
                value: self.alpha,
                expected: "finite and >= 0",
            });
        }
        Ok(())
    }

    fn is_poisson(&self) -> bool {
        self.alpha < POISSON_ALPHA_THRESHOLD
    }

    /// `ln P[X = 0]`, i.e. `-(1/α) ln(1 + α μ)` or `-μ` in the Poisson limit.
    fn log_p0(&self) -> f64 {
        if self.is_poisson() {
            -self.mu
        } else {
            -(self.alpha * self.mu).ln_1p() / self.alpha
        }
    }

    /// `(1 + α μ)^(1/α)`, the reciprocal of the NB zero probability.
    fn inv_p0(&self) -> f64 {
        (-self.log_p0()).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZinbParams {
    pub mu: f64,
    pub alpha: f64,
    pub pi: f64,
}

impl ZinbParams {
    pub fn new(mu: f64, alpha: f64, pi: f64) -> Result<Self, DistError> {
        let p = Self { mu, alpha, pi };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), DistError> {
        self.nb().validate()?;
        if !(0.0..1.0).contains(&self.pi) {
            return Err(DistError::InvalidParameter {
                name: "pi",
                value: self.pi,
                expected: "in [0, 1)",
            });
        }
        Ok(())
    }

    pub fn nb(&self) -> NbParams {
        NbParams {
            mu: self.mu,
            alpha: self.alpha,
        }
    }

    /// `π (1 + α μ)^(1/α)`, with the `π = 0` case kept exact when the power
    /// overflows.
    fn inflation_ratio(&self) -> f64 {
        if self.pi == 0.0 {
            0.0
        } else {
            self.pi * self.nb().inv_p0()
        }
    }
}

pub fn nb_log_pmf(x: u64, p: NbParams) -> Result<f64, DistError> {
    p.validate()?;
    Ok(nb_log_norm(x, p.alpha) + nb_log_kernel(x, p))
}

/// The part of `ln P[X = x]` that does not depend on `mu`.
///
/// `nb_log_pmf` is exactly `nb_log_norm + ` the `mu`-dependent remainder, so
/// callers evaluating many means at a fixed dispersion can cache this term
/// per `x` without changing a single bit of the result.
pub fn nb_log_norm(x: u64, alpha: f64) -> f64 {
    let xf = x as f64;
    let log_fact = ln_gamma(xf + 1.0);
    if alpha < POISSON_ALPHA_THRESHOLD {
        return -log_fact;
    }
    if alpha < SMALL_ALPHA && x < SMALL_ALPHA_MAX_TERMS {
        // ln Γ(x + r) - ln Γ(r) - x ln r = Σ_{j<x} ln(1 + α j)
        let rising: f64 = (0..x).map(|j| (alpha * j as f64).ln_1p()).sum();
        return rising - log_fact;
    }
    let r = 1.0 / alpha;
    ln_gamma(xf + r) - ln_gamma(r) - log_fact
}

fn nb_log_kernel(x: u64, p: NbParams) -> f64 {
    let xf = x as f64;
    if p.is_poisson() {
        let lin = if x == 0 { 0.0 } else { xf * p.mu.ln() };
        return lin - p.mu;
    }
    let a = p.alpha;
    let log1p_am = (a * p.mu).ln_1p();
    if a < SMALL_ALPHA && x < SMALL_ALPHA_MAX_TERMS {
        let lin = if x == 0 { 0.0 } else { xf * p.mu.ln() };
        return lin - (xf + 1.0 / a) * log1p_am;
    }
    let lin = if x == 0 {
        0.0
    } else {
        xf * ((a * p.mu).ln() - log1p_am)
    };
    lin - log1p_am / a
}

/// Memoized [`nb_log_norm`] values for one dispersion.
#[derive(Debug, Clone, Default)]
pub struct LogNormCache {
    alpha: f64,
    values: Vec<f64>,
    pi: f64,
    log_pi: f64,
    log1m_pi: f64,
}

impl LogNormCache {
    /// Counts above this are evaluated directly rather than stored.
    const MAX_CACHED: u64 = 1 << 16;

    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&mut self, x: u64, alpha: f64) -> f64 {
        if alpha.to_bits() != self.alpha.to_bits() {
            self.alpha = alpha;
            self.values.clear();
        }
        if x >= Self::MAX_CACHED {
            return nb_log_norm(x, alpha);
        }
        let i = x as usize;
        if i >= self.values.len() {
            self.values.resize(i + 1, f64::NAN);
        }
        if self.values[i].is_nan() {
            self.values[i] = nb_log_norm(x, alpha);
        }
        self.values[i]
    }

    /// `(ln π, ln(1 - π))`.
    fn pi_logs(&mut self, pi: f64) -> (f64, f64) {
        if pi.to_bits() != self.pi.to_bits() || self.log_pi == 0.0 {
            self.pi = pi;
            self.log_pi = pi.ln();
            self.log1m_pi = (-pi).ln_1p();
        }
        (self.log_pi, self.log1m_pi)
    }
}

/// [`zinb_log_pmf`] with the `mu`-free term taken from `cache`.
pub fn zinb_log_pmf_cached(
    x: u64,
    p: ZinbParams,
    cache: &mut LogNormCache,
) -> Result<f64, DistError> {
    zinb_log_pmf_and_score(x, p, cache).map(|(lp, _)| lp)
}

/// `(ln P[X = x], ∂/∂μ ln P[X = x])` sharing intermediate terms. Both values
/// are bit-identical to [`zinb_log_pmf`] and [`zinb_score_mu`].
pub fn zinb_log_pmf_and_score(
    x: u64,
    p: ZinbParams,
    cache: &mut LogNormCache,
) -> Result<(f64, f64), DistError> {
    p.validate()?;
    let nb = p.nb();
    if x == 0 && p.pi > 0.0 {
        let log_p0 = nb.log_p0();
        let (a, log1m_pi) = cache.pi_logs(p.pi);
        let b = log1m_pi + log_p0;
        let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
        let lp = hi + (lo - hi).exp().ln_1p();
        let am1 = p.alpha * p.mu + 1.0;
        let ratio = p.pi * (-log_p0).exp();
        return Ok((lp, (p.pi - 1.0) / (am1 * (1.0 + ratio - p.pi))));
    }
    let mut lp = cache.get(x, p.alpha) + nb_log_kernel(x, nb);
    if p.pi > 0.0 {
        lp += cache.pi_logs(p.pi).1;
    }
    let score = if x > 0 {
        (x as f64 - p.mu) / (p.mu * (p.alpha * p.mu + 1.0))
    } else {
        let am1 = p.alpha * p.mu + 1.0;
        (p.pi - 1.0) / (am1 * (1.0 - p.pi))
    };
    Ok((lp, score))
}

pub fn nb_score_mu(x: u64, p: NbParams) -> Result<f64, DistError> {
    p.validate()?;
    Ok((x as f64 - p.mu) / (p.mu * (p.alpha * p.mu + 1.0)))
}

pub fn nb_fisher_mu(p: NbParams) -> Result<f64, DistError> {
    p.validate()?;
    Ok(1.0 / (p.mu * (p.alpha * p.mu + 1.0)))
}

/// Survival function `P[X > x]` of the NB2 (or Poisson) distribution.
pub fn nb_survival(x: u64, p: NbParams) -> Result<f64, DistError> {
    p.validate()?;
    let k = x as f64 + 1.0;
    if p.is_poisson() {
        return Ok(gamma_lr(k, p.mu));
    }
    let q = p.alpha * p.mu / (1.0 + p.alpha * p.mu);
    Ok(beta_reg(k, 1.0 / p.alpha, q))
}

/// Smallest `x` with `P[X > x] < tail`, capped at `cap`.
pub fn nb_truncation_point(p: NbParams, tail: f64, cap: u64) -> Result<u64, DistError> {
    p.validate()?;
    let mut hi = (p.mu.ceil() as u64).max(1);
    while nb_survival(hi, p)? >= tail {
        if hi >= cap {
            return Ok(cap);
        }
        hi = (hi * 2).min(cap);
    }
    let mut lo = 0u64;
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if nb_survival(mid, p)? < tail {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok(lo)
}

/// Zero probability `π + (1 - π)(1 + α μ)^(-1/α)`.
pub fn zinb_zero_prob(p: ZinbParams) -> Result<f64, DistError> {
    p.validate()?;
    Ok(p.pi + (1.0 - p.pi) * p.nb().log_p0().exp())
}

pub fn zinb_log_pmf(x: u64, p: ZinbParams) -> Result<f64, DistError> {
    p.validate()?;
    if p.pi == 0.0 {
        return nb_log_pmf(x, p.nb());
    }
    if x > 0 {
        return Ok((-p.pi).ln_1p() + nb_log_pmf(x, p.nb())?);
    }
    let a = p.pi.ln();
    let b = (-p.pi).ln_1p() + p.nb().log_p0();
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    Ok(hi + (lo - hi).exp().ln_1p())
}

pub fn zinb_score_mu(x: u64, p: ZinbParams) -> Result<f64, DistError> {
    p.validate()?;
    let am1 = p.alpha * p.mu + 1.0;
    if x > 0 {
        return nb_score_mu(x, p.nb());
    }
    Ok((p.pi - 1.0) / (am1 * (1.0 + p.inflation_ratio() - p.pi)))
}

pub fn zinb_fisher_mu(p: ZinbParams) -> Result<f64, DistError> {
    p.validate()?;
    let am1 = p.alpha * p.mu + 1.0;
    let regular = (1.0 - p.pi) / (p.mu * am1);
    if p.pi == 0.0 {
        return Ok(regular);
    }
    let zero_part = p.pi * (p.pi - 1.0) / (am1 * am1 * (p.inflation_ratio() - p.pi + 1.0));
    Ok(zero_part + regular)
}

/// Mean and variance `(μ(1-π), μ(1-π)(1 + πμ + αμ))`.
pub fn zinb_moments(p: ZinbParams) -> Result<(f64, f64), DistError> {
    p.validate()?;
    let mean = p.mu * (1.0 - p.pi);
    Ok((mean, mean * (1.0 + p.pi * p.mu + p.alpha * p.mu)))
}

/// Draws from the ZINB mixture. The count component is sampled as a
/// Poisson-gamma mixture.
pub fn zinb_sample<R: Rng + ?Sized>(p: ZinbParams, rng: &mut R) -> Result<u64, DistError> {
    p.validate()?;
    if p.pi > 0.0 && rng.random::<f64>() < p.pi {
        return Ok(0);
    }
    let nb = p.nb();
    let lambda = if nb.is_poisson() {
        nb.mu
    } else {
        let shape = 1.0 / nb.alpha;
        Gamma::new(shape, nb.alpha * nb.mu)
            .expect("gamma parameters validated")
            .sample(rng)
    };
    if !(lambda > 0.0) {
        return Ok(0);
    }
    let draw: f64 = Poisson::new(lambda)
        .map_err(|_| DistError::InvalidParameter {
            name: "lambda",
            value: lambda,
            expected: "a finite Poisson rate",
        })?
        .sample(rng);
    Ok(draw as u64)
}
