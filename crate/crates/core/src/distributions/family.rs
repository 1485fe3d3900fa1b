use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gengamma::{
    exponential_log_pdf, gengamma_cdf, gengamma_fisher_beta, gengamma_log_pdf, gengamma_moments,
    gengamma_sample, gengamma_score_beta, gengamma_sf, GenGammaParams,
};
use super::negbin::{
    zinb_fisher_mu, zinb_log_pmf, zinb_log_pmf_and_score, zinb_log_pmf_cached, zinb_sample,
    zinb_score_mu, zinb_zero_prob, LogNormCache, ZinbParams,
};
use super::{check_positive, DistError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyTag {
    Poisson,
    Geometric,
    NegBinomial,
    ZiPoisson,
    ZiGeometric,
    ZiNegBinomial,
    Exponential,
    Weibull,
    Gamma,
    GenGamma,
}

impl FamilyTag {
    pub const ALL: [FamilyTag; 10] = [
        FamilyTag::Poisson,
        FamilyTag::Geometric,
        FamilyTag::NegBinomial,
        FamilyTag::ZiPoisson,
        FamilyTag::ZiGeometric,
        FamilyTag::ZiNegBinomial,
        FamilyTag::Exponential,
        FamilyTag::Weibull,
        FamilyTag::Gamma,
        FamilyTag::GenGamma,
    ];

    pub const DISCRETE: [FamilyTag; 6] = [
        FamilyTag::Poisson,
        FamilyTag::Geometric,
        FamilyTag::NegBinomial,
        FamilyTag::ZiPoisson,
        FamilyTag::ZiGeometric,
        FamilyTag::ZiNegBinomial,
    ];

    pub const CONTINUOUS: [FamilyTag; 4] = [
        FamilyTag::Exponential,
        FamilyTag::Weibull,
        FamilyTag::Gamma,
        FamilyTag::GenGamma,
    ];

    pub fn is_discrete(self) -> bool {
        Self::DISCRETE.contains(&self)
    }

    pub fn is_zero_inflated(self) -> bool {
        matches!(
            self,
            FamilyTag::ZiPoisson | FamilyTag::ZiGeometric | FamilyTag::ZiNegBinomial
        )
    }

    /// Names of the static shape parameters, in the order used by
    /// [`Family::from_shape`] and [`Family::shape`].
    pub fn shape_names(self) -> &'static [&'static str] {
        match self {
            FamilyTag::Poisson | FamilyTag::Geometric | FamilyTag::Exponential => &[],
            FamilyTag::NegBinomial => &["alpha"],
            FamilyTag::ZiPoisson | FamilyTag::ZiGeometric => &["pi"],
            FamilyTag::ZiNegBinomial => &["alpha", "pi"],
            FamilyTag::Weibull => &["phi"],
            FamilyTag::Gamma => &["psi"],
            FamilyTag::GenGamma => &["psi", "phi"],
        }
    }

    /// Free parameters of the score-driven model: `c`, `b`, `a` plus shapes.
    pub fn n_free_params(self) -> usize {
        3 + self.shape_names().len()
    }

    pub fn short_name(self) -> &'static str {
        match self {
            FamilyTag::Poisson => "P",
            FamilyTag::Geometric => "G",
            FamilyTag::NegBinomial => "NB",
            FamilyTag::ZiPoisson => "ZIP",
            FamilyTag::ZiGeometric => "ZIG",
            FamilyTag::ZiNegBinomial => "ZINB",
            FamilyTag::Exponential => "E",
            FamilyTag::Weibull => "W",
            FamilyTag::Gamma => "GA",
            FamilyTag::GenGamma => "GG",
        }
    }
}

impl fmt::Display for FamilyTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for FamilyTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let tag = match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "p" | "poisson" => FamilyTag::Poisson,
            "g" | "geometric" => FamilyTag::Geometric,
            "nb" | "negbin" | "neg_binomial" | "negative_binomial" => FamilyTag::NegBinomial,
            "zip" | "zi_poisson" => FamilyTag::ZiPoisson,
            "zig" | "zi_geometric" => FamilyTag::ZiGeometric,
            "zinb" | "zi_neg_binomial" => FamilyTag::ZiNegBinomial,
            "e" | "exp" | "exponential" => FamilyTag::Exponential,
            "w" | "weibull" => FamilyTag::Weibull,
            "ga" | "gamma" => FamilyTag::Gamma,
            "gg" | "gengamma" | "gen_gamma" | "generalized_gamma" => FamilyTag::GenGamma,
            other => return Err(format!("unknown family '{other}'")),
        };
        Ok(tag)
    }
}

/// An observation distribution with its static shape parameters filled in.
///
/// The time-varying parameter `theta` passed to the methods is the mean `μ`
/// for discrete families and the scale `β` for continuous ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Family {
    Poisson,
    Geometric,
    NegBinomial { alpha: f64 },
    ZiPoisson { pi: f64 },
    ZiGeometric { pi: f64 },
    ZiNegBinomial { alpha: f64, pi: f64 },
    Exponential,
    Weibull { phi: f64 },
    Gamma { psi: f64 },
    GenGamma { psi: f64, phi: f64 },
}

enum Kernel {
    Count(ZinbParams),
    Exponential(f64),
    GenGamma(GenGammaParams),
}

impl Family {
    pub fn tag(&self) -> FamilyTag {
        match self {
            Family::Poisson => FamilyTag::Poisson,
            Family::Geometric => FamilyTag::Geometric,
            Family::NegBinomial { .. } => FamilyTag::NegBinomial,
            Family::ZiPoisson { .. } => FamilyTag::ZiPoisson,
            Family::ZiGeometric { .. } => FamilyTag::ZiGeometric,
            Family::ZiNegBinomial { .. } => FamilyTag::ZiNegBinomial,
            Family::Exponential => FamilyTag::Exponential,
            Family::Weibull { .. } => FamilyTag::Weibull,
            Family::Gamma { .. } => FamilyTag::Gamma,
            Family::GenGamma { .. } => FamilyTag::GenGamma,
        }
    }

    pub fn from_shape(tag: FamilyTag, shape: &[f64]) -> Result<Self, DistError> {
        let expected = tag.shape_names().len();
        if shape.len() != expected {
            return Err(DistError::ShapeArity {
                family: tag,
                expected,
                got: shape.len(),
            });
        }
        let fam = match tag {
            FamilyTag::Poisson => Family::Poisson,
            FamilyTag::Geometric => Family::Geometric,
            FamilyTag::NegBinomial => Family::NegBinomial { alpha: shape[0] },
            FamilyTag::ZiPoisson => Family::ZiPoisson { pi: shape[0] },
            FamilyTag::ZiGeometric => Family::ZiGeometric { pi: shape[0] },
            FamilyTag::ZiNegBinomial => Family::ZiNegBinomial {
                alpha: shape[0],
                pi: shape[1],
            },
            FamilyTag::Exponential => Family::Exponential,
            FamilyTag::Weibull => Family::Weibull { phi: shape[0] },
            FamilyTag::Gamma => Family::Gamma { psi: shape[0] },
            FamilyTag::GenGamma => Family::GenGamma {
                psi: shape[0],
                phi: shape[1],
            },
        };
        fam.validate()?;
        Ok(fam)
    }

    pub fn shape(&self) -> Vec<f64> {
        match *self {
            Family::Poisson | Family::Geometric | Family::Exponential => vec![],
            Family::NegBinomial { alpha } => vec![alpha],
            Family::ZiPoisson { pi } | Family::ZiGeometric { pi } => vec![pi],
            Family::ZiNegBinomial { alpha, pi } => vec![alpha, pi],
            Family::Weibull { phi } => vec![phi],
            Family::Gamma { psi } => vec![psi],
            Family::GenGamma { psi, phi } => vec![psi, phi],
        }
    }

    pub fn validate(&self) -> Result<(), DistError> {
        // any positive theta works for checking the statics
        self.kernel(1.0).map(|_| ())
    }

    pub fn is_discrete(&self) -> bool {
        self.tag().is_discrete()
    }

    /// Dispersion `α` of the count component, if discrete.
    pub fn dispersion(&self) -> Option<f64> {
        match *self {
            Family::Poisson | Family::ZiPoisson { .. } => Some(0.0),
            Family::Geometric | Family::ZiGeometric { .. } => Some(1.0),
            Family::NegBinomial { alpha } | Family::ZiNegBinomial { alpha, .. } => Some(alpha),
            _ => None,
        }
    }

    /// Probability `π` of the structural-zero component (0 when absent).
    pub fn excess_zero_prob(&self) -> f64 {
        match *self {
            Family::ZiPoisson { pi }
            | Family::ZiGeometric { pi }
            | Family::ZiNegBinomial { pi, .. } => pi,
            _ => 0.0,
        }
    }

    fn kernel(&self, theta: f64) -> Result<Kernel, DistError> {
        let count = |alpha: f64, pi: f64| ZinbParams::new(theta, alpha, pi).map(Kernel::Count);
        let gg = |psi: f64, phi: f64| GenGammaParams::new(theta, psi, phi).map(Kernel::GenGamma);
        match *self {
            Family::Poisson => count(0.0, 0.0),
            Family::Geometric => count(1.0, 0.0),
            Family::NegBinomial { alpha } => count(alpha, 0.0),
            Family::ZiPoisson { pi } => count(0.0, pi),
            Family::ZiGeometric { pi } => count(1.0, pi),
            Family::ZiNegBinomial { alpha, pi } => count(alpha, pi),
            Family::Exponential => {
                check_positive("beta", theta).map(|_| Kernel::Exponential(theta))
            }
            Family::Weibull { phi } => gg(1.0, phi),
            Family::Gamma { psi } => gg(psi, 1.0),
            Family::GenGamma { psi, phi } => gg(psi, phi),
        }
    }

    /// Whether `x` lies in the support: non-negative integers for discrete
    /// families, `x >= 0` for the exponential and `x > 0` otherwise.
    pub fn supports(&self, x: f64) -> bool {
        if !x.is_finite() {
            return false;
        }
        match self.tag() {
            t if t.is_discrete() => x >= 0.0 && x.fract() == 0.0 && x < 9.0e15,
            FamilyTag::Exponential => x >= 0.0,
            _ => x > 0.0,
        }
    }

    fn count_obs(&self, x: f64) -> Result<u64, DistError> {
        if self.supports(x) {
            Ok(x as u64)
        } else {
            Err(DistError::OutsideSupport(x))
        }
    }

    pub fn log_density(&self, x: f64, theta: f64) -> Result<f64, DistError> {
        match self.kernel(theta)? {
            Kernel::Count(p) => zinb_log_pmf(self.count_obs(x)?, p),
            Kernel::Exponential(beta) => exponential_log_pdf(x, beta),
            Kernel::GenGamma(p) => gengamma_log_pdf(x, p),
        }
    }

    /// Same value as [`Family::log_density`], reusing `mu`-free terms of
    /// the count families from `cache`.
    pub fn log_density_cached(
        &self,
        x: f64,
        theta: f64,
        cache: &mut LogNormCache,
    ) -> Result<f64, DistError> {
        match self.kernel(theta)? {
            Kernel::Count(p) => zinb_log_pmf_cached(self.count_obs(x)?, p, cache),
            Kernel::Exponential(beta) => exponential_log_pdf(x, beta),
            Kernel::GenGamma(p) => gengamma_log_pdf(x, p),
        }
    }

    /// `(log_density, score)` in one pass; identical to calling both.
    pub fn log_density_and_score(
        &self,
        x: f64,
        theta: f64,
        cache: &mut LogNormCache,
    ) -> Result<(f64, f64), DistError> {
        match self.kernel(theta)? {
            Kernel::Count(p) => zinb_log_pmf_and_score(self.count_obs(x)?, p, cache),
            _ => Ok((self.log_density(x, theta)?, self.score(x, theta)?)),
        }
    }

    /// Score `∂ log p(x | θ) / ∂θ` in the time-varying parameter.
    pub fn score(&self, x: f64, theta: f64) -> Result<f64, DistError> {
        match self.kernel(theta)? {
            Kernel::Count(p) => zinb_score_mu(self.count_obs(x)?, p),
            Kernel::Exponential(beta) => {
                if !self.supports(x) {
                    return Err(DistError::OutsideSupport(x));
                }
                Ok((x - beta) / (beta * beta))
            }
            Kernel::GenGamma(p) => gengamma_score_beta(x, p),
        }
    }

    pub fn fisher(&self, theta: f64) -> Result<f64, DistError> {
        match self.kernel(theta)? {
            Kernel::Count(p) => zinb_fisher_mu(p),
            Kernel::Exponential(beta) => Ok(1.0 / (beta * beta)),
            Kernel::GenGamma(p) => gengamma_fisher_beta(p),
        }
    }

    pub fn mean(&self, theta: f64) -> Result<f64, DistError> {
        match self.kernel(theta)? {
            Kernel::Count(p) => Ok(p.mu * (1.0 - p.pi)),
            Kernel::Exponential(beta) => Ok(beta),
            Kernel::GenGamma(p) => gengamma_moments(p).map(|m| m.0),
        }
    }

    /// `P[X = 0]` for discrete families.
    pub fn zero_probability(&self, theta: f64) -> Result<f64, DistError> {
        match self.kernel(theta)? {
            Kernel::Count(p) => zinb_zero_prob(p),
            _ => Err(DistError::Unsupported {
                what: "zero probability",
                family: self.tag(),
            }),
        }
    }

    /// `P[X <= x]` for continuous families.
    pub fn cdf(&self, x: f64, theta: f64) -> Result<f64, DistError> {
        match self.kernel(theta)? {
            Kernel::Exponential(beta) => Ok(if x <= 0.0 { 0.0 } else { -(-x / beta).exp_m1() }),
            Kernel::GenGamma(p) => gengamma_cdf(x, p),
            Kernel::Count(_) => Err(DistError::Unsupported {
                what: "continuous cdf",
                family: self.tag(),
            }),
        }
    }

    /// `P[X > x]` for continuous families.
    pub fn sf(&self, x: f64, theta: f64) -> Result<f64, DistError> {
        match self.kernel(theta)? {
            Kernel::Exponential(beta) => Ok(if x <= 0.0 { 1.0 } else { (-x / beta).exp() }),
            Kernel::GenGamma(p) => gengamma_sf(x, p),
            Kernel::Count(_) => Err(DistError::Unsupported {
                what: "continuous survival function",
                family: self.tag(),
            }),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, theta: f64, rng: &mut R) -> Result<f64, DistError> {
        match self.kernel(theta)? {
            Kernel::Count(p) => zinb_sample(p, rng).map(|x| x as f64),
            Kernel::Exponential(beta) => {
                let u: f64 = rng.random();
                Ok(-beta * (-u).ln_1p())
            }
            Kernel::GenGamma(p) => gengamma_sample(p, rng),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tags_round_trip_through_names() {
        for tag in FamilyTag::ALL {
            assert_eq!(tag.short_name().parse::<FamilyTag>().unwrap(), tag);
            let json = serde_json::to_string(&tag).unwrap();
            assert_eq!(serde_json::from_str::<FamilyTag>(&json).unwrap(), tag);
        }
        assert!("burr".parse::<FamilyTag>().is_err());
    }

    #[test]
    fn free_parameter_counts() {
        let q: Vec<usize> = FamilyTag::ALL.iter().map(|t| t.n_free_params()).collect();
        assert_eq!(q, vec![3, 3, 4, 4, 4, 5, 3, 4, 4, 5]);
    }

    #[test]
    fn shape_arity_and_validation() {
        assert!(Family::from_shape(FamilyTag::ZiNegBinomial, &[1.0]).is_err());
        assert!(Family::from_shape(FamilyTag::ZiNegBinomial, &[1.0, 1.0]).is_err());
        let f = Family::from_shape(FamilyTag::GenGamma, &[2.0, 0.5]).unwrap();
        assert_eq!(f.shape(), vec![2.0, 0.5]);
        assert!(Family::from_shape(FamilyTag::Weibull, &[0.0]).is_err());
    }

    #[test]
    fn support_checks() {
        assert!(Family::Poisson.supports(3.0));
        assert!(!Family::Poisson.supports(2.5));
        assert!(!Family::Poisson.supports(-1.0));
        assert!(Family::Exponential.supports(0.0));
        assert!(!Family::Gamma { psi: 2.0 }.supports(0.0));
        assert!(Family::Geometric.log_density(1.5, 1.0).is_err());
    }

    #[test]
    fn serde_representation() {
        let f = Family::ZiNegBinomial {
            alpha: 1.5,
            pi: 0.3,
        };
        let json = serde_json::to_string(&f).unwrap();
        assert_eq!(json, r#"{"name":"zi_neg_binomial","alpha":1.5,"pi":0.3}"#);
        assert_eq!(serde_json::from_str::<Family>(&json).unwrap(), f);
    }
}
