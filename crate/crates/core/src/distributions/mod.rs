//! Observation distributions for duration models.
//!
//! Discrete families (Poisson, geometric, negative binomial and their
//! zero-inflated variants) share the NB2 / ZINB kernels in [`negbin`].
//! Continuous families (exponential, Weibull, gamma, generalized gamma) share
//! the generalized gamma kernels in [`gengamma`]. [`Family`] puts all ten
//! behind one interface keyed by [`FamilyTag`], which is what the filter and
//! the estimator work against.

mod family;
pub mod gengamma;
pub mod negbin;

pub use family::{Family, FamilyTag};
pub use gengamma::{
    exponential_log_pdf, gengamma_cdf, gengamma_fisher_beta, gengamma_log_pdf, gengamma_moments,
    gengamma_sample, gengamma_score_beta, gengamma_sf, GenGammaParams,
};
pub use negbin::{
    nb_fisher_mu, nb_log_norm, nb_log_pmf, nb_score_mu, nb_survival, nb_truncation_point,
    zinb_fisher_mu, zinb_log_pmf, zinb_log_pmf_and_score, zinb_log_pmf_cached, zinb_moments,
    zinb_sample, zinb_score_mu, zinb_zero_prob, LogNormCache, NbParams, ZinbParams,
    POISSON_ALPHA_THRESHOLD,
};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistError {
    #[error("invalid parameter {name} = {value} (expected {expected})")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },
    #[error("observation {0} is outside the support of the distribution")]
    OutsideSupport(f64),
    #[error("{what} is not available for the {family:?} family")]
    Unsupported {
        what: &'static str,
        family: FamilyTag,
    },
    #[error("wrong number of shape parameters for {family:?}: expected {expected}, got {got}")]
    ShapeArity {
        family: FamilyTag,
        expected: usize,
        got: usize,
    },
}

pub(crate) fn check_positive(name: &'static str, value: f64) -> Result<(), DistError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(DistError::InvalidParameter {
            name,
            value,
            expected: "finite and > 0",
        })
    }
}
