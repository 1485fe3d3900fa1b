//! One-step-ahead log scores and the Diebold-Mariano test.

use log::info;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::distributions::{DistError, Family};
use crate::estimation::{FitResult, StaticParams};
use crate::gas::{GasError, GasFilter, LinkTag};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("out-of-sample window is empty")]
    EmptyOutOfSample,
    #[error("fit did not converge")]
    NotConverged,
    #[error("score sequences differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 finite score pairs, got {0}")]
    TooFewPairs(usize),
    #[error("score differences have zero variance")]
    ZeroVariance,
    #[error("interval scores need a continuous family")]
    NotContinuous,
    #[error(transparent)]
    Gas(#[from] GasError),
    #[error(transparent)]
    Distribution(#[from] DistError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    /// Position within the out-of-sample window.
    pub index: usize,
    /// Predicted time-varying parameter on the link scale.
    pub f_pred: f64,
    pub log_score: f64,
}

/// Predictive log scores over `out_sample` with the parameters of `fit`.
pub fn forecast_scores(
    in_sample: &[f64],
    out_sample: &[f64],
    fit: &FitResult,
) -> Result<Vec<ForecastRecord>, EvalError> {
    if !fit.converged {
        return Err(EvalError::NotConverged);
    }
    forecast_scores_with(in_sample, out_sample, &fit.params, fit.f1)
}

/// The filter runs from `f1` through `in_sample` and continues through
/// `out_sample` with the parameters frozen.
pub fn forecast_scores_with(
    in_sample: &[f64],
    out_sample: &[f64],
    params: &StaticParams,
    f1: f64,
) -> Result<Vec<ForecastRecord>, EvalError> {
    if out_sample.is_empty() {
        return Err(EvalError::EmptyOutOfSample);
    }
    let model = params.model();
    model.check_observations(in_sample)?;
    model.check_observations(out_sample)?;
    let mut filter = GasFilter::new(&model, params.coeffs, f1);
    for &x in in_sample {
        filter.update(x)?;
    }
    out_sample
        .iter()
        .enumerate()
        .map(|(index, &x)| {
            let step = filter.update(x)?;
            Ok(ForecastRecord {
                index,
                f_pred: step.f,
                log_score: step.loglik,
            })
        })
        .collect()
}

/// `log P[floor(x) <= X < floor(x) + 1]` under a continuous family.
///
/// Returns `-inf` when the interval probability underflows.
pub fn interval_log_score(
    x: f64,
    family: &Family,
    f_pred: f64,
    link: LinkTag,
) -> Result<f64, EvalError> {
    if family.is_discrete() {
        return Err(EvalError::NotContinuous);
    }
    if !(x >= 0.0 && x.is_finite()) {
        return Err(DistError::OutsideSupport(x).into());
    }
    let theta = link.to_param(f_pred);
    let lo = x.floor();
    let hi = lo + 1.0;
    let lower_cdf = family.cdf(lo, theta)?;
    let p = if lower_cdf > 0.5 {
        family.sf(lo, theta)? - family.sf(hi, theta)?
    } else {
        family.cdf(hi, theta)? - lower_cdf
    };
    Ok(if p > 0.0 { p.ln() } else { f64::NEG_INFINITY })
}

/// How a continuous model treats close-to-zero values when filtering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NearZero {
    /// Values below `eps` are scored but skipped by the filter update.
    Discard { eps: f64 },
    /// Values below `eps` are replaced by `eps` in the filter update.
    Truncate { eps: f64 },
}

/// Interval log scores of a continuous model over `out_sample` (raw
/// durations). The filter is run through the already treated `in_sample`
/// and then updated with each treated out-of-sample value.
pub fn forecast_interval_scores(
    in_sample: &[f64],
    out_sample: &[f64],
    params: &StaticParams,
    f1: f64,
    near_zero: NearZero,
) -> Result<Vec<ForecastRecord>, EvalError> {
    if params.family.is_discrete() {
        return Err(EvalError::NotContinuous);
    }
    if out_sample.is_empty() {
        return Err(EvalError::EmptyOutOfSample);
    }
    let model = params.model();
    let mut filter = GasFilter::new(&model, params.coeffs, f1);
    for &x in in_sample {
        filter.update(x)?;
    }
    out_sample
        .iter()
        .enumerate()
        .map(|(index, &x)| {
            let f_pred = filter.predicted();
            let log_score = interval_log_score(x, &params.family, f_pred, params.link)?;
            match near_zero {
                NearZero::Discard { eps } if x < eps => filter.skip(),
                NearZero::Discard { .. } => {
                    filter.update(x)?;
                }
                NearZero::Truncate { eps } => {
                    filter.update(x.max(eps))?;
                }
            }
            Ok(ForecastRecord {
                index,
                f_pred,
                log_score,
            })
        })
        .collect()
}

pub fn mean_log_score(records: &[ForecastRecord]) -> f64 {
    records.iter().map(|r| r.log_score).sum::<f64>() / records.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DmResult {
    pub statistic: f64,
    pub mean_diff: f64,
    pub sd_diff: f64,
    /// Number of score pairs used.
    pub m: usize,
    /// Pairs dropped because either score was not finite.
    pub excluded: usize,
    /// Two-sided p-value under the standard normal limit.
    pub p_value: f64,
}

/// Diebold-Mariano statistic for `D_i = ls_a[i] - ls_b[i]`; positive values
/// favour `ls_a`.
pub fn diebold_mariano(ls_a: &[f64], ls_b: &[f64]) -> Result<DmResult, EvalError> {
    if ls_a.len() != ls_b.len() {
        return Err(EvalError::LengthMismatch(ls_a.len(), ls_b.len()));
    }
    let d: Vec<f64> = ls_a
        .iter()
        .zip(ls_b)
        .filter(|(a, b)| a.is_finite() && b.is_finite())
        .map(|(a, b)| a - b)
        .collect();
    let excluded = ls_a.len() - d.len();
    if excluded > 0 {
        info!("excluded {excluded} non-finite score pairs from the DM test");
    }
    let m = d.len();
    if m < 2 {
        return Err(EvalError::TooFewPairs(m));
    }
    let mean_diff = d.iter().sum::<f64>() / m as f64;
    let var = d.iter().map(|v| (v - mean_diff).powi(2)).sum::<f64>() / (m - 1) as f64;
    let sd_diff = var.sqrt();
    if !(sd_diff > 0.0) {
        return Err(EvalError::ZeroVariance);
    }
    let statistic = (m as f64).sqrt() * mean_diff / sd_diff;
    Ok(DmResult {
        statistic,
        mean_diff,
        sd_diff,
        m,
        excluded,
        p_value: erfc(statistic.abs() / std::f64::consts::SQRT_2),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gas::{GasCoefficients, ScalingTag};

    fn params(family: Family, c: f64, b: f64, a: f64) -> StaticParams {
        StaticParams::new(
            family,
            ScalingTag::Unit,
            LinkTag::Log,
            GasCoefficients::new(c, b, a),
        )
    }

    #[test]
    fn constant_model_scores_the_pmf() {
        let p = params(Family::NegBinomial { alpha: 0.5 }, 1.0, 0.0, 0.0);
        let r = forecast_scores_with(&[2.0, 3.0], &[4.0], &p, 1.0).unwrap();
        let want = Family::NegBinomial { alpha: 0.5 }
            .log_density(4.0, 1f64.exp())
            .unwrap();
        assert_eq!(r[0].log_score, want);
        assert_eq!(r[0].f_pred, 1.0);
    }

    #[test]
    fn out_of_sample_terms_match_the_full_filter() {
        let p = params(
            Family::ZiNegBinomial {
                alpha: 1.5,
                pi: 0.3,
            },
            0.02,
            0.9,
            0.1,
        );
        let xs = [0.0, 3.0, 0.0, 0.0, 7.0, 1.0, 0.0, 2.0, 12.0, 0.0];
        let full = crate::gas::run_filter(&xs, &p.model(), &p.coeffs, 0.5).unwrap();
        let r = forecast_scores_with(&xs[..6], &xs[6..], &p, 0.5).unwrap();
        for (k, rec) in r.iter().enumerate() {
            assert_eq!(rec.log_score, full.loglik_terms[6 + k]);
            assert_eq!(rec.f_pred, full.f[6 + k]);
        }
        assert!(forecast_scores_with(&xs, &[], &p, 0.5).is_err());
    }

    #[test]
    fn exponential_interval_score() {
        let fam = Family::Exponential;
        for &x in &[0.0, 0.3, 0.99] {
            let ls = interval_log_score(x, &fam, 0.0, LinkTag::Log).unwrap();
            assert!((ls - (1.0 - (-1f64).exp()).ln()).abs() < 1e-15);
        }
        let ls = interval_log_score(2.5, &fam, 0.0, LinkTag::Log).unwrap();
        let want = ((-2f64).exp() - (-3f64).exp()).ln();
        assert!((ls - want).abs() < 1e-14);
        assert!(interval_log_score(1.0, &Family::Poisson, 0.0, LinkTag::Log).is_err());
    }

    #[test]
    fn interval_score_underflow_is_minus_infinity() {
        let ls = interval_log_score(5000.0, &Family::Exponential, 0.0, LinkTag::Log).unwrap();
        assert_eq!(ls, f64::NEG_INFINITY);
    }

    #[test]
    fn dm_examples() {
        assert_eq!(
            diebold_mariano(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]),
            Err(EvalError::ZeroVariance)
        );
        let r = diebold_mariano(&[1.0, -1.0, 1.0, -1.0], &[0.0; 4]).unwrap();
        assert_eq!(r.mean_diff, 0.0);
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        let r =
            diebold_mariano(&[0.0, 1.0, f64::NEG_INFINITY, 3.0], &[0.5, 0.5, 0.0, 0.0]).unwrap();
        assert_eq!((r.m, r.excluded), (3, 1));
        assert!(diebold_mariano(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn dm_known_value() {
        // D = {1, 2, 3, 4}: mean 2.5, sd sqrt(5/3)
        let r = diebold_mariano(&[1.0, 2.0, 3.0, 4.0], &[0.0; 4]).unwrap();
        assert!((r.statistic - 2.0 * 2.5 / (5.0f64 / 3.0).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn discard_skips_and_truncate_clamps() {
        let p = params(Family::Exponential, 0.0, 0.9, 0.1);
        let out = [0.0004, 1.2, 0.5];
        let d = forecast_interval_scores(&[1.0], &out, &p, 0.0, NearZero::Discard { eps: 1e-3 })
            .unwrap();
        assert_eq!(d[1].f_pred, d[0].f_pred);
        let t = forecast_interval_scores(&[1.0], &out, &p, 0.0, NearZero::Truncate { eps: 1e-3 })
            .unwrap();
        assert_eq!(t[0].log_score, d[0].log_score);
        assert_ne!(t[1].f_pred, d[1].f_pred);
    }
}
