//! Maximum likelihood estimation of the static parameters of a GAS model.
//!
//! The optimizer works on an unconstrained vector `u`: positive shapes are
//! `exp(u)`, zero-inflation probabilities `logistic(u)` and the persistence
//! `b = tanh(u)`; `c` and `a` are free. A Nelder-Mead pass localizes the
//! optimum, BFGS refines it and a few Newton steps finish it. Standard errors come from a numerical
//! Hessian of the total log likelihood in `u`, mapped back by the delta
//! method.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::distributions::{DistError, Family, FamilyTag};
use crate::gas::{
    default_f1, filter_loglik, run_filter, GasCoefficients, GasError, GasModel, LinkTag, ScalingTag,
};
use crate::optim::{
    bfgs, nelder_mead, newton_polish, numerical_gradient, numerical_hessian, BfgsOptions,
    NelderMeadOptions, NewtonOptions,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StaticParams {
    pub family: Family,
    pub scaling: ScalingTag,
    pub link: LinkTag,
    pub coeffs: GasCoefficients,
}

impl StaticParams {
    pub fn new(
        family: Family,
        scaling: ScalingTag,
        link: LinkTag,
        coeffs: GasCoefficients,
    ) -> Self {
        Self {
            family,
            scaling,
            link,
            coeffs,
        }
    }

    pub fn tag(&self) -> FamilyTag {
        self.family.tag()
    }

    pub fn model(&self) -> GasModel {
        GasModel::new(self.family, self.scaling, self.link)
    }

    /// Parameter names in vector order: shapes, then `c`, `b`, `a`.
    pub fn names(&self) -> Vec<&'static str> {
        param_names(self.tag())
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.family.shape();
        v.extend([self.coeffs.c, self.coeffs.b, self.coeffs.a]);
        v
    }

    pub fn from_vec(
        tag: FamilyTag,
        scaling: ScalingTag,
        link: LinkTag,
        values: &[f64],
    ) -> Result<Self, DistError> {
        let k = tag.shape_names().len();
        if values.len() != k + 3 {
            return Err(DistError::ShapeArity {
                family: tag,
                expected: k + 3,
                got: values.len(),
            });
        }
        let family = Family::from_shape(tag, &values[..k])?;
        let coeffs = GasCoefficients::new(values[k], values[k + 1], values[k + 2]);
        Ok(Self::new(family, scaling, link, coeffs))
    }
}

pub fn param_names(tag: FamilyTag) -> Vec<&'static str> {
    let mut names = tag.shape_names().to_vec();
    names.extend(["c", "b", "a"]);
    names
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Transform {
    Log,
    Logistic,
    Tanh,
    Identity,
}

impl Transform {
    fn for_name(name: &str) -> Self {
        match name {
            "alpha" | "psi" | "phi" => Transform::Log,
            "pi" => Transform::Logistic,
            "b" => Transform::Tanh,
            _ => Transform::Identity,
        }
    }

    /// Domain-safe range of `u`; keeps `π < 1` and `|b| < 1` in floating point.
    fn bounds(self) -> (f64, f64) {
        match self {
            Transform::Log => (-20.0, 20.0),
            Transform::Logistic => (-40.0, 30.0),
            Transform::Tanh => (-18.0, 18.0),
            Transform::Identity => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    fn to_unconstrained(self, theta: f64) -> f64 {
        let (lo, hi) = self.bounds();
        let u = match self {
            Transform::Log => theta.ln(),
            Transform::Logistic => theta.ln() - (-theta).ln_1p(),
            Transform::Tanh => theta.atanh(),
            Transform::Identity => theta,
        };
        u.clamp(lo, hi)
    }

    fn to_constrained(self, u: f64) -> f64 {
        let (lo, hi) = self.bounds();
        let u = u.clamp(lo, hi);
        let theta = match self {
            Transform::Log => u.exp(),
            Transform::Logistic => 1.0 / (1.0 + (-u).exp()),
            Transform::Tanh => u.tanh(),
            Transform::Identity => u,
        };
        debug_assert!(match self {
            Transform::Log => theta > 0.0,
            Transform::Logistic => (0.0..1.0).contains(&theta),
            Transform::Tanh => theta.abs() < 1.0,
            Transform::Identity => true,
        });
        theta
    }

    /// `dθ / du` at `θ`.
    fn jacobian(self, theta: f64) -> f64 {
        match self {
            Transform::Log => theta,
            Transform::Logistic => theta * (1.0 - theta),
            Transform::Tanh => 1.0 - theta * theta,
            Transform::Identity => 1.0,
        }
    }
}

struct Parametrization {
    tag: FamilyTag,
    scaling: ScalingTag,
    link: LinkTag,
    transforms: Vec<Transform>,
}

impl Parametrization {
    fn new(tag: FamilyTag, scaling: ScalingTag, link: LinkTag) -> Self {
        let transforms = param_names(tag)
            .into_iter()
            .map(Transform::for_name)
            .collect();
        Self {
            tag,
            scaling,
            link,
            transforms,
        }
    }

    fn encode(&self, p: &StaticParams) -> Vec<f64> {
        p.to_vec()
            .iter()
            .zip(&self.transforms)
            .map(|(&v, t)| t.to_unconstrained(v))
            .collect()
    }

    fn constrained(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(&self.transforms)
            .map(|(&v, t)| t.to_constrained(v))
            .collect()
    }

    fn decode(&self, u: &[f64]) -> Result<StaticParams, DistError> {
        StaticParams::from_vec(self.tag, self.scaling, self.link, &self.constrained(u))
    }

    fn jacobian(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .zip(&self.transforms)
            .map(|(&v, t)| t.jacobian(v))
            .collect()
    }
}

#[derive(Debug, Clone, Error)]
pub enum EstimationError {
    #[error("too few observations: {n} < {min}")]
    TooFewObservations { n: usize, min: usize },
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("optimizer did not converge (loglik {:.6})", .0.loglik)]
    NonConvergence(Box<FitResult>),
    #[error("Hessian of the log likelihood is not positive definite")]
    HessianNotPD,
    #[error("invertibility box needs a positive dispersion floor, got alpha- = {alpha_lo}")]
    BoxDegenerate { alpha_lo: f64 },
    #[error("initial parameters are for {got}, expected {expected}")]
    InitMismatch { expected: FamilyTag, got: FamilyTag },
    #[error(transparent)]
    Gas(#[from] GasError),
    #[error(transparent)]
    Distribution(#[from] DistError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub min_obs: usize,
    /// Filter start; `None` uses the link of the sample mean.
    pub f1: Option<f64>,
    /// Nelder-Mead budget; `None` uses `500 * dim`.
    pub nm_max_evals: Option<usize>,
    pub nm_ftol: f64,
    pub nm_xtol: f64,
    pub bfgs: BfgsOptions,
    /// Final Newton steps from the better of the two optima.
    pub newton: NewtonOptions,
    /// Relative step of the numerical Hessian.
    pub hessian_step: f64,
    pub std_errors: bool,
    /// Stationarity threshold on the gradient of the total log likelihood,
    /// relative to `max(1, |n L|)`.
    pub stationarity_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            min_obs: 10,
            f1: None,
            nm_max_evals: None,
            nm_ftol: 1e-9,
            nm_xtol: 1e-4,
            bfgs: BfgsOptions::default(),
            newton: NewtonOptions::default(),
            hessian_step: 1e-4,
            std_errors: true,
            stationarity_tol: 1e-4,
        }
    }
}

/// JSON writes non-finite floats as `null`; read them back as NaN.
fn nullable_f64<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

fn nullable_f64_vec<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<f64>>, D::Error> {
    let v = Option::<Vec<Option<f64>>>::deserialize(d)?;
    Ok(v.map(|v| v.into_iter().map(|x| x.unwrap_or(f64::NAN)).collect()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerTrace {
    #[serde(deserialize_with = "nullable_f64")]
    pub init_loglik: f64,
    pub nm_evals: usize,
    pub nm_iterations: usize,
    pub nm_converged: bool,
    #[serde(deserialize_with = "nullable_f64")]
    pub nm_loglik: f64,
    pub bfgs_evals: usize,
    pub bfgs_iterations: usize,
    pub bfgs_converged: bool,
    #[serde(deserialize_with = "nullable_f64")]
    pub bfgs_loglik: f64,
    pub newton_evals: usize,
    pub newton_iterations: usize,
    /// Stage whose iterate was polished: `"nelder_mead"` or `"bfgs"`.
    pub selected: String,
    /// Largest absolute gradient entry of the total log likelihood in the
    /// unconstrained parameters at the optimum.
    #[serde(deserialize_with = "nullable_f64")]
    pub max_abs_gradient: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InvertibilityReport {
    #[serde(deserialize_with = "nullable_f64")]
    pub condition_a: f64,
    #[serde(deserialize_with = "nullable_f64")]
    pub condition_b: f64,
    pub satisfied: bool,
}

/// Per-parameter bounds for the invertibility diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub alpha: (f64, f64),
    pub pi: (f64, f64),
    pub a: (f64, f64),
    pub b: (f64, f64),
}

impl ParamBox {
    /// The box collapsed to a single parameter point.
    pub fn point(params: &StaticParams) -> Self {
        let alpha = params.family.dispersion().unwrap_or(0.0);
        let pi = params.family.excess_zero_prob();
        Self {
            alpha: (alpha, alpha),
            pi: (pi, pi),
            a: (params.coeffs.a, params.coeffs.a),
            b: (params.coeffs.b, params.coeffs.b),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: StaticParams,
    pub param_names: Vec<String>,
    /// Mean per-observation log likelihood.
    #[serde(deserialize_with = "nullable_f64")]
    pub loglik: f64,
    #[serde(deserialize_with = "nullable_f64")]
    pub aic: f64,
    #[serde(deserialize_with = "nullable_f64_vec")]
    pub std_errors: Option<Vec<f64>>,
    pub n_obs: usize,
    #[serde(deserialize_with = "nullable_f64")]
    pub f1: f64,
    pub converged: bool,
    pub optimizer_trace: OptimizerTrace,
    pub invertibility: Option<InvertibilityReport>,
    pub excess_zero_ratio: Option<f64>,
    pub warnings: Vec<String>,
}

impl FitResult {
    pub fn estimates(&self) -> Vec<f64> {
        self.params.to_vec()
    }

    pub fn q(&self) -> usize {
        self.params.tag().n_free_params()
    }
}

/// Mean per-observation log likelihood of the filter started at `f1`.
///
/// A diverging filter yields `-inf`; other failures are errors.
pub fn log_likelihood(obs: &[f64], params: &StaticParams, f1: f64) -> Result<f64, EstimationError> {
    params.family.validate()?;
    let model = params.model();
    model.check_observations(obs)?;
    match filter_loglik(obs, &model, &params.coeffs, f1) {
        Ok(total) => Ok(total / obs.len() as f64),
        Err(GasError::FilterDiverged { .. } | GasError::FisherUnderflow { .. }) => {
            Ok(f64::NEG_INFINITY)
        }
        Err(e) => Err(e.into()),
    }
}

pub fn aic(fit: &FitResult) -> f64 {
    aic_value(fit.q(), fit.n_obs, fit.loglik)
}

pub fn aic_value(q: usize, n: usize, mean_loglik: f64) -> f64 {
    2.0 * q as f64 - 2.0 * n as f64 * mean_loglik
}

struct Moments {
    mean: f64,
    var: f64,
    zero_frac: f64,
}

fn moments(obs: &[f64]) -> Moments {
    let n = obs.len() as f64;
    let mean = obs.iter().sum::<f64>() / n;
    let var = obs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let zero_frac = obs.iter().filter(|&&x| x == 0.0).count() as f64 / n;
    Moments {
        mean,
        var,
        zero_frac,
    }
}

/// Data-driven starting values.
pub fn default_init(
    obs: &[f64],
    tag: FamilyTag,
    scaling: ScalingTag,
    link: LinkTag,
) -> Result<StaticParams, EstimationError> {
    let m = moments(obs);
    let mean = if m.mean > 0.0 { m.mean } else { 0.1 };
    let nb_alpha = ((m.var - mean) / (mean * mean)).max(0.05);
    let inflation = |model_p0: f64| (m.zero_frac - model_p0).clamp(0.05, 0.9);
    let (shape, pi) = match tag {
        FamilyTag::NegBinomial => (vec![nb_alpha], 0.0),
        FamilyTag::ZiPoisson => {
            let pi = inflation((-mean).exp());
            (vec![pi], pi)
        }
        FamilyTag::ZiGeometric => {
            let pi = inflation(1.0 / (1.0 + mean));
            (vec![pi], pi)
        }
        FamilyTag::ZiNegBinomial => {
            let pi = inflation((-(nb_alpha * mean).ln_1p() / nb_alpha).exp());
            let mu = mean / (1.0 - pi);
            let alpha = ((m.var / mean - 1.0 - pi * mu) / mu).max(0.05);
            (vec![alpha, pi], pi)
        }
        t => (vec![1.0; t.shape_names().len()], 0.0),
    };
    let b = 0.95;
    let mu = if tag.is_discrete() {
        mean / (1.0 - pi)
    } else {
        mean
    };
    let coeffs = GasCoefficients::new((1.0 - b) * link.from_param(mu), b, 0.05);
    let family = Family::from_shape(tag, &shape)?;
    Ok(StaticParams::new(family, scaling, link, coeffs))
}

fn check_data(obs: &[f64], model: &GasModel, min_obs: usize) -> Result<(), EstimationError> {
    if obs.len() < min_obs {
        return Err(EstimationError::TooFewObservations {
            n: obs.len(),
            min: min_obs,
        });
    }
    model.check_observations(obs)?;
    if obs.iter().all(|&x| x == obs[0]) {
        return Err(EstimationError::DegenerateData(format!(
            "all {} observations equal {}",
            obs.len(),
            obs[0]
        )));
    }
    Ok(())
}

pub fn fit(
    obs: &[f64],
    tag: FamilyTag,
    scaling: ScalingTag,
    link: LinkTag,
    init: Option<StaticParams>,
    options: &FitOptions,
) -> Result<FitResult, EstimationError> {
    let probe = GasModel::new(
        default_init(&[1.0], tag, scaling, link)?.family,
        scaling,
        link,
    );
    check_data(obs, &probe, options.min_obs)?;

    let init = match init {
        Some(p) if p.tag() != tag => {
            return Err(EstimationError::InitMismatch {
                expected: tag,
                got: p.tag(),
            })
        }
        Some(p) => StaticParams { scaling, link, ..p },
        None => default_init(obs, tag, scaling, link)?,
    };
    let f1 = options.f1.unwrap_or_else(|| default_f1(obs, link));
    let param = Parametrization::new(tag, scaling, link);
    let objective = |u: &[f64]| -> f64 {
        match param.decode(u) {
            Ok(p) => match filter_loglik(obs, &p.model(), &p.coeffs, f1) {
                Ok(total) => -total,
                Err(_) => f64::INFINITY,
            },
            Err(_) => f64::INFINITY,
        }
    };

    let mut u0 = param.encode(&init);
    let mut init_value = objective(&u0);
    if !init_value.is_finite() {
        // without score feedback the filter cannot diverge
        let k = u0.len();
        u0[k - 1] = 0.0;
        init_value = objective(&u0);
        debug!("initial point infeasible, restarting with a = 0");
    }

    let dim = u0.len();
    let nm_opts = NelderMeadOptions {
        max_evals: options.nm_max_evals.unwrap_or(500 * dim),
        initial_step: 0.1,
        ftol: options.nm_ftol,
        xtol: options.nm_xtol,
    };
    let nm = nelder_mead(objective, &u0, &nm_opts);
    let bf = bfgs(objective, &nm.x, &options.bfgs);
    let (u_best, f_best, selected) = if bf.fx <= nm.fx {
        (&bf.x, bf.fx, "bfgs")
    } else {
        (&nm.x, nm.fx, "nelder_mead")
    };
    let newton = newton_polish(objective, u_best, f_best, &options.newton);
    let (u_hat, value) = (newton.x.clone(), newton.fx);

    let grad = numerical_gradient(objective, &u_hat, options.bfgs.grad_step);
    let max_abs_gradient = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let stationary = max_abs_gradient < options.stationarity_tol * value.abs().max(1.0);
    let converged = value.is_finite() && (bf.converged || stationary);

    let n = obs.len();
    let params = param.decode(&u_hat)?;
    let loglik = -value / n as f64;
    let mut warnings = Vec::new();

    let std_errors = if options.std_errors && value.is_finite() {
        let jac = param.jacobian(&params.to_vec());
        match hessian_std_errors(objective, &u_hat, value, &jac, options.hessian_step) {
            Ok(se) => Some(se),
            Err(e) => {
                warnings.push(format!("standard errors unavailable: {e}"));
                None
            }
        }
    } else {
        None
    };

    let invertibility = if tag.is_discrete() && value.is_finite() {
        let positives: Vec<f64> = obs.iter().copied().filter(|&x| x > 0.0).collect();
        check_invertibility(&params, &positives, &ParamBox::point(&params)).ok()
    } else {
        None
    };
    let excess_zero_ratio = if tag.is_discrete() && value.is_finite() {
        excess_zero_ratio(obs, &params, f1).ok()
    } else {
        None
    };

    if tag.is_zero_inflated() {
        let pi = params.family.excess_zero_prob();
        if !obs.contains(&0.0) {
            warnings.push("data contain no zeros; zero inflation is not identified".into());
        }
        if pi < 1e-3 {
            warnings.push(format!("estimated pi = {pi:.3e} is at the boundary"));
        }
    }
    for w in &warnings {
        warn!("{w}");
    }

    let result = FitResult {
        params,
        param_names: param_names(tag).into_iter().map(String::from).collect(),
        loglik,
        aic: aic_value(tag.n_free_params(), n, loglik),
        std_errors,
        n_obs: n,
        f1,
        converged,
        optimizer_trace: OptimizerTrace {
            init_loglik: -init_value / n as f64,
            nm_evals: nm.evals,
            nm_iterations: nm.iterations,
            nm_converged: nm.converged,
            nm_loglik: -nm.fx / n as f64,
            bfgs_evals: bf.evals,
            bfgs_iterations: bf.iterations,
            bfgs_converged: bf.converged,
            bfgs_loglik: -bf.fx / n as f64,
            newton_evals: newton.evals,
            newton_iterations: newton.iterations,
            selected: selected.to_string(),
            max_abs_gradient,
        },
        invertibility,
        excess_zero_ratio,
        warnings,
    };
    if converged {
        Ok(result)
    } else {
        Err(EstimationError::NonConvergence(Box::new(result)))
    }
}

/// Delta-method standard errors from the Hessian of a negative log
/// likelihood `objective` at its minimizer `u_hat` with value `value`.
///
/// `jacobian[j]` is `dθ_j / du_j`.
pub fn hessian_std_errors<F>(
    objective: F,
    u_hat: &[f64],
    value: f64,
    jacobian: &[f64],
    rel_step: f64,
) -> Result<Vec<f64>, EstimationError>
where
    F: FnMut(&[f64]) -> f64,
{
    let d = u_hat.len();
    let h = numerical_hessian(objective, u_hat, value, rel_step);
    if h.iter().any(|v| !v.is_finite()) {
        return Err(EstimationError::HessianNotPD);
    }
    let chol = DMatrix::from_row_slice(d, d, &h)
        .cholesky()
        .ok_or(EstimationError::HessianNotPD)?;
    (0..d)
        .map(|j| {
            let mut e = DVector::zeros(d);
            e[j] = 1.0;
            let var = chol.solve(&e)[j];
            if var > 0.0 && var.is_finite() {
                Ok(jacobian[j].abs() * var.sqrt())
            } else {
                Err(EstimationError::HessianNotPD)
            }
        })
        .collect()
}

/// Standard errors of `params_hat` (in the order of [`StaticParams::names`])
/// from the observed information of the total log likelihood.
pub fn standard_errors(
    obs: &[f64],
    params_hat: &StaticParams,
    f1: f64,
) -> Result<Vec<f64>, EstimationError> {
    let param = Parametrization::new(params_hat.tag(), params_hat.scaling, params_hat.link);
    let objective = |u: &[f64]| -> f64 {
        match param.decode(u) {
            Ok(p) => filter_loglik(obs, &p.model(), &p.coeffs, f1).map_or(f64::INFINITY, |v| -v),
            Err(_) => f64::INFINITY,
        }
    };
    let u_hat = param.encode(params_hat);
    let value = objective(&u_hat);
    if !value.is_finite() {
        return Err(GasError::FilterDiverged {
            index: 0,
            what: "log likelihood",
        }
        .into());
    }
    let jac = param.jacobian(&param.constrained(&u_hat));
    hessian_std_errors(
        objective,
        &u_hat,
        value,
        &jac,
        FitOptions::default().hessian_step,
    )
}

/// Sufficient invertibility conditions for the unit-scaled ZINB filter.
///
/// Bounds on `a` and `b` enter through their magnitudes. The expectation
/// over positive observations is replaced by the sample mean over
/// `positive_obs`; with no positive observations `condition_b` is NaN and
/// the report is not satisfied.
pub fn check_invertibility(
    params: &StaticParams,
    positive_obs: &[f64],
    bounds: &ParamBox,
) -> Result<InvertibilityReport, EstimationError> {
    if !params.tag().is_discrete() {
        return Err(DistError::Unsupported {
            what: "invertibility diagnostic",
            family: params.tag(),
        }
        .into());
    }
    let (alpha_lo, alpha_hi) = bounds.alpha;
    if !(alpha_lo > 0.0) {
        return Err(EstimationError::BoxDegenerate { alpha_lo });
    }
    let pi_lo = bounds.pi.0;
    let a_hi = bounds.a.0.abs().max(bounds.a.1.abs());
    let b_hi = bounds.b.0.abs().max(bounds.b.1.abs());
    let condition_a = a_hi * (pi_lo - 1.0).powi(2) / (2.0 * alpha_lo)
        + a_hi * (pi_lo - 1.0).abs() / (alpha_lo * alpha_lo)
        + b_hi;
    let positives: Vec<f64> = positive_obs.iter().copied().filter(|&x| x > 0.0).collect();
    let condition_b = if positives.is_empty() {
        f64::NAN
    } else {
        positives
            .iter()
            .map(|&x| (a_hi * (alpha_hi * x + 1.0) / (4.0 * alpha_lo) + b_hi).ln())
            .sum::<f64>()
            / positives.len() as f64
    };
    Ok(InvertibilityReport {
        condition_a,
        condition_b,
        satisfied: condition_a < 1.0 && condition_b < 0.0,
    })
}

/// `π̂` divided by the mean model zero probability along the filtered path.
pub fn excess_zero_ratio(
    obs: &[f64],
    params: &StaticParams,
    f1: f64,
) -> Result<f64, EstimationError> {
    let model = params.model();
    let path = run_filter(obs, &model, &params.coeffs, f1)?;
    let mut total = 0.0;
    for &f in &path.f {
        total += params.family.zero_probability(params.link.to_param(f))?;
    }
    Ok(params.family.excess_zero_prob() / (total / path.len() as f64))
}
