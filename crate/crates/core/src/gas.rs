//! Score-driven filter for a single time-varying parameter.
//!
//! The recursion is `f[i+1] = c + b f[i] + a s(x[i], f[i])`, where `f` lives
//! on the unbounded link scale and `s` is the score of the observation
//! density with respect to `f`, multiplied by one of three scalings.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::{DistError, Family, LogNormCache};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GasCoefficients {
    pub c: f64,
    pub b: f64,
    pub a: f64,
}

impl GasCoefficients {
    pub fn new(c: f64, b: f64, a: f64) -> Self {
        Self { c, b, a }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum ScalingTag {
    #[default]
    #[serde(rename = "unit")]
    Unit,
    #[serde(rename = "invsqrt")]
    InvSqrtFisher,
    #[serde(rename = "inv")]
    InvFisher,
}

impl FromStr for ScalingTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "unit" => Ok(ScalingTag::Unit),
            "invsqrt" => Ok(ScalingTag::InvSqrtFisher),
            "inv" => Ok(ScalingTag::InvFisher),
            other => Err(format!(
                "unknown scaling '{other}' (expected unit, invsqrt or inv)"
            )),
        }
    }
}

impl fmt::Display for ScalingTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScalingTag::Unit => "unit",
            ScalingTag::InvSqrtFisher => "invsqrt",
            ScalingTag::InvFisher => "inv",
        })
    }
}

/// Map between the distribution parameter `θ` and the filtered value `f`.
///
/// `ExpFloor` is used for geometric models of data produced by flooring an
/// exponential variable to `decimals` decimal places: `f` is the log of the
/// exponential scale `β` (in the original time unit) while the geometric
/// mean of the integer counts `⌊10^d x⌋` is `1 / (exp(1 / (10^d β)) - 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LinkTag {
    #[default]
    Log,
    Identity,
    ExpFloor {
        decimals: u32,
    },
}

impl FromStr for LinkTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "log" => Ok(LinkTag::Log),
            "identity" => Ok(LinkTag::Identity),
            other => match other.strip_prefix("expfloor") {
                Some(d) => d
                    .trim_start_matches(':')
                    .parse()
                    .map(|decimals| LinkTag::ExpFloor { decimals })
                    .map_err(|_| format!("bad expfloor decimals in '{other}'")),
                None => Err(format!("unknown link '{other}' (expected log)")),
            },
        }
    }
}

impl LinkTag {
    fn floor_scale(decimals: u32) -> f64 {
        10f64.powi(decimals as i32)
    }

    /// `θ = H⁻¹(f)`.
    pub fn to_param(self, f: f64) -> f64 {
        match self {
            LinkTag::Log => f.exp(),
            LinkTag::Identity => f,
            LinkTag::ExpFloor { decimals } => {
                let g = (-f).exp() / Self::floor_scale(decimals);
                1.0 / g.exp_m1()
            }
        }
    }

    /// `f = H(θ)`.
    pub fn from_param(self, theta: f64) -> f64 {
        match self {
            LinkTag::Log => theta.ln(),
            LinkTag::Identity => theta,
            LinkTag::ExpFloor { decimals } => {
                -(1.0 / theta).ln_1p().ln() - Self::floor_scale(decimals).ln()
            }
        }
    }

    /// `dθ / df`, the inverse Jacobian of the link.
    pub fn dparam_df(self, f: f64) -> f64 {
        match self {
            LinkTag::Log => f.exp(),
            LinkTag::Identity => 1.0,
            LinkTag::ExpFloor { decimals } => {
                let g = (-f).exp() / Self::floor_scale(decimals);
                let mu = 1.0 / g.exp_m1();
                g * mu * (1.0 + mu)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GasError {
    #[error("filter diverged at observation {index}: {what} is not finite")]
    FilterDiverged { index: usize, what: &'static str },
    #[error("observation {index} = {value} is not in the support of the {family} family")]
    IncompatibleObservations {
        index: usize,
        value: f64,
        family: String,
    },
    #[error("empty observation sequence")]
    Empty,
    #[error("Fisher information underflows at f = {f}")]
    FisherUnderflow { f: f64 },
    #[error("unconditional value undefined for b = 1")]
    UnitRoot,
    #[error(transparent)]
    Distribution(#[from] DistError),
}

/// The observation model driven by the filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GasModel {
    pub family: Family,
    #[serde(default)]
    pub scaling: ScalingTag,
    #[serde(default)]
    pub link: LinkTag,
}

impl GasModel {
    pub fn new(family: Family, scaling: ScalingTag, link: LinkTag) -> Self {
        Self {
            family,
            scaling,
            link,
        }
    }

    pub fn check_observations(&self, obs: &[f64]) -> Result<(), GasError> {
        match obs.iter().position(|&x| !self.family.supports(x)) {
            Some(index) => Err(GasError::IncompatibleObservations {
                index,
                value: obs[index],
                family: self.family.tag().to_string(),
            }),
            None => Ok(()),
        }
    }
}

/// Scaled score `s(x, f)` on the link scale.
pub fn reparam_score(model: &GasModel, x: f64, f: f64) -> Result<f64, GasError> {
    let theta = model.link.to_param(f);
    let grad = model.link.dparam_df(f) * model.family.score(x, theta)?;
    scale_score(model, grad, f, theta)
}

fn scale_score(model: &GasModel, grad: f64, f: f64, theta: f64) -> Result<f64, GasError> {
    if model.scaling == ScalingTag::Unit {
        return Ok(grad);
    }
    let d = model.link.dparam_df(f);
    let info = d * d * model.family.fisher(theta)?;
    if !(info > 0.0 && info.is_finite()) {
        return Err(GasError::FisherUnderflow { f });
    }
    Ok(match model.scaling {
        ScalingTag::InvFisher => grad / info,
        ScalingTag::InvSqrtFisher => grad / info.sqrt(),
        ScalingTag::Unit => unreachable!(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterStep {
    /// Filtered value used to score the observation.
    pub f: f64,
    pub score: f64,
    pub loglik: f64,
}

/// Incremental form of the filter: holds the predicted `f` for the next
/// observation.
#[derive(Debug, Clone)]
pub struct GasFilter<'m> {
    model: &'m GasModel,
    coeffs: GasCoefficients,
    f: f64,
    index: usize,
    cache: LogNormCache,
}

impl<'m> GasFilter<'m> {
    pub fn new(model: &'m GasModel, coeffs: GasCoefficients, f1: f64) -> Self {
        Self {
            model,
            coeffs,
            f: f1,
            index: 0,
            cache: LogNormCache::new(),
        }
    }

    /// Predicted `f` for the next observation.
    pub fn predicted(&self) -> f64 {
        self.f
    }

    pub fn index(&self) -> usize {
        self.index
    }

    /// Log density of `x` at the current prediction, without advancing.
    pub fn log_density(&mut self, x: f64) -> Result<f64, GasError> {
        let theta = self.model.link.to_param(self.f);
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(GasError::FilterDiverged {
                index: self.index,
                what: "parameter",
            });
        }
        Ok(self
            .model
            .family
            .log_density_cached(x, theta, &mut self.cache)?)
    }

    /// Scores `x` at the current prediction and advances the recursion.
    pub fn update(&mut self, x: f64) -> Result<FilterStep, GasError> {
        let index = self.index;
        let diverged = |what| GasError::FilterDiverged { index, what };
        if !self.model.family.supports(x) {
            return Err(GasError::IncompatibleObservations {
                index,
                value: x,
                family: self.model.family.tag().to_string(),
            });
        }
        let f = self.f;
        let theta = self.model.link.to_param(f);
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(diverged("parameter"));
        }
        let fam = &self.model.family;
        let (loglik, raw_score) = fam.log_density_and_score(x, theta, &mut self.cache)?;
        if !loglik.is_finite() {
            return Err(diverged("log likelihood"));
        }
        let dtheta = match self.model.link {
            LinkTag::Log => theta,
            link => link.dparam_df(f),
        };
        let grad = dtheta * raw_score;
        let score = scale_score(self.model, grad, f, theta)?;
        if !score.is_finite() {
            return Err(diverged("score"));
        }
        let next = self.coeffs.c + self.coeffs.b * f + self.coeffs.a * score;
        if !next.is_finite() {
            return Err(diverged("f"));
        }
        self.f = next;
        self.index += 1;
        Ok(FilterStep { f, score, loglik })
    }

    /// Advances without scoring, as if the next observation were skipped.
    pub fn skip(&mut self) {
        self.index += 1;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterPath {
    pub f: Vec<f64>,
    pub s: Vec<f64>,
    pub loglik_terms: Vec<f64>,
    /// Prediction for the observation after the last one.
    pub f_next: f64,
}

impl FilterPath {
    pub fn len(&self) -> usize {
        self.f.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f.is_empty()
    }

    pub fn loglik_sum(&self) -> f64 {
        self.loglik_terms.iter().sum()
    }
}

pub fn run_filter(
    obs: &[f64],
    model: &GasModel,
    coeffs: &GasCoefficients,
    f1: f64,
) -> Result<FilterPath, GasError> {
    if obs.is_empty() {
        return Err(GasError::Empty);
    }
    model.check_observations(obs)?;
    let n = obs.len();
    let mut path = FilterPath {
        f: Vec::with_capacity(n),
        s: Vec::with_capacity(n),
        loglik_terms: Vec::with_capacity(n),
        f_next: f1,
    };
    let mut filter = GasFilter::new(model, *coeffs, f1);
    for &x in obs {
        let step = filter.update(x)?;
        path.f.push(step.f);
        path.s.push(step.score);
        path.loglik_terms.push(step.loglik);
    }
    path.f_next = filter.predicted();
    Ok(path)
}

/// Sum of the log likelihood contributions, accumulated in the same order as
/// [`FilterPath::loglik_sum`] but without storing the path.
pub fn filter_loglik(
    obs: &[f64],
    model: &GasModel,
    coeffs: &GasCoefficients,
    f1: f64,
) -> Result<f64, GasError> {
    if obs.is_empty() {
        return Err(GasError::Empty);
    }
    let mut filter = GasFilter::new(model, *coeffs, f1);
    let mut total = 0.0;
    for &x in obs {
        total += filter.update(x)?.loglik;
    }
    Ok(total)
}

/// Unconditional mean `c / (1 - b)` of `f`.
pub fn unconditional_value(coeffs: &GasCoefficients) -> Result<f64, GasError> {
    if coeffs.b == 1.0 {
        return Err(GasError::UnitRoot);
    }
    Ok(coeffs.c / (1.0 - coeffs.b))
}

/// Unconditional value mapped to the parameter scale through the link.
pub fn unconditional_param(coeffs: &GasCoefficients, link: LinkTag) -> Result<f64, GasError> {
    unconditional_value(coeffs).map(|f| link.to_param(f))
}

/// Default filter start: the link of the sample mean, or of 0.1 when the
/// mean is zero.
pub fn default_f1(obs: &[f64], link: LinkTag) -> f64 {
    let mean = if obs.is_empty() {
        0.0
    } else {
        obs.iter().sum::<f64>() / obs.len() as f64
    };
    link.from_param(if mean > 0.0 { mean } else { 0.1 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zinb(alpha: f64, pi: f64) -> GasModel {
        GasModel::new(
            Family::ZiNegBinomial { alpha, pi },
            ScalingTag::Unit,
            LinkTag::Log,
        )
    }

    #[test]
    fn unit_score_positive_branch() {
        let m = zinb(1.3, 0.4);
        for &(x, f) in &[(1.0, 0.2), (5.0, 1.7), (12.0, -0.5)] {
            let mu: f64 = f64::exp(f);
            let want = (x - mu) / (1.3 * mu + 1.0);
            let got = reparam_score(&m, x, f).unwrap();
            assert!((got - want).abs() < 1e-14 * want.abs().max(1.0));
        }
    }

    #[test]
    fn unit_score_zero_branch() {
        let (alpha, pi) = (1.3, 0.4);
        let m = zinb(alpha, pi);
        for &f in &[-1.0, 0.3, 2.0] {
            let mu: f64 = f64::exp(f);
            let am1 = alpha * mu + 1.0;
            let want = (pi - 1.0) * mu / (am1 * (1.0 + pi * am1.powf(1.0 / alpha) - pi));
            let got = reparam_score(&m, 0.0, f).unwrap();
            assert!((got - want).abs() < 1e-14, "{got} vs {want}");
        }
    }

    #[test]
    fn score_vanishes_at_mean() {
        let m = GasModel::new(
            Family::NegBinomial { alpha: 0.8 },
            ScalingTag::Unit,
            LinkTag::Log,
        );
        assert!(reparam_score(&m, 4.0, 4f64.ln()).unwrap().abs() < 1e-15);
    }

    #[test]
    fn inverse_fisher_scaling_for_log_link() {
        let fam = Family::NegBinomial { alpha: 0.8 };
        let m = GasModel::new(fam, ScalingTag::InvFisher, LinkTag::Log);
        let f = 1.1f64;
        let mu = f.exp();
        let want = fam.score(3.0, mu).unwrap() / (mu * fam.fisher(mu).unwrap());
        assert!((reparam_score(&m, 3.0, f).unwrap() - want).abs() < 1e-13);
        let m = GasModel::new(fam, ScalingTag::InvSqrtFisher, LinkTag::Log);
        let want = mu * fam.score(3.0, mu).unwrap() / (mu * mu * fam.fisher(mu).unwrap()).sqrt();
        assert!((reparam_score(&m, 3.0, f).unwrap() - want).abs() < 1e-13);
    }

    #[test]
    fn degenerate_recursions() {
        let m = zinb(1.0, 0.2);
        let obs = [0.0, 3.0, 1.0, 0.0, 7.0];
        let p = run_filter(&obs, &m, &GasCoefficients::new(0.4, 0.0, 0.0), -2.0).unwrap();
        assert_eq!(p.f[0], -2.0);
        assert!(p.f[1..].iter().all(|&f| f == 0.4));
        let obs = vec![1.0; 40];
        let p = run_filter(&obs, &m, &GasCoefficients::new(0.1, 0.9, 0.0), 0.0).unwrap();
        for (i, &f) in p.f.iter().enumerate() {
            assert!((f - (1.0 - 0.9f64.powi(i as i32))).abs() < 1e-13);
        }
    }

    #[test]
    fn hand_traced_zinb_path() {
        // 50-digit evaluation of the recursion, one step at a time
        let f_want = [
            0.5,
            0.446_059_342_124_979_846_58,
            0.464_461_569_185_537_733_94,
            0.414_124_460_894_325_251_99,
            0.368_908_365_074_740_636_27,
            0.527_260_105_824_825_380_42,
            0.474_929_454_393_142_920_9,
            0.423_529_890_640_355_028,
            0.415_538_932_064_573_412_82,
            0.714_349_096_225_544_756_48,
        ];
        let ll_want = [
            -0.502_153_533_101_738_121_63,
            -2.933_093_364_049_380_862_7,
            -0.493_653_939_024_785_125_84,
            -0.481_649_066_831_273_674_25,
            -4.747_002_524_831_002_220_6,
            -1.936_963_804_507_915_150_2,
            -0.496_155_643_862_175_311_55,
            -2.462_994_441_233_357_513_3,
            -6.663_399_392_673_167_081_6,
            -0.553_631_966_953_902_184_46,
        ];
        let obs = [0.0, 3.0, 0.0, 0.0, 7.0, 1.0, 0.0, 2.0, 12.0, 0.0];
        let p = run_filter(
            &obs,
            &zinb(1.5, 0.3),
            &GasCoefficients::new(0.02, 0.9, 0.1),
            0.5,
        )
        .unwrap();
        for i in 0..10 {
            assert!((p.f[i] - f_want[i]).abs() < 1e-13, "f[{i}]");
            assert!((p.loglik_terms[i] - ll_want[i]).abs() < 1e-13, "ll[{i}]");
        }
        assert!((p.loglik_sum() - (-21.270_697_677_068_697_246)).abs() < 1e-12);
    }

    #[test]
    fn filter_loglik_matches_path_sum_exactly() {
        let obs = [0.0, 3.0, 0.0, 0.0, 7.0, 1.0, 0.0, 2.0, 12.0, 0.0];
        let m = zinb(1.5, 0.3);
        let k = GasCoefficients::new(0.02, 0.9, 0.1);
        let p = run_filter(&obs, &m, &k, 0.5).unwrap();
        assert_eq!(p.loglik_sum(), filter_loglik(&obs, &m, &k, 0.5).unwrap());
    }

    #[test]
    fn contraction_without_score_feedback() {
        let m = zinb(1.0, 0.2);
        let obs = vec![2.0; 1000];
        let k = GasCoefficients::new(0.3, -0.7, 0.0);
        let p = run_filter(&obs, &m, &k, 5.0).unwrap();
        let limit = 0.3 / 1.7;
        assert!((p.f_next - limit).abs() < 1e-10);
    }

    #[test]
    fn rejects_incompatible_and_divergent_input() {
        let m = zinb(1.0, 0.2);
        let k = GasCoefficients::new(0.0, 0.9, 0.1);
        assert!(matches!(
            run_filter(&[1.0, 2.5], &m, &k, 0.0),
            Err(GasError::IncompatibleObservations { index: 1, .. })
        ));
        assert!(matches!(run_filter(&[], &m, &k, 0.0), Err(GasError::Empty)));
        let wild = GasCoefficients::new(0.0, 1.0, 50.0);
        let obs = [1000.0; 50];
        assert!(matches!(
            run_filter(&obs, &m, &wild, 0.0),
            Err(GasError::FilterDiverged { .. })
        ));
    }

    #[test]
    fn identity_link_requires_positive_parameter() {
        let m = GasModel::new(Family::Poisson, ScalingTag::Unit, LinkTag::Identity);
        let k = GasCoefficients::new(0.0, 1.0, 0.0);
        assert!(run_filter(&[1.0], &m, &k, -1.0).is_err());
        let p = run_filter(&[1.0, 2.0], &m, &GasCoefficients::new(0.5, 0.5, 0.1), 1.0).unwrap();
        // Poisson identity-link unit score is (x - μ) / μ
        assert_eq!(p.s[0], 0.0);
    }

    #[test]
    fn unconditional_values() {
        assert_eq!(
            unconditional_value(&GasCoefficients::new(0.0, 0.9, 0.1)).unwrap(),
            0.0
        );
        assert_eq!(
            unconditional_param(&GasCoefficients::new(0.0, 0.9, 0.1), LinkTag::Log).unwrap(),
            1.0
        );
        assert_eq!(
            unconditional_value(&GasCoefficients::new(1.0, 0.0, 0.3)).unwrap(),
            1.0
        );
        let mu = unconditional_param(&GasCoefficients::new(0.0013, 0.9991, 0.0781), LinkTag::Log)
            .unwrap();
        assert!((mu - (0.0013f64 / 0.0009).exp()).abs() < 1e-9 && (mu - 4.24).abs() < 0.01);
        assert!(matches!(
            unconditional_value(&GasCoefficients::new(0.1, 1.0, 0.1)),
            Err(GasError::UnitRoot)
        ));
    }

    #[test]
    fn exp_floor_link_is_consistent() {
        for d in 0..3 {
            let link = LinkTag::ExpFloor { decimals: d };
            for &f in &[-2.0, 0.0, 0.7, 3.0] {
                let theta = link.to_param(f);
                assert!((link.from_param(theta) - f).abs() < 1e-11);
                let h = 1e-6;
                let fd = (link.to_param(f + h) - link.to_param(f - h)) / (2.0 * h);
                assert!((fd - link.dparam_df(f)).abs() < 1e-6 * fd.abs().max(1.0));
            }
        }
        // β = 1/ln 2 gives a geometric mean of one for integer flooring
        let f = (1.0 / 2f64.ln()).ln();
        assert!((LinkTag::ExpFloor { decimals: 0 }.to_param(f) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn default_start() {
        assert!((default_f1(&[1.0, 3.0], LinkTag::Log) - 2f64.ln()).abs() < 1e-15);
        assert!((default_f1(&[0.0, 0.0], LinkTag::Log) - 0.1f64.ln()).abs() < 1e-15);
    }
}
