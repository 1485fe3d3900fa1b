//! Monte-Carlo tools: GAS path simulation and the rounding study.
//!
//! Every replication draws from its own ChaCha8 stream, selected by the
//! replication index on top of a common seed, so results do not depend on
//! scheduling.

use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distributions::{DistError, Family, FamilyTag};
use crate::estimation::{fit, EstimationError, FitOptions, StaticParams};
use crate::gas::{
    reparam_score, unconditional_value, GasCoefficients, GasError, GasModel, LinkTag, ScalingTag,
};

/// Attempts per path before giving up on a diverging recursion.
pub const MAX_PATH_RETRIES: usize = 10;

#[derive(Debug, Clone, Error)]
pub enum SimError {
    #[error("invalid design: {0}")]
    InvalidDesign(String),
    #[error("filter diverged in {attempts} consecutive attempts")]
    Diverged { attempts: usize },
    #[error(transparent)]
    Gas(#[from] GasError),
    #[error(transparent)]
    Distribution(#[from] DistError),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for SimError {
    fn from(e: std::io::Error) -> Self {
        SimError::Io(e.to_string())
    }
}

impl From<csv::Error> for SimError {
    fn from(e: csv::Error) -> Self {
        SimError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimDesign {
    pub family: Family,
    pub coeffs: GasCoefficients,
    #[serde(default)]
    pub scaling: ScalingTag,
    #[serde(default)]
    pub link: LinkTag,
    pub n_obs: usize,
    pub n_reps: usize,
    /// Decimal places kept when rounding down; `None` leaves data unrounded.
    #[serde(default)]
    pub rounding: Option<u32>,
    pub seed: u64,
}

impl SimDesign {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_obs < 2 {
            return Err(SimError::InvalidDesign(format!(
                "n_obs = {} < 2",
                self.n_obs
            )));
        }
        if self.n_reps < 1 {
            return Err(SimError::InvalidDesign("n_reps must be at least 1".into()));
        }
        if self.coeffs.b.abs() >= 1.0 {
            return Err(SimError::InvalidDesign(format!(
                "|b| = {} must be below 1",
                self.coeffs.b.abs()
            )));
        }
        self.family.validate()?;
        Ok(())
    }

    pub fn model(&self) -> GasModel {
        GasModel::new(self.family, self.scaling, self.link)
    }
}

/// RNG for replication `rep` under `seed`.
pub fn rng_for(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    rng
}

/// Runs `job` for replications `0..n_reps` in parallel, in index order.
pub fn replicate<T, F>(seed: u64, n_reps: usize, job: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &mut ChaCha8Rng) -> T + Sync,
{
    (0..n_reps)
        .into_par_iter()
        .map(|rep| job(rep, &mut rng_for(seed, rep)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimPath {
    pub x: Vec<f64>,
    /// Filtered value used to draw each observation.
    pub f: Vec<f64>,
    /// Paths discarded because the recursion diverged.
    pub retries: usize,
}

/// Simulates `n_obs` observations from the GAS recursion started at its
/// unconditional value. Rounding in the design is not applied here.
pub fn simulate_path<R: Rng + ?Sized>(
    design: &SimDesign,
    rng: &mut R,
) -> Result<SimPath, SimError> {
    design.validate()?;
    let model = design.model();
    let k = design.coeffs;
    let f1 = unconditional_value(&k)?;
    for retries in 0..MAX_PATH_RETRIES {
        let mut x = Vec::with_capacity(design.n_obs);
        let mut f = Vec::with_capacity(design.n_obs);
        let mut fi = f1;
        let mut ok = true;
        for _ in 0..design.n_obs {
            let theta = design.link.to_param(fi);
            if !(theta > 0.0 && theta.is_finite()) {
                ok = false;
                break;
            }
            let xi = design.family.sample(theta, rng)?;
            let s = match reparam_score(&model, xi, fi) {
                Ok(s) if s.is_finite() => s,
                _ => {
                    ok = false;
                    break;
                }
            };
            x.push(xi);
            f.push(fi);
            fi = k.c + k.b * fi + k.a * s;
            if !fi.is_finite() {
                ok = false;
                break;
            }
        }
        if ok {
            return Ok(SimPath { x, f, retries });
        }
    }
    Err(SimError::Diverged {
        attempts: MAX_PATH_RETRIES,
    })
}

/// `floor(x * 10^d) / 10^d`.
pub fn round_down(x: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    (x * scale).floor() / scale
}

/// `floor(x * 10^d)`, the integer count of `10^-d` units.
pub fn floor_units(x: f64, decimals: u32) -> f64 {
    (x * 10f64.powi(decimals as i32)).floor()
}

/// Mean of the geometric law of `floor(X)` for `X ~ Exp(beta)`:
/// `1 / (exp(1/beta) - 1)`.
///
/// For `beta` below about `1.4e-3` the mean underflows and
/// `f64::MIN_POSITIVE` is returned.
pub fn exp_floor_reparam(beta: f64) -> Result<f64, DistError> {
    crate::distributions::check_positive("beta", beta)?;
    Ok((1.0 / (1.0 / beta).exp_m1()).max(f64::MIN_POSITIVE))
}

/// Inverse of [`exp_floor_reparam`]: `1 / ln(1 + 1/mu)`.
pub fn exp_floor_inverse(mu: f64) -> Result<f64, DistError> {
    crate::distributions::check_positive("mu", mu)?;
    Ok(1.0 / (1.0 / mu).ln_1p())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellModel {
    /// Geometric model on the floored counts, reparametrized to the
    /// exponential scale.
    Geometric,
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StudyCell {
    pub model: CellModel,
    pub rounding: Option<u32>,
}

impl StudyCell {
    pub fn label(&self) -> String {
        let m = match self.model {
            CellModel::Geometric => "G",
            CellModel::Exponential => "E",
        };
        match self.rounding {
            Some(d) => format!("{m}({d})"),
            None => format!("{m}(inf)"),
        }
    }

    /// Transforms a raw exponential path into the data the cell fits.
    pub fn data(&self, raw: &[f64]) -> Vec<f64> {
        match (self.model, self.rounding) {
            (CellModel::Geometric, Some(d)) => raw.iter().map(|&x| floor_units(x, d)).collect(),
            (CellModel::Geometric, None) => raw.to_vec(),
            (CellModel::Exponential, Some(d)) => raw.iter().map(|&x| round_down(x, d)).collect(),
            (CellModel::Exponential, None) => raw.to_vec(),
        }
    }

    fn family_and_link(&self) -> Result<(FamilyTag, LinkTag), SimError> {
        match (self.model, self.rounding) {
            (CellModel::Geometric, Some(decimals)) => {
                Ok((FamilyTag::Geometric, LinkTag::ExpFloor { decimals }))
            }
            (CellModel::Geometric, None) => Err(SimError::InvalidDesign(
                "the geometric model needs a finite rounding".into(),
            )),
            (CellModel::Exponential, _) => Ok((FamilyTag::Exponential, LinkTag::Log)),
        }
    }
}

/// The standard grid: G(0), G(1), G(2), E(0), E(1), E(2), E(inf).
pub fn standard_grid() -> Vec<StudyCell> {
    let mut cells: Vec<StudyCell> = (0..3)
        .map(|d| StudyCell {
            model: CellModel::Geometric,
            rounding: Some(d),
        })
        .collect();
    cells.extend([Some(0), Some(1), Some(2), None].map(|rounding| StudyCell {
        model: CellModel::Exponential,
        rounding,
    }));
    cells
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundingStudy {
    /// Truth of the exponential GAS recursion (log link).
    pub coeffs: GasCoefficients,
    pub n_obs: usize,
    pub n_reps: usize,
    pub seed: u64,
    pub cells: Vec<StudyCell>,
}

impl RoundingStudy {
    pub fn standard(n_reps: usize, seed: u64) -> Self {
        Self {
            coeffs: GasCoefficients::new(0.0, 0.9, 0.1),
            n_obs: 1000,
            n_reps,
            seed,
            cells: standard_grid(),
        }
    }

    fn design(&self) -> SimDesign {
        SimDesign {
            family: Family::Exponential,
            coeffs: self.coeffs,
            scaling: ScalingTag::Unit,
            link: LinkTag::Log,
            n_obs: self.n_obs,
            n_reps: self.n_reps,
            rounding: None,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub truth: f64,
    pub mae: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub label: String,
    pub model: String,
    pub rounding: Option<u32>,
    pub n_reps: usize,
    /// Replications whose fit did not converge; excluded from the summaries.
    pub n_fail: usize,
    /// False when more than 20% of replications failed.
    pub valid: bool,
    pub params: Vec<ParamSummary>,
}

impl SimReport {
    pub fn param(&self, name: &str) -> Option<&ParamSummary> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn mae(&self, name: &str) -> f64 {
        self.param(name).map_or(f64::NAN, |p| p.mae)
    }

    fn summarize(
        label: String,
        model: String,
        rounding: Option<u32>,
        names: &[&str],
        truth: &[f64],
        estimates: &[Option<Vec<f64>>],
    ) -> Self {
        let ok: Vec<&Vec<f64>> = estimates.iter().flatten().collect();
        let n_fail = estimates.len() - ok.len();
        let params = names
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let m = ok.len() as f64;
                ParamSummary {
                    name: name.to_string(),
                    truth: truth[j],
                    mae: ok.iter().map(|e| (e[j] - truth[j]).abs()).sum::<f64>() / m,
                    mean: ok.iter().map(|e| e[j]).sum::<f64>() / m,
                }
            })
            .collect();
        Self {
            label,
            model,
            rounding,
            n_reps: estimates.len(),
            n_fail,
            valid: n_fail as f64 <= 0.2 * estimates.len() as f64,
            params,
        }
    }
}

fn study_fit_options() -> FitOptions {
    FitOptions {
        std_errors: false,
        ..FitOptions::default()
    }
}

/// Estimates `(c, b, a, exp(c / (1 - b)))` for one cell and replication.
fn fit_cell(cell: &StudyCell, raw: &[f64]) -> Option<Vec<f64>> {
    let (tag, link) = cell.family_and_link().ok()?;
    let data = cell.data(raw);
    let fitted = fit(
        &data,
        tag,
        ScalingTag::Unit,
        link,
        None,
        &study_fit_options(),
    )
    .ok()?;
    let k = fitted.params.coeffs;
    let beta = unconditional_value(&k).ok()?.exp();
    Some(vec![k.c, k.b, k.a, beta])
}

/// Runs every cell on common simulated paths: replication `r` simulates one
/// exponential path and all cells fit transformations of it.
pub fn rounding_study(study: &RoundingStudy) -> Result<Vec<SimReport>, SimError> {
    let design = study.design();
    design.validate()?;
    for cell in &study.cells {
        cell.family_and_link()?;
    }
    let truth = study.coeffs;
    let per_rep: Vec<Vec<Option<Vec<f64>>>> = replicate(study.seed, study.n_reps, |_, rng| {
        match simulate_path(&design, rng) {
            Ok(path) => study
                .cells
                .iter()
                .map(|cell| fit_cell(cell, &path.x))
                .collect(),
            Err(_) => vec![None; study.cells.len()],
        }
    });
    let beta = unconditional_value(&truth)?.exp();
    let truth_vec = [truth.c, truth.b, truth.a, beta];
    Ok(study
        .cells
        .iter()
        .enumerate()
        .map(|(i, cell)| {
            let est: Vec<Option<Vec<f64>>> = per_rep.iter().map(|r| r[i].clone()).collect();
            SimReport::summarize(
                cell.label(),
                format!("{:?}", cell.model).to_lowercase(),
                cell.rounding,
                &["c", "b", "a", "beta"],
                &truth_vec,
                &est,
            )
        })
        .collect())
}

/// Parameter recovery: simulates `design` and fits the same family.
pub fn recovery_study(design: &SimDesign, options: &FitOptions) -> Result<SimReport, SimError> {
    design.validate()?;
    let truth = StaticParams::new(design.family, design.scaling, design.link, design.coeffs);
    let tag = design.family.tag();
    let est: Vec<Option<Vec<f64>>> = replicate(design.seed, design.n_reps, |_, rng| {
        let path = simulate_path(design, rng).ok()?;
        let data = match design.rounding {
            Some(d) => path.x.iter().map(|&x| round_down(x, d)).collect(),
            None => path.x,
        };
        fit(&data, tag, design.scaling, design.link, None, options)
            .ok()
            .map(|f| f.params.to_vec())
    });
    let names = truth.names();
    Ok(SimReport::summarize(
        tag.to_string(),
        tag.short_name().to_string(),
        design.rounding,
        &names,
        &truth.to_vec(),
        &est,
    ))
}

/// One row per cell: `model, rounding, mae_c, mae_b, mae_a, mae_beta, n_fail`.
pub fn write_rounding_csv<W: Write>(reports: &[SimReport], out: W) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "model", "rounding", "mae_c", "mae_b", "mae_a", "mae_beta", "n_fail",
    ])?;
    for r in reports {
        let rounding = r.rounding.map_or("none".to_string(), |d| d.to_string());
        let mut row = vec![r.model.clone(), rounding];
        row.extend(["c", "b", "a", "beta"].iter().map(|p| r.mae(p).to_string()));
        row.push(r.n_fail.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp_design(a: f64, n: usize) -> SimDesign {
        SimDesign {
            family: Family::Exponential,
            coeffs: GasCoefficients::new(0.0, 0.9, a),
            scaling: ScalingTag::Unit,
            link: LinkTag::Log,
            n_obs: n,
            n_reps: 1,
            rounding: None,
            seed: 7,
        }
    }

    #[test]
    fn reparam_examples() {
        assert!((exp_floor_reparam(1.0 / 2f64.ln()).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(exp_floor_reparam(1e-4).unwrap(), f64::MIN_POSITIVE);
        assert!(exp_floor_reparam(0.0).is_err());
        for i in 0..=40 {
            let beta = 0.01 * 10f64.powf(i as f64 / 10.0);
            let back = exp_floor_inverse(exp_floor_reparam(beta).unwrap()).unwrap();
            assert!((back / beta - 1.0).abs() < 1e-12, "beta {beta}");
        }
    }

    #[test]
    fn reparam_matches_floor_link() {
        for d in 0..3 {
            let link = LinkTag::ExpFloor { decimals: d };
            for &beta in &[0.3, 1.0, 4.0] {
                let mu = link.to_param(f64::ln(beta));
                let want = exp_floor_reparam(beta * 10f64.powi(d as i32)).unwrap();
                assert!((mu / want - 1.0).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn rounding_helpers() {
        assert_eq!(round_down(1.2345, 2), 1.23);
        assert_eq!(round_down(0.999, 0), 0.0);
        assert_eq!(floor_units(1.2345, 1), 12.0);
    }

    #[test]
    fn no_score_feedback_gives_constant_parameter() {
        let path = simulate_path(&exp_design(0.0, 50), &mut rng_for(1, 0)).unwrap();
        assert!(path.f.iter().all(|&f| f == 0.0));
        assert_eq!(path.retries, 0);
    }

    #[test]
    fn seeds_are_deterministic_and_streams_differ() {
        let d = exp_design(0.1, 100);
        let a = simulate_path(&d, &mut rng_for(3, 0)).unwrap();
        let b = simulate_path(&d, &mut rng_for(3, 0)).unwrap();
        let c = simulate_path(&d, &mut rng_for(3, 1)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.x, c.x);
    }

    #[test]
    fn design_validation() {
        let mut d = exp_design(0.1, 1);
        assert!(simulate_path(&d, &mut rng_for(0, 0)).is_err());
        d.n_obs = 10;
        d.coeffs.b = 1.0;
        assert!(d.validate().is_err());
    }

    #[test]
    fn grid_labels() {
        let labels: Vec<String> = standard_grid().iter().map(StudyCell::label).collect();
        assert_eq!(
            labels,
            ["G(0)", "G(1)", "G(2)", "E(0)", "E(1)", "E(2)", "E(inf)"]
        );
    }

    #[test]
    fn single_replication_mae_is_absolute_error() {
        let est = vec![Some(vec![0.2, 0.8])];
        let r = SimReport::summarize("x".into(), "x".into(), None, &["p", "q"], &[0.0, 1.0], &est);
        assert!((r.mae("p") - 0.2).abs() < 1e-15 && (r.mae("q") - 0.2).abs() < 1e-15);
        assert_eq!(r.n_fail, 0);
    }
}
