//! The six subcommands. Every result file is either JSON wrapped in an
//! [`Envelope`] or a CSV table with such a JSON file next to it.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use ziacd::distributions::FamilyTag;
use ziacd::estimation::{fit as fit_model, EstimationError, FitResult};
use ziacd::evaluation::{
    diebold_mariano, forecast_interval_scores, forecast_scores, forecast_scores_with,
    mean_log_score, DmResult, ForecastRecord, NearZero,
};
use ziacd::gas::GasCoefficients;
use ziacd::pipeline::{
    apply_zero_treatment, durations, read_durations, read_ticks, write_durations, CleaningReport,
    DurationSeries, ZeroTreatment,
};
use ziacd::simulation::{
    floor_units, rounding_study, write_rounding_csv, CellModel, RoundingStudy, SimReport, StudyCell,
};

use crate::config::RunConfig;
use crate::error::CliError;

/// Exchange kept by `clean` when none is configured.
pub const DEFAULT_EXCHANGE: &str = "N";
pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_REPS: usize = 200;
/// In-sample fraction used by `compare` when no split is given.
pub const DEFAULT_COMPARE_SPLIT: f64 = 0.8;

pub struct Context {
    pub command: &'static str,
    pub config: RunConfig,
    pub config_hash: String,
}

impl Context {
    pub fn new(command: &'static str, config: RunConfig) -> Self {
        let config_hash = config.hash();
        Self {
            command,
            config,
            config_hash,
        }
    }

    fn envelope<'a, T: Serialize>(&'a self, result: &'a T) -> Envelope<'a, T> {
        Envelope {
            version: ziacd::VERSION,
            command: self.command,
            config_hash: &self.config_hash,
            config: &self.config,
            result,
        }
    }

    /// Writes `result` as enveloped JSON to `path`, or stdout without one.
    fn emit<T: Serialize>(&self, path: Option<&Path>, result: &T) -> Result<(), CliError> {
        let env = self.envelope(result);
        match path {
            Some(p) => {
                let mut w = BufWriter::new(create(p)?);
                serde_json::to_writer_pretty(&mut w, &env)?;
                writeln!(w)?;
                w.flush()?;
                info!("wrote {}", p.display());
            }
            None => {
                let mut out = std::io::stdout().lock();
                serde_json::to_writer_pretty(&mut out, &env)?;
                writeln!(out)?;
            }
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct Envelope<'a, T> {
    version: &'static str,
    command: &'static str,
    config_hash: &'a str,
    config: &'a RunConfig,
    result: &'a T,
}

#[derive(Deserialize)]
struct EnvelopeIn<T> {
    result: T,
}

fn open(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(|e| CliError::config(format!("cannot open {}: {e}", path.display())))
}

fn create(path: &Path) -> Result<File, CliError> {
    File::create(path)
        .map_err(|e| CliError::config(format!("cannot create {}: {e}", path.display())))
}

fn sibling(path: &Path, extension: &str) -> PathBuf {
    path.with_extension(extension)
}

fn read_series(path: &Path) -> Result<Vec<f64>, CliError> {
    Ok(read_durations(BufReader::new(open(path)?))?)
}

/// Reads the result of a `fit` run.
pub fn read_fit(path: &Path) -> Result<FitResult, CliError> {
    let env: EnvelopeIn<FitResult> = serde_json::from_reader(BufReader::new(open(path)?))
        .map_err(|e| CliError::config(format!("invalid fit file {}: {e}", path.display())))?;
    Ok(env.result)
}

fn treat(values: &[f64], treatment: Option<ZeroTreatment>, eps: f64) -> Result<Vec<f64>, CliError> {
    let series = DurationSeries {
        values: values.to_vec(),
        zero_treatment: ZeroTreatment::None,
        eps,
    };
    match treatment {
        None | Some(ZeroTreatment::None) => Ok(series.values),
        Some(t) => Ok(apply_zero_treatment(&series, t, eps)?.values),
    }
}

/// Observations a model of `tag` is fitted to: counts of `10^-d` units for
/// discrete families when a rounding is set, then the zero treatment.
fn prepare(raw: &[f64], tag: FamilyTag, config: &RunConfig) -> Result<Vec<f64>, CliError> {
    let floored: Vec<f64> = match (tag.is_discrete(), config.rounding()?) {
        (true, Some(d)) => raw.iter().map(|&x| floor_units(x, d)).collect(),
        _ => raw.to_vec(),
    };
    treat(&floored, config.treatment()?, config.eps()?)
}

/// How a continuous model filters close-to-zero out-of-sample values.
fn near_zero(treatment: Option<ZeroTreatment>, eps: f64) -> Result<NearZero, CliError> {
    match treatment.unwrap_or(ZeroTreatment::TruncateToEps) {
        ZeroTreatment::DiscardBelowEps => Ok(NearZero::Discard { eps }),
        ZeroTreatment::TruncateToEps => Ok(NearZero::Truncate { eps }),
        t => Err(CliError::config(format!(
            "continuous models need the discard or truncate treatment, got {t:?}"
        ))),
    }
}

/// Keeps the result of a fit that did not converge.
fn fit_or_carry(obs: &[f64], tag: FamilyTag, config: &RunConfig) -> Result<FitResult, CliError> {
    match fit_model(
        obs,
        tag,
        config.scaling()?,
        config.link()?,
        None,
        &config.fit,
    ) {
        Ok(r) => Ok(r),
        Err(EstimationError::NonConvergence(r)) => Ok(*r),
        Err(e) => Err(e.into()),
    }
}

#[derive(Serialize)]
struct CleanSummary<'a> {
    report: &'a CleaningReport,
    n_durations: usize,
    n_zero: usize,
    zero_treatment: ZeroTreatment,
    eps: f64,
    durations: &'a Path,
}

pub fn clean(ctx: &Context) -> Result<(), CliError> {
    let c = &ctx.config;
    let (input, output) = (c.input()?, c.output()?);
    let session = c.session()?;
    let exchange = c.clean.exchange.as_deref().unwrap_or(DEFAULT_EXCHANGE);
    let (treatment, eps) = (c.treatment()?, c.eps()?);

    let ticks = read_ticks(BufReader::new(open(input)?))?;
    let (kept, report) = ziacd::pipeline::clean(&ticks, &session, exchange)?;
    let mut series = durations(&kept)?;
    if let Some(t) = treatment.filter(|&t| t != ZeroTreatment::None) {
        series = apply_zero_treatment(&series, t, eps)?;
    }
    let mut w = BufWriter::new(create(output)?);
    write_durations(&series, &mut w)?;
    w.flush()?;

    let report_path = c
        .clean
        .report
        .clone()
        .unwrap_or_else(|| sibling(output, "report.json"));
    let summary = CleanSummary {
        report: &report,
        n_durations: series.values.len(),
        n_zero: series.values.iter().filter(|&&v| v == 0.0).count(),
        zero_treatment: series.zero_treatment,
        eps: series.eps,
        durations: output,
    };
    ctx.emit(Some(&report_path), &summary)
}

pub fn fit(ctx: &Context) -> Result<(), CliError> {
    let c = &ctx.config;
    let tag = c.family()?;
    let raw = read_series(c.input()?)?;
    let obs = prepare(&raw, tag, c)?;
    let result = fit_or_carry(&obs, tag, c)?;
    ctx.emit(c.output.as_deref(), &result)?;
    if result.converged {
        Ok(())
    } else {
        Err(CliError::non_convergence(format!(
            "{tag} fit did not converge (max |gradient| {:.3e}); result written with converged = false",
            result.optimizer_trace.max_abs_gradient
        )))
    }
}

#[derive(Serialize)]
struct ForecastSummary {
    family: FamilyTag,
    fit: PathBuf,
    split: usize,
    n_out: usize,
    mean_log_score: f64,
    n_nonfinite: usize,
    scores: PathBuf,
}

pub fn forecast(ctx: &Context) -> Result<(), CliError> {
    let c = &ctx.config;
    let fit_path = c
        .forecast
        .fit
        .as_deref()
        .ok_or_else(|| CliError::config("missing fit result (--fit)"))?;
    let output = c.output()?;
    let fitted = read_fit(fit_path)?;
    let tag = fitted.params.tag();
    let raw = read_series(c.input()?)?;
    let (treatment, eps) = (c.treatment()?, c.eps()?);
    if treatment == Some(ZeroTreatment::DiscardBelowEps) && c.split.is_none() {
        return Err(CliError::config(
            "the discard treatment changes the in-sample length; give --split",
        ));
    }
    let split = c.split_index(raw.len(), fitted.n_obs as f64)?;
    let in_sample = prepare(&raw[..split], tag, c)?;

    let records = if tag.is_discrete() {
        let out_sample = prepare(&raw[split..], tag, c)?;
        forecast_scores(&in_sample, &out_sample, &fitted)?
    } else {
        if !fitted.converged {
            return Err(ziacd::evaluation::EvalError::NotConverged.into());
        }
        let nz = near_zero(treatment, eps)?;
        forecast_interval_scores(&in_sample, &raw[split..], &fitted.params, fitted.f1, nz)?
    };
    write_scores(output, &records)?;

    let summary = ForecastSummary {
        family: tag,
        fit: fit_path.to_path_buf(),
        split,
        n_out: records.len(),
        mean_log_score: mean_log_score(&records),
        n_nonfinite: records.iter().filter(|r| !r.log_score.is_finite()).count(),
        scores: output.to_path_buf(),
    };
    ctx.emit(Some(&sibling(output, "json")), &summary)
}

fn write_scores(path: &Path, records: &[ForecastRecord]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(BufWriter::new(create(path)?));
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// The `log_score` column of a score file.
pub fn read_scores(path: &Path) -> Result<Vec<f64>, CliError> {
    let mut rdr = csv::Reader::from_reader(BufReader::new(open(path)?));
    let col = rdr
        .headers()?
        .iter()
        .position(|h| h == "log_score")
        .ok_or_else(|| CliError::config(format!("{}: missing column log_score", path.display())))?;
    rdr.records()
        .map(|row| {
            let row = row?;
            let cell = row.get(col).unwrap_or("");
            cell.parse()
                .map_err(|_| CliError::data(format!("{}: bad log score '{cell}'", path.display())))
        })
        .collect()
}

#[derive(Serialize)]
struct EvaluateSummary {
    a: PathBuf,
    b: PathBuf,
    mean_log_score_a: f64,
    mean_log_score_b: f64,
    dm: DmResult,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn evaluate(ctx: &Context) -> Result<(), CliError> {
    let c = &ctx.config;
    let [a, b] = c.evaluate.scores.as_slice() else {
        return Err(CliError::config(
            "evaluate needs exactly two score files (--scores)",
        ));
    };
    let (ls_a, ls_b) = (read_scores(a)?, read_scores(b)?);
    let dm = diebold_mariano(&ls_a, &ls_b)?;
    let summary = EvaluateSummary {
        a: a.clone(),
        b: b.clone(),
        mean_log_score_a: mean(&ls_a),
        mean_log_score_b: mean(&ls_b),
        dm,
    };
    ctx.emit(c.output.as_deref(), &summary)
}

#[derive(Serialize)]
struct ModelRow {
    model: String,
    family: FamilyTag,
    q: usize,
    n_obs: usize,
    loglik: f64,
    aic: f64,
    mean_log_score: f64,
    converged: bool,
    error: Option<String>,
    /// DM statistic of this model against each model, in row order;
    /// positive values favour this model.
    dm: Vec<f64>,
    fit: Option<FitResult>,
}

#[derive(Serialize)]
struct CompareSummary {
    split: usize,
    rounding: u32,
    models: Vec<String>,
    rows: Vec<ModelRow>,
    table: PathBuf,
}

struct ModelRun {
    fit: Result<FitResult, CliError>,
    scores: Option<Vec<f64>>,
}

/// Fits `tag` on the in-sample part and scores the rest. Discrete models
/// see counts of `10^-d` units; continuous ones see the same time scale and
/// are scored on the unit intervals the counts fall in.
fn run_model(tag: FamilyTag, raw: &[f64], split: usize, d: u32, c: &RunConfig) -> ModelRun {
    let attempt = || -> Result<(FitResult, Option<Vec<f64>>), CliError> {
        let scale = 10f64.powi(d as i32);
        if tag.is_discrete() {
            let counts: Vec<f64> = raw.iter().map(|&x| floor_units(x, d)).collect();
            let fitted = fit_or_carry(&counts[..split], tag, c)?;
            let scores = forecast_scores_with(
                &counts[..split],
                &counts[split..],
                &fitted.params,
                fitted.f1,
            )
            .ok()
            .map(|r| r.iter().map(|r| r.log_score).collect());
            Ok((fitted, scores))
        } else {
            let eps = c.eps()? * scale;
            let nz = near_zero(c.treatment()?, eps)?;
            let scaled: Vec<f64> = raw.iter().map(|&x| x * scale).collect();
            let treatment = match nz {
                NearZero::Discard { .. } => ZeroTreatment::DiscardBelowEps,
                NearZero::Truncate { .. } => ZeroTreatment::TruncateToEps,
            };
            let in_sample = treat(&scaled[..split], Some(treatment), eps)?;
            let fitted = fit_or_carry(&in_sample, tag, c)?;
            let scores = forecast_interval_scores(
                &in_sample,
                &scaled[split..],
                &fitted.params,
                fitted.f1,
                nz,
            )
            .ok()
            .map(|r| r.iter().map(|r| r.log_score).collect());
            Ok((fitted, scores))
        }
    };
    match attempt() {
        Ok((fit, scores)) => ModelRun {
            fit: Ok(fit),
            scores,
        },
        Err(e) => ModelRun {
            fit: Err(e),
            scores: None,
        },
    }
}

fn dm_statistic(a: Option<&Vec<f64>>, b: Option<&Vec<f64>>) -> f64 {
    match (a, b) {
        (Some(a), Some(b)) if a == b => 0.0,
        (Some(a), Some(b)) => diebold_mariano(a, b).map_or(f64::NAN, |r| r.statistic),
        _ => f64::NAN,
    }
}

fn model_labels(tags: &[FamilyTag]) -> Vec<String> {
    tags.iter()
        .enumerate()
        .map(|(i, t)| {
            let seen = tags[..i].iter().filter(|&u| u == t).count();
            if seen == 0 {
                t.short_name().to_string()
            } else {
                format!("{}#{}", t.short_name(), seen + 1)
            }
        })
        .collect()
}

pub fn compare(ctx: &Context) -> Result<(), CliError> {
    let c = &ctx.config;
    let output = c.output()?;
    let tags = c.families()?;
    let raw = read_series(c.input()?)?;
    let split = c.split_index(raw.len(), DEFAULT_COMPARE_SPLIT)?;
    let d = c.rounding()?.unwrap_or(0);
    // surface configuration errors before any fitting
    c.scaling()?;
    c.link()?;
    c.eps()?;
    c.treatment()?;

    let runs: Vec<ModelRun> = tags
        .par_iter()
        .map(|&t| run_model(t, &raw, split, d, c))
        .collect();
    let labels = model_labels(&tags);
    if let Some(first) = runs.iter().find_map(|r| r.fit.as_ref().err()) {
        if runs.iter().all(|r| r.fit.is_err()) {
            return Err(first.clone());
        }
    }

    let rows: Vec<ModelRow> = runs
        .iter()
        .zip(&tags)
        .zip(&labels)
        .map(|((run, &tag), label)| {
            let dm = runs
                .iter()
                .map(|other| dm_statistic(run.scores.as_ref(), other.scores.as_ref()))
                .collect();
            let mean_log_score = run.scores.as_deref().map_or(f64::NAN, mean);
            let (fit, error) = match &run.fit {
                Ok(f) => (Some(f.clone()), None),
                Err(e) => (None, Some(e.message.clone())),
            };
            ModelRow {
                model: label.clone(),
                family: tag,
                q: tag.n_free_params(),
                n_obs: fit.as_ref().map_or(0, |f| f.n_obs),
                loglik: fit.as_ref().map_or(f64::NAN, |f| f.loglik),
                aic: fit.as_ref().map_or(f64::NAN, |f| f.aic),
                mean_log_score,
                converged: fit.as_ref().is_some_and(|f| f.converged),
                error,
                dm,
                fit,
            }
        })
        .collect();

    write_table(output, &labels, &rows)?;
    let summary = CompareSummary {
        split,
        rounding: d,
        models: labels,
        rows,
        table: output.to_path_buf(),
    };
    ctx.emit(Some(&sibling(output, "json")), &summary)?;

    let failed: Vec<&str> = summary
        .rows
        .iter()
        .filter(|r| !r.converged)
        .map(|r| r.model.as_str())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::non_convergence(format!(
            "models without a converged fit: {}",
            failed.join(", ")
        )))
    }
}

fn write_table(path: &Path, labels: &[String], rows: &[ModelRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(BufWriter::new(create(path)?));
    let mut header: Vec<String> = [
        "model",
        "q",
        "n_obs",
        "loglik",
        "aic",
        "mean_log_score",
        "converged",
    ]
    .map(String::from)
    .to_vec();
    header.extend(labels.iter().map(|l| format!("dm_{l}")));
    w.write_record(&header)?;
    for r in rows {
        let mut record = vec![
            r.model.clone(),
            r.q.to_string(),
            r.n_obs.to_string(),
            r.loglik.to_string(),
            r.aic.to_string(),
            r.mean_log_score.to_string(),
            r.converged.to_string(),
        ];
        record.extend(r.dm.iter().map(f64::to_string));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct SimulateSummary<'a> {
    study: &'a RoundingStudy,
    reports: &'a [SimReport],
    table: &'a Path,
}

/// The study grid, with `G(3)` and `E(3)` added when `extended`.
fn study_cells(extended: bool) -> Vec<StudyCell> {
    let max_d = if extended { 3 } else { 2 };
    let mut cells: Vec<StudyCell> = (0..=max_d)
        .map(|d| StudyCell {
            model: CellModel::Geometric,
            rounding: Some(d),
        })
        .collect();
    cells.extend(
        (0..=max_d)
            .map(Some)
            .chain([None])
            .map(|rounding| StudyCell {
                model: CellModel::Exponential,
                rounding,
            }),
    );
    cells
}

pub fn simulate(ctx: &Context) -> Result<(), CliError> {
    let c = &ctx.config;
    let output = c.output()?;
    let s = &c.simulate;
    let mut study = RoundingStudy::standard(
        c.reps.unwrap_or(DEFAULT_REPS),
        c.seed.unwrap_or(DEFAULT_SEED),
    );
    study.n_obs = s.n_obs;
    study.coeffs = GasCoefficients::new(s.c, s.b, s.a);
    study.cells = study_cells(s.extended);

    let reports = rounding_study(&study)?;
    let file = create(output)?;
    write_rounding_csv(&reports, BufWriter::new(file))?;
    let summary = SimulateSummary {
        study: &study,
        reports: &reports,
        table: output,
    };
    ctx.emit(Some(&sibling(output, "json")), &summary)
}
