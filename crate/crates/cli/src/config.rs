//! Run configuration: a TOML file merged with command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use ziacd::distributions::FamilyTag;
use ziacd::estimation::FitOptions;
use ziacd::gas::{LinkTag, ScalingTag};
use ziacd::pipeline::{SessionWindow, ZeroTreatment, DEFAULT_EPS};

use crate::error::CliError;

/// Decimal places kept when rounding down: an integer or `"none"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Rounding {
    Decimals(u32),
    Label(String),
}

impl Rounding {
    pub fn parse(s: &str) -> Rounding {
        s.parse()
            .map_or_else(|_| Rounding::Label(s.to_string()), Rounding::Decimals)
    }

    fn resolve(&self) -> Result<Option<u32>, CliError> {
        match self {
            Rounding::Decimals(d) => Ok(Some(*d)),
            Rounding::Label(s) if matches!(s.as_str(), "none" | "inf") => Ok(None),
            Rounding::Label(s) => Err(CliError::config(format!(
                "invalid rounding '{s}' (expected a number of decimals or none)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleanSection {
    pub exchange: Option<String>,
    /// Session open and close in seconds since midnight.
    pub open: Option<f64>,
    pub close: Option<f64>,
    /// Report path; defaults to `<out stem>.report.json`.
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastSection {
    /// Fit result JSON written by `fit`.
    pub fit: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub scores: Vec<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSection {
    pub families: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub n_obs: usize,
    pub c: f64,
    pub b: f64,
    pub a: f64,
    /// Adds the three-decimal cells to the grid.
    pub extended: bool,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            n_obs: 1000,
            c: 0.0,
            b: 0.9,
            a: 0.1,
            extended: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub family: Option<String>,
    pub scaling: Option<String>,
    pub link: Option<String>,
    pub eps: Option<f64>,
    pub rounding: Option<Rounding>,
    pub treatment: Option<String>,
    /// In-sample size: a fraction of the series when below 1, else a count.
    pub split: Option<f64>,
    pub seed: Option<u64>,
    pub reps: Option<usize>,
    #[serde(rename = "in")]
    pub input: Option<PathBuf>,
    #[serde(rename = "out")]
    pub output: Option<PathBuf>,
    pub clean: CleanSection,
    pub fit: FitOptions,
    pub forecast: ForecastSection,
    pub evaluate: EvaluateSection,
    pub compare: CompareSection,
    pub simulate: SimulateSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::config(format!("invalid config {}: {e}", path.display())))
    }

    /// SHA-256 of the JSON form of the resolved configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn input(&self) -> Result<&Path, CliError> {
        self.input
            .as_deref()
            .ok_or_else(|| CliError::config("missing input path (--in)"))
    }

    pub fn output(&self) -> Result<&Path, CliError> {
        self.output
            .as_deref()
            .ok_or_else(|| CliError::config("missing output path (--out)"))
    }

    pub fn family(&self) -> Result<FamilyTag, CliError> {
        let name = self
            .family
            .as_deref()
            .ok_or_else(|| CliError::config("missing model family (--family)"))?;
        parse_family(name)
    }

    pub fn families(&self) -> Result<Vec<FamilyTag>, CliError> {
        if self.compare.families.is_empty() {
            return Ok(FamilyTag::DISCRETE.to_vec());
        }
        self.compare
            .families
            .iter()
            .map(|f| parse_family(f))
            .collect()
    }

    pub fn scaling(&self) -> Result<ScalingTag, CliError> {
        self.scaling.as_deref().map_or(Ok(ScalingTag::Unit), |s| {
            s.parse().map_err(CliError::config)
        })
    }

    pub fn link(&self) -> Result<LinkTag, CliError> {
        self.link
            .as_deref()
            .map_or(Ok(LinkTag::Log), |s| s.parse().map_err(CliError::config))
    }

    pub fn eps(&self) -> Result<f64, CliError> {
        match self.eps {
            None => Ok(DEFAULT_EPS),
            Some(e) if e > 0.0 && e.is_finite() => Ok(e),
            Some(e) => Err(CliError::config(format!(
                "eps must be positive and finite, got {e}"
            ))),
        }
    }

    pub fn rounding(&self) -> Result<Option<u32>, CliError> {
        self.rounding.as_ref().map_or(Ok(None), Rounding::resolve)
    }

    pub fn treatment(&self) -> Result<Option<ZeroTreatment>, CliError> {
        self.treatment
            .as_deref()
            .map(|s| s.parse().map_err(CliError::config))
            .transpose()
    }

    pub fn session(&self) -> Result<SessionWindow, CliError> {
        let default = SessionWindow::default();
        let window = SessionWindow {
            open: self.clean.open.unwrap_or(default.open),
            close: self.clean.close.unwrap_or(default.close),
        };
        if window.open < window.close {
            Ok(window)
        } else {
            Err(CliError::config("session open must precede close"))
        }
    }

    /// In-sample length for a series of `n` values.
    pub fn split_index(&self, n: usize, default: f64) -> Result<usize, CliError> {
        let split = self.split.unwrap_or(default);
        let k = if split > 0.0 && split < 1.0 {
            (split * n as f64).round() as usize
        } else if split >= 1.0 && split.fract() == 0.0 {
            split as usize
        } else {
            return Err(CliError::config(format!("invalid split {split}")));
        };
        if k == 0 || k >= n {
            return Err(CliError::config(format!(
                "split leaves an empty sample: {k} of {n} observations in sample"
            )));
        }
        Ok(k)
    }
}

fn parse_family(name: &str) -> Result<FamilyTag, CliError> {
    name.parse().map_err(CliError::config)
}
