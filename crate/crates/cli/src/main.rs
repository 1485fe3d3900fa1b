//! `ziacd`: clean tick data, fit, forecast, evaluate and compare score-driven
//! duration models, and run the rounding simulation study.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Rounding, RunConfig};
use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "ziacd",
    version,
    about = "Score-driven models for discrete trade durations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
enum Command {
    /// Clean raw ticks into a duration series and a cleaning report.
    Clean,
    /// Fit one model to a duration series.
    Fit,
    /// Score the out-of-sample part of a series with a fitted model.
    Forecast,
    /// Diebold-Mariano test between two score files.
    Evaluate,
    /// Fit several models and tabulate AIC, mean log score and DM statistics.
    Compare,
    /// Run the rounding Monte-Carlo study.
    Simulate,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Clean => "clean",
            Command::Fit => "fit",
            Command::Forecast => "forecast",
            Command::Evaluate => "evaluate",
            Command::Compare => "compare",
            Command::Simulate => "simulate",
        }
    }
}

/// Flags override the matching entries of the config file.
#[derive(Debug, Args)]
struct Overrides {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Model family; `compare` accepts a comma-separated list.
    #[arg(long, global = true, value_delimiter = ',')]
    family: Vec<String>,
    /// Score scaling: unit, invsqrt or inv.
    #[arg(long, global = true)]
    scaling: Option<String>,
    #[arg(long, global = true)]
    link: Option<String>,
    /// Close-to-zero threshold in seconds.
    #[arg(long, global = true)]
    eps: Option<f64>,
    /// Decimal places kept when flooring, or `none`.
    #[arg(long, global = true)]
    rounding: Option<String>,
    /// Zero treatment: none, floor, discard or truncate.
    #[arg(long, global = true)]
    treatment: Option<String>,
    /// In-sample size: a fraction when below 1, else a count.
    #[arg(long, global = true)]
    split: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    reps: Option<usize>,
    #[arg(long = "in", global = true)]
    input: Option<PathBuf>,
    #[arg(long = "out", global = true)]
    output: Option<PathBuf>,
    /// Exchange code kept by `clean`.
    #[arg(long, global = true)]
    exchange: Option<String>,
    /// Fit result JSON used by `forecast`.
    #[arg(long, global = true)]
    fit: Option<PathBuf>,
    /// Score CSV for `evaluate`; give it twice.
    #[arg(long, global = true)]
    scores: Vec<PathBuf>,
    /// Add the three-decimal cells to the simulation grid.
    #[arg(long, global = true)]
    extended: bool,
}

impl Overrides {
    fn apply(self, command: Command, mut c: RunConfig) -> RunConfig {
        if command == Command::Compare && !self.family.is_empty() {
            c.compare.families = self.family;
        } else if let Some(f) = self.family.into_iter().next() {
            c.family = Some(f);
        }
        c.scaling = self.scaling.or(c.scaling);
        c.link = self.link.or(c.link);
        c.eps = self.eps.or(c.eps);
        c.rounding = self.rounding.as_deref().map(Rounding::parse).or(c.rounding);
        c.treatment = self.treatment.or(c.treatment);
        c.split = self.split.or(c.split);
        c.seed = self.seed.or(c.seed);
        c.reps = self.reps.or(c.reps);
        c.input = self.input.or(c.input);
        c.output = self.output.or(c.output);
        c.clean.exchange = self.exchange.or(c.clean.exchange);
        c.forecast.fit = self.fit.or(c.forecast.fit);
        if !self.scores.is_empty() {
            c.evaluate.scores = self.scores;
        }
        c.simulate.extended |= self.extended;
        c
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let base = match &cli.overrides.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let config = cli.overrides.apply(cli.command, base);
    let ctx = commands::Context::new(cli.command.name(), config);
    match cli.command {
        Command::Clean => commands::clean(&ctx),
        Command::Fit => commands::fit(&ctx),
        Command::Forecast => commands::forecast(&ctx),
        Command::Evaluate => commands::evaluate(&ctx),
        Command::Compare => commands::compare(&ctx),
        Command::Simulate => commands::simulate(&ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() {
                error::EXIT_CONFIG
            } else {
                0
            });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
