//! Tick ingestion, cleaning and duration series.
//!
//! Ticks are read from CSV, filtered by seven rules applied in order
//! (session window, zero price, exchange, corrections, sale condition,
//! price outliers, suffix) and turned into intraday durations.

mod clean;
mod durations;
mod ticks;

use thiserror::Error;

pub use clean::{
    clean, outlier_flags, outlier_neighbours, sale_condition_ok, CleaningReport, SessionWindow,
    StepCount, OUTLIER_HALF_WINDOW, OUTLIER_MAD_MULTIPLE, OUTLIER_MIN_NEIGHBOURS,
};
pub use durations::{
    apply_zero_treatment, durations, read_durations, write_durations, DurationSeries,
    ZeroTreatment, DEFAULT_EPS,
};
pub use ticks::{parse_timestamp, read_ticks, TickRecord, COLUMNS};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("input is empty")]
    EmptyInput,
    #[error("missing column '{0}'")]
    MissingColumn(String),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("i/o error: {0}")]
    Io(String),
    #[error("no ticks survive cleaning (input had {input})")]
    EmptyAfterCleaning { input: usize },
    #[error("need at least 2 ticks for durations, got {0}")]
    TooFewTicks(usize),
    #[error("series already has zero treatment {0:?}")]
    AlreadyTreated(ZeroTreatment),
    #[error("eps must be positive and finite, got {0}")]
    InvalidEps(f64),
}

impl From<std::io::Error> for PipelineError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

impl From<csv::Error> for PipelineError {
    fn from(e: csv::Error) -> Self {
        match e.position() {
            Some(p) => Self::Parse {
                line: p.line(),
                message: e.to_string(),
            },
            None => Self::Io(e.to_string()),
        }
    }
}
