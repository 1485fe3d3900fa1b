use std::io::Read;

use chrono::{DateTime, Datelike, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use super::PipelineError;

/// Input columns, in no required order.
pub const COLUMNS: [&str; 6] = [
    "timestamp",
    "price",
    "exchange",
    "correction",
    "sale_condition",
    "suffix",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    /// Trading day. Days since 0001-01-01 for ISO-8601 input, 0 for plain
    /// seconds-since-midnight input (one file per day).
    pub session: i64,
    /// Seconds since midnight, with fraction.
    pub timestamp: f64,
    pub price: f64,
    pub exchange: String,
    pub correction: i64,
    pub sale_condition: String,
    pub suffix: String,
}

/// Parses `"34200.25"` or an ISO-8601 date-time into `(session, seconds)`.
pub fn parse_timestamp(s: &str) -> Option<(i64, f64)> {
    let s = s.trim();
    if let Ok(secs) = s.parse::<f64>() {
        return secs.is_finite().then_some((0, secs));
    }
    let naive = DateTime::parse_from_rfc3339(s)
        .map(|dt| dt.naive_local())
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S%.f"))
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S%.f"))
        .ok()?;
    let t = naive.time();
    let secs = t.num_seconds_from_midnight() as f64 + t.nanosecond() as f64 / 1e9;
    Some((naive.date().num_days_from_ce() as i64, secs))
}

fn field_error(line: u64, column: &str, value: &str, expected: &str) -> PipelineError {
    PipelineError::Parse {
        line,
        message: format!("column '{column}': cannot parse '{value}' as {expected}"),
    }
}

/// Reads tick records from CSV with a header naming [`COLUMNS`].
pub fn read_ticks<R: Read>(input: R) -> Result<Vec<TickRecord>, PipelineError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::Headers)
        .from_reader(input);
    let headers = rdr
        .headers()
        .map_err(|e| PipelineError::Io(e.to_string()))?
        .clone();
    if headers.is_empty() || headers.iter().all(str::is_empty) {
        return Err(PipelineError::EmptyInput);
    }
    let mut idx = [0usize; 6];
    for (slot, name) in idx.iter_mut().zip(COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| PipelineError::MissingColumn(name.to_string()))?;
    }
    let mut ticks = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| PipelineError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let get = |k: usize| row.get(idx[k]).unwrap_or("");
        let (session, timestamp) = parse_timestamp(get(0))
            .ok_or_else(|| field_error(line, COLUMNS[0], get(0), "seconds or ISO-8601 time"))?;
        let price: f64 = get(1)
            .trim()
            .parse()
            .ok()
            .filter(|p: &f64| p.is_finite())
            .ok_or_else(|| field_error(line, COLUMNS[1], get(1), "a number"))?;
        let correction: i64 = get(3)
            .trim()
            .parse()
            .map_err(|_| field_error(line, COLUMNS[3], get(3), "an integer"))?;
        ticks.push(TickRecord {
            session,
            timestamp,
            price,
            exchange: get(2).trim().to_string(),
            correction,
            sale_condition: get(4).to_string(),
            suffix: get(5).to_string(),
        });
    }
    Ok(ticks)
}
