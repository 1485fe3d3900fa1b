use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{PipelineError, TickRecord};

/// Default close-to-zero threshold in seconds.
pub const DEFAULT_EPS: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroTreatment {
    #[default]
    None,
    /// Round down to whole seconds.
    FloorSeconds,
    /// Remove values below `eps`.
    DiscardBelowEps,
    /// Replace values below `eps` by `eps`.
    TruncateToEps,
}

impl std::str::FromStr for ZeroTreatment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Self::None),
            "floor" => Ok(Self::FloorSeconds),
            "discard" => Ok(Self::DiscardBelowEps),
            "truncate" => Ok(Self::TruncateToEps),
            _ => Err(format!(
                "unknown zero treatment '{s}' (expected none, floor, discard or truncate)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationSeries {
    pub values: Vec<f64>,
    pub zero_treatment: ZeroTreatment,
    pub eps: f64,
}

/// Timestamps carry at most nanosecond precision; differences are rounded
/// to it so that e.g. `34201.3 - 34200.3` is exactly one second.
fn diff_seconds(later: f64, earlier: f64) -> f64 {
    ((later - earlier) * 1e9).round() / 1e9
}

/// Successive timestamp differences within each session of time-sorted
/// ticks. No duration spans two sessions.
pub fn durations(ticks: &[TickRecord]) -> Result<DurationSeries, PipelineError> {
    if ticks.len() < 2 {
        return Err(PipelineError::TooFewTicks(ticks.len()));
    }
    let values = ticks
        .windows(2)
        .filter(|w| w[0].session == w[1].session)
        .map(|w| diff_seconds(w[1].timestamp, w[0].timestamp))
        .collect();
    Ok(DurationSeries {
        values,
        zero_treatment: ZeroTreatment::None,
        eps: DEFAULT_EPS,
    })
}

/// Applies a close-to-zero treatment to an untreated series.
pub fn apply_zero_treatment(
    s: &DurationSeries,
    treatment: ZeroTreatment,
    eps: f64,
) -> Result<DurationSeries, PipelineError> {
    if s.zero_treatment != ZeroTreatment::None {
        return Err(PipelineError::AlreadyTreated(s.zero_treatment));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(PipelineError::InvalidEps(eps));
    }
    let values = match treatment {
        ZeroTreatment::None => s.values.clone(),
        ZeroTreatment::FloorSeconds => s.values.iter().map(|v| v.floor()).collect(),
        ZeroTreatment::DiscardBelowEps => s.values.iter().copied().filter(|&v| v >= eps).collect(),
        ZeroTreatment::TruncateToEps => s.values.iter().map(|&v| v.max(eps)).collect(),
    };
    Ok(DurationSeries {
        values,
        zero_treatment: treatment,
        eps,
    })
}

/// One `duration` column; integer-valued series are written without a
/// fractional part.
pub fn write_durations<W: Write>(s: &DurationSeries, out: W) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["duration"])?;
    for v in &s.values {
        let cell = if s.zero_treatment == ZeroTreatment::FloorSeconds {
            format!("{}", *v as u64)
        } else {
            format!("{v}")
        };
        w.write_record([cell])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a one-column duration file (header `duration`).
pub fn read_durations<R: std::io::Read>(input: R) -> Result<Vec<f64>, PipelineError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || headers.iter().all(str::is_empty) {
        return Err(PipelineError::EmptyInput);
    }
    let col = headers
        .iter()
        .position(|h| h == "duration")
        .ok_or_else(|| PipelineError::MissingColumn("duration".into()))?;
    let mut values = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let cell = row.get(col).unwrap_or("");
        let v: f64 = cell
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite() && *v >= 0.0)
            .ok_or_else(|| PipelineError::Parse {
                line,
                message: format!(
                    "column 'duration': cannot parse '{cell}' as a non-negative number"
                ),
            })?;
        values.push(v);
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(v: &[f64]) -> DurationSeries {
        DurationSeries {
            values: v.to_vec(),
            zero_treatment: ZeroTreatment::None,
            eps: DEFAULT_EPS,
        }
    }

    fn tick(session: i64, t: f64) -> TickRecord {
        TickRecord {
            session,
            timestamp: t,
            price: 1.0,
            exchange: "N".into(),
            correction: 0,
            sale_condition: String::new(),
            suffix: String::new(),
        }
    }

    #[test]
    fn differences_within_sessions() {
        let d = durations(&[tick(0, 1.0), tick(0, 1.5), tick(0, 3.0)]).unwrap();
        assert_eq!(d.values, vec![0.5, 1.5]);
        let d = durations(&[
            tick(0, 50_000.0),
            tick(0, 50_002.0),
            tick(1, 34_300.0),
            tick(1, 34_301.0),
        ])
        .unwrap();
        assert_eq!(d.values, vec![2.0, 1.0]);
        assert_eq!(
            durations(&[tick(0, 34201.3), tick(0, 34200.3 + 2.0)])
                .unwrap()
                .values,
            vec![1.0]
        );
        assert!(matches!(
            durations(&[tick(0, 1.0)]),
            Err(PipelineError::TooFewTicks(1))
        ));
    }

    #[test]
    fn treatments() {
        let s = series(&[0.0004, 1.2, 0.9]);
        let d = apply_zero_treatment(&s, ZeroTreatment::DiscardBelowEps, 1e-3).unwrap();
        assert_eq!(d.values, vec![1.2, 0.9]);
        let t = apply_zero_treatment(&series(&[0.0004, 1.2]), ZeroTreatment::TruncateToEps, 1e-3)
            .unwrap();
        assert_eq!(t.values, vec![0.001, 1.2]);
        let f = apply_zero_treatment(&s, ZeroTreatment::FloorSeconds, 1e-3).unwrap();
        assert_eq!(f.values, vec![0.0, 1.0, 0.0]);
        assert!(apply_zero_treatment(&f, ZeroTreatment::FloorSeconds, 1e-3).is_err());
        assert!(apply_zero_treatment(&s, ZeroTreatment::TruncateToEps, 0.0).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let s = apply_zero_treatment(
            &series(&[0.25, 3.7, 12.0]),
            ZeroTreatment::FloorSeconds,
            1e-3,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_durations(&s, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "duration\n0\n3\n12\n"
        );
        assert_eq!(read_durations(buf.as_slice()).unwrap(), s.values);
        let raw = series(&[0.1, 2.5]);
        let mut buf = Vec::new();
        write_durations(&raw, &mut buf).unwrap();
        assert_eq!(read_durations(buf.as_slice()).unwrap(), raw.values);
    }
}
