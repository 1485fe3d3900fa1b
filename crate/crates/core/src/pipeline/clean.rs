use serde::{Deserialize, Serialize};

use super::{PipelineError, TickRecord};

/// Neighbours on each side in the outlier window.
pub const OUTLIER_HALF_WINDOW: usize = 25;
/// Fewest neighbours the outlier rule is evaluated with.
pub const OUTLIER_MIN_NEIGHBOURS: usize = 10;
/// Allowed deviation from the rolling median in mean absolute deviations.
pub const OUTLIER_MAD_MULTIPLE: f64 = 10.0;

const KEPT_SALE_CONDITIONS: [char; 3] = ['E', 'F', 'I'];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionWindow {
    /// Seconds since midnight, inclusive.
    pub open: f64,
    pub close: f64,
}

impl Default for SessionWindow {
    /// 09:30 to 16:00.
    fn default() -> Self {
        Self {
            open: 34_200.0,
            close: 57_600.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepCount {
    pub step: usize,
    pub rule: String,
    pub input: usize,
    pub retained: usize,
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub input: usize,
    pub steps: Vec<StepCount>,
    pub retained: usize,
    pub retention_ratio: f64,
}

impl CleaningReport {
    /// Every step consumes exactly what the previous one retained.
    pub fn telescopes(&self) -> bool {
        let mut expected = self.input;
        for s in &self.steps {
            if s.input != expected || s.retained + s.dropped != s.input {
                return false;
            }
            expected = s.retained;
        }
        expected == self.retained
    }
}

/// True when every letter of the code is one of the kept conditions.
/// Non-letter characters (such as `@` for a regular sale) are ignored.
pub fn sale_condition_ok(code: &str) -> bool {
    code.chars()
        .filter(|c| c.is_ascii_alphabetic())
        .all(|c| KEPT_SALE_CONDITIONS.contains(&c.to_ascii_uppercase()))
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Indices of the neighbours used for position `i` of a series of length
/// `n`: the symmetric window of up to 25 on each side, shrunk at the edges
/// to the shorter side; when that leaves fewer than 10, the 10 nearest
/// positions. `None` when fewer than 10 neighbours exist.
pub fn outlier_neighbours(i: usize, n: usize) -> Option<Vec<usize>> {
    if n < OUTLIER_MIN_NEIGHBOURS + 1 {
        return None;
    }
    let before = i;
    let after = n - 1 - i;
    let k = OUTLIER_HALF_WINDOW.min(before).min(after);
    if 2 * k >= OUTLIER_MIN_NEIGHBOURS {
        return Some((i - k..i).chain(i + 1..=i + k).collect());
    }
    let mut idx = Vec::with_capacity(OUTLIER_MIN_NEIGHBOURS);
    let mut d = 1;
    while idx.len() < OUTLIER_MIN_NEIGHBOURS {
        if d <= before {
            idx.push(i - d);
        }
        if idx.len() < OUTLIER_MIN_NEIGHBOURS && d <= after {
            idx.push(i + d);
        }
        d += 1;
    }
    idx.sort_unstable();
    Some(idx)
}

/// Flags prices deviating from the median of their neighbours by more than
/// ten mean absolute deviations (about that median). All flags are decided
/// on the input series at once.
pub fn outlier_flags(prices: &[f64]) -> Vec<bool> {
    let n = prices.len();
    let mut buf = Vec::with_capacity(2 * OUTLIER_HALF_WINDOW);
    (0..n)
        .map(|i| {
            let Some(nb) = outlier_neighbours(i, n) else {
                return false;
            };
            buf.clear();
            buf.extend(nb.iter().map(|&j| prices[j]));
            buf.sort_by(f64::total_cmp);
            let med = median(&buf);
            let mad = buf.iter().map(|p| (p - med).abs()).sum::<f64>() / buf.len() as f64;
            (prices[i] - med).abs() > OUTLIER_MAD_MULTIPLE * mad
        })
        .collect()
}

fn session_ranges(ticks: &[TickRecord]) -> Vec<std::ops::Range<usize>> {
    let mut ranges = Vec::new();
    let mut start = 0;
    for i in 1..=ticks.len() {
        if i == ticks.len() || ticks[i].session != ticks[start].session {
            if start < i {
                ranges.push(start..i);
            }
            start = i;
        }
    }
    ranges
}

/// Applies the seven cleaning rules in order and reports per-step counts.
///
/// Input is stably sorted by session and time first. The outlier rule is
/// evaluated per session.
pub fn clean(
    ticks: &[TickRecord],
    session: &SessionWindow,
    exchange: &str,
) -> Result<(Vec<TickRecord>, CleaningReport), PipelineError> {
    let mut current: Vec<TickRecord> = ticks.to_vec();
    current.sort_by(|a, b| {
        a.session
            .cmp(&b.session)
            .then(a.timestamp.total_cmp(&b.timestamp))
    });
    let input = current.len();
    let mut steps = Vec::with_capacity(7);
    let mut record = |step: usize, rule: &str, before: usize, after: usize| {
        steps.push(StepCount {
            step,
            rule: rule.to_string(),
            input: before,
            retained: after,
            dropped: before - after,
        })
    };

    type Rule<'a> = (&'a str, Box<dyn Fn(&TickRecord) -> bool + 'a>);
    let simple: [Rule; 5] = [
        (
            "session window",
            Box::new(|t: &TickRecord| t.timestamp >= session.open && t.timestamp <= session.close),
        ),
        ("zero price", Box::new(|t: &TickRecord| t.price > 0.0)),
        (
            "single exchange",
            Box::new(|t: &TickRecord| t.exchange == exchange),
        ),
        (
            "corrected trade",
            Box::new(|t: &TickRecord| t.correction == 0),
        ),
        (
            "sale condition",
            Box::new(|t: &TickRecord| sale_condition_ok(&t.sale_condition)),
        ),
    ];
    for (k, (rule, keep)) in simple.iter().enumerate() {
        let before = current.len();
        current.retain(|t| keep(t));
        record(k + 1, rule, before, current.len());
    }

    let before = current.len();
    let mut keep = vec![true; before];
    for range in session_ranges(&current) {
        let prices: Vec<f64> = current[range.clone()].iter().map(|t| t.price).collect();
        for (j, flag) in outlier_flags(&prices).into_iter().enumerate() {
            keep[range.start + j] = !flag;
        }
    }
    let mut it = keep.iter();
    current.retain(|_| *it.next().unwrap_or(&true));
    record(6, "price outlier", before, current.len());

    let before = current.len();
    current.retain(|t| t.suffix.trim().is_empty());
    record(7, "trade suffix", before, current.len());

    if current.is_empty() {
        return Err(PipelineError::EmptyAfterCleaning { input });
    }
    let retained = current.len();
    Ok((
        current,
        CleaningReport {
            input,
            steps,
            retained,
            retention_ratio: retained as f64 / input as f64,
        },
    ))
}
