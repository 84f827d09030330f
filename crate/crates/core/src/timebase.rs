//! Trading calendar, mixed-frequency alignment to a daily grid, and the raw
//! position-encoding signals (calendar sin/cos, event Gaussian, event decay).
//!
//! All operations here are pure functions over immutable inputs.

use std::collections::HashMap;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sin/cos periods for the calendar encoding: week, month, year in
/// trading days.
pub const CALENDAR_PERIODS: [f64; 3] = [5.0, 21.0, 252.0];

/// Ordered weekday-only grid shared by all series of a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TradingCalendar {
    days: Vec<NaiveDate>,
    index: HashMap<NaiveDate, usize>,
}

impl TradingCalendar {
    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    pub fn days(&self) -> &[NaiveDate] {
        &self.days
    }

    pub fn day(&self, ordinal: usize) -> Option<NaiveDate> {
        self.days.get(ordinal).copied()
    }

    pub fn ordinal(&self, date: NaiveDate) -> Option<usize> {
        self.index.get(&date).copied()
    }

    /// First grid day at or after `date`, if any.
    pub fn ordinal_at_or_after(&self, date: NaiveDate) -> Option<usize> {
        let p = self.days.partition_point(|&d| d < date);
        (p < self.days.len()).then_some(p)
    }

    /// Last grid day at or before `date`, if any.
    pub fn ordinal_at_or_before(&self, date: NaiveDate) -> Option<usize> {
        let p = self.days.partition_point(|&d| d <= date);
        p.checked_sub(1)
    }
}

/// All Mon–Fri dates in `[start, end]`, in order. No holiday table.
pub fn build_calendar(start: NaiveDate, end: NaiveDate) -> Result<TradingCalendar> {
    if start > end {
        return Err(Error::Input(format!(
            "calendar range start {start} after end {end}"
        )));
    }
    let mut days = Vec::new();
    let mut d = start;
    while d <= end {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            days.push(d);
        }
        d += Duration::days(1);
    }
    let index = days.iter().enumerate().map(|(i, &d)| (d, i)).collect();
    Ok(TradingCalendar { days, index })
}

/// Native sampling frequency of a raw observation stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frequency {
    Daily,
    Monthly,
    Quarterly,
}

impl std::str::FromStr for Frequency {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "daily" => Ok(Frequency::Daily),
            "monthly" => Ok(Frequency::Monthly),
            "quarterly" => Ok(Frequency::Quarterly),
            other => Err(Error::Input(format!("unknown frequency '{other}'"))),
        }
    }
}

impl std::fmt::Display for Frequency {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Frequency::Daily => "daily",
            Frequency::Monthly => "monthly",
            Frequency::Quarterly => "quarterly",
        };
        f.write_str(s)
    }
}

/// Raw (date, value) observation stream at its native frequency.
#[derive(Debug, Clone)]
pub struct RawSeries {
    pub observations: Vec<(NaiveDate, f64)>,
    pub frequency: Frequency,
}

impl RawSeries {
    pub fn new(observations: Vec<(NaiveDate, f64)>, frequency: Frequency) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::Input("series has no observations".into()));
        }
        for w in observations.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::Input(format!(
                    "series dates not strictly increasing at {}",
                    w[1].0
                )));
            }
        }
        if let Some((d, v)) = observations.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Input(format!("non-finite observation {v} at {d}")));
        }
        Ok(RawSeries {
            observations,
            frequency,
        })
    }
}

/// Grid position of each observation: the first grid day at or after its
/// date, clamped to the last day for observations beyond the span. Later
/// observations win when several collapse onto one position.
fn grid_positions(s: &RawSeries, cal: &TradingCalendar) -> Vec<(usize, f64)> {
    let last = cal.len() - 1;
    let mut pos: Vec<(usize, f64)> = Vec::with_capacity(s.observations.len());
    for &(date, value) in &s.observations {
        let p = cal.ordinal_at_or_after(date).unwrap_or(last);
        match pos.last_mut() {
            Some(prev) if prev.0 == p => prev.1 = value,
            _ => pos.push((p, value)),
        }
    }
    pos
}

/// One value per calendar day: linear interpolation between bracketing
/// observations, nearest-value hold outside the observed span.
pub fn align_series(s: &RawSeries, cal: &TradingCalendar) -> Result<Vec<f64>> {
    if cal.is_empty() {
        return Err(Error::Input("empty calendar".into()));
    }
    if s.observations.is_empty() {
        return Err(Error::Input("series has no observations".into()));
    }
    let pos = grid_positions(s, cal);
    let mut out = vec![0.0; cal.len()];
    let (first_p, first_v) = pos[0];
    let (last_p, last_v) = *pos.last().expect("non-empty");
    for v in &mut out[..first_p] {
        *v = first_v;
    }
    for v in &mut out[last_p..] {
        *v = last_v;
    }
    for w in pos.windows(2) {
        let ((p0, v0), (p1, v1)) = (w[0], w[1]);
        let span = (p1 - p0) as f64;
        for t in p0..=p1 {
            out[t] = v0 + (v1 - v0) * (t - p0) as f64 / span;
        }
    }
    out[first_p] = first_v;
    out[last_p] = last_v;
    Ok(out)
}

/// Trading days since the last true observation, per grid day. Days at or
/// before the first observation count distance to it as 0 only on the
/// observation day itself; earlier days report the distance forward.
pub fn staleness_days(s: &RawSeries, cal: &TradingCalendar) -> Result<Vec<f64>> {
    if cal.is_empty() {
        return Err(Error::Input("empty calendar".into()));
    }
    if s.observations.is_empty() {
        return Err(Error::Input("series has no observations".into()));
    }
    let pos = grid_positions(s, cal);
    let mut out = vec![0.0; cal.len()];
    let mut k = 0usize;
    let mut last_obs: Option<usize> = None;
    for t in 0..cal.len() {
        while k < pos.len() && pos[k].0 <= t {
            last_obs = Some(pos[k].0);
            k += 1;
        }
        out[t] = match last_obs {
            Some(o) => (t - o) as f64,
            // Nothing observed yet: distance to the first future observation.
            None => (pos[0].0 - t) as f64,
        };
    }
    Ok(out)
}

/// One timestamped event on the shared grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventMark {
    pub ordinal: usize,
    pub node_id: usize,
    pub event_type: String,
}

/// Events of one symbol (or one run), positioned on the calendar.
#[derive(Debug, Clone, Default)]
pub struct EventTimeline {
    pub events: Vec<EventMark>,
}

impl EventTimeline {
    pub fn empty() -> Self {
        EventTimeline { events: Vec::new() }
    }

    /// Build from dated events; dates must fall within the calendar span.
    /// Weekend dates snap forward to the next trading day.
    pub fn from_dates(
        cal: &TradingCalendar,
        events: impl IntoIterator<Item = (NaiveDate, usize, String)>,
    ) -> Result<Self> {
        let mut marks = Vec::new();
        for (date, node_id, event_type) in events {
            let ordinal = cal.ordinal_at_or_after(date).ok_or_else(|| {
                Error::Input(format!("event date {date} outside calendar span"))
            })?;
            marks.push(EventMark {
                ordinal,
                node_id,
                event_type,
            });
        }
        marks.sort_by_key(|m| m.ordinal);
        Ok(EventTimeline { events: marks })
    }
}

/// Sin/cos pairs of the day ordinal at week/month/year periods; 6 values.
pub fn enc_calendar(t: usize, cal: &TradingCalendar) -> Result<[f64; 6]> {
    if t >= cal.len() {
        return Err(Error::Input(format!(
            "ordinal {t} outside calendar of {} days",
            cal.len()
        )));
    }
    let mut out = [0.0; 6];
    for (i, period) in CALENDAR_PERIODS.iter().enumerate() {
        let phase = 2.0 * std::f64::consts::PI * t as f64 / period;
        out[2 * i] = phase.sin();
        out[2 * i + 1] = phase.cos();
    }
    Ok(out)
}

/// Gaussian proximity to the nearest event: max over events of
/// exp(−(t−t_e)²/(2σ²)); 0 with no events.
pub fn enc_event(t: usize, tl: &EventTimeline, sigma: f64) -> Result<f64> {
    if sigma <= 0.0 {
        return Err(Error::param("sigma", "must be positive"));
    }
    let best = tl
        .events
        .iter()
        .map(|e| {
            let d = t as f64 - e.ordinal as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .fold(0.0, f64::max);
    Ok(best)
}

/// Causal exponential decay from the most recent past event: max over
/// events with t_e ≤ t of exp(−λ(t−t_e)); 0 if no event has happened yet.
pub fn enc_decay(t: usize, tl: &EventTimeline, lambda: f64) -> Result<f64> {
    if lambda <= 0.0 {
        return Err(Error::param("lambda", "must be positive"));
    }
    let best = tl
        .events
        .iter()
        .filter(|e| e.ordinal <= t)
        .map(|e| (-lambda * (t - e.ordinal) as f64).exp())
        .fold(0.0, f64::max);
    Ok(best)
}
