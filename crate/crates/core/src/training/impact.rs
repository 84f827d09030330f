//! Event impact quantification by counterfactual removal.
//!
//! For each event node, the trained model predicts the post-event window
//! twice: once with the real event graph and timeline, once with the event
//! deleted from both. The per-day prediction gap, averaged over symbols,
//! is that event's impact curve; its mean (scaled by the target standard
//! deviation) is the impact coefficient, and the time until the curve
//! decays below 10% of its peak is the impact duration.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::Result;
use crate::fusion::{MarketView, Model};
use crate::timebase::EventTimeline;
use crate::training::data::SamplePlan;
use crate::training::trainer::predict_days;

/// Fraction of the peak below which the impact is considered decayed.
pub const DURATION_FLOOR: f64 = 0.1;

/// Measured impact of one event.
#[derive(Debug, Clone, Serialize)]
pub struct EventImpact {
    pub event_id: usize,
    pub event_type: String,
    /// Grid ordinal of the event day.
    pub day: usize,
    /// How many post-event days were measurable.
    pub days_measured: usize,
    /// Mean prediction gap over the window, raw return units.
    pub mean_delta: f64,
    /// Signed gap on the day of largest magnitude.
    pub peak_delta: f64,
    /// mean_delta divided by the training-target standard deviation.
    pub coefficient: f64,
    /// Days until |gap| falls below `DURATION_FLOOR` of its peak.
    pub duration_days: usize,
}

#[derive(Debug, Clone, Serialize, Default)]
pub struct ImpactReport {
    pub events: Vec<EventImpact>,
    /// Mean coefficient per event type, over measured events.
    pub type_coefficients: BTreeMap<String, f64>,
}

/// Measure every event in the plan's dataset over up to `horizon` days
/// after it. Events whose whole window predates the first day with full
/// feature history are skipped.
pub fn quantify_impacts(model: &Model, plan: &SamplePlan, horizon: usize) -> Result<ImpactReport> {
    let ds = plan.dataset();
    let (first_day, last_day) = plan.feature_days();
    let full_view = MarketView {
        calendar: &ds.calendar,
        timeline: &plan.timeline,
        events: &ds.events,
    };

    let mut marks: Vec<_> = plan.timeline.events.clone();
    marks.sort_by_key(|m| (m.ordinal, m.node_id));

    let mut report = ImpactReport::default();
    let mut type_sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for mark in &marks {
        let days: Vec<usize> = (mark.ordinal..mark.ordinal + horizon)
            .filter(|&d| d >= first_day && d <= last_day)
            .collect();
        if days.is_empty() {
            continue;
        }

        let cf_graph = ds.events.without_node(mark.node_id);
        let cf_timeline = EventTimeline {
            events: plan
                .timeline
                .events
                .iter()
                .filter(|m| m.node_id != mark.node_id)
                .cloned()
                .collect(),
        };
        let cf_view = MarketView {
            calendar: &ds.calendar,
            timeline: &cf_timeline,
            events: &cf_graph,
        };

        let mut delta = vec![0.0; days.len()];
        for symbol in 0..ds.symbols.len() {
            let with = predict_days(model, plan, &full_view, symbol, &days)?;
            let without = predict_days(model, plan, &cf_view, symbol, &days)?;
            for (d, (w, wo)) in delta.iter_mut().zip(with.iter().zip(&without)) {
                *d += (w - wo) / ds.symbols.len() as f64;
            }
        }

        let mean_delta = delta.iter().sum::<f64>() / delta.len() as f64;
        let peak_delta = delta
            .iter()
            .copied()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap();
        let duration_days = if peak_delta == 0.0 {
            0
        } else {
            let floor = DURATION_FLOOR * peak_delta.abs();
            delta
                .iter()
                .rposition(|d| d.abs() >= floor)
                .map(|o| o + 1)
                .unwrap_or(0)
        };
        let coefficient = mean_delta / plan.norm.std;
        let entry = type_sums.entry(mark.event_type.clone()).or_insert((0.0, 0));
        entry.0 += coefficient;
        entry.1 += 1;
        report.events.push(EventImpact {
            event_id: mark.node_id,
            event_type: mark.event_type.clone(),
            day: mark.ordinal,
            days_measured: days.len(),
            mean_delta,
            peak_delta,
            coefficient,
            duration_days,
        });
    }
    report.type_coefficients = type_sums
        .into_iter()
        .map(|(k, (sum, n))| (k, sum / n as f64))
        .collect();
    Ok(report)
}
