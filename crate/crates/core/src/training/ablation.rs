//! Channel ablation runner.
//!
//! Each arm retrains the model from scratch with one input channel nulled
//! out — the encoder is skipped and its slot in the gate receives the
//! learned null embedding — then scores the test split under the same
//! ablation. Comparing an arm against the full model shows how much test
//! error that channel was buying.
//!
//! Arms are independent computations, so callers may run them on worker
//! threads; [`run_ablation`] does them sequentially.

use serde::Serialize;

use crate::config::RunConfig;
use crate::datagen::gen::Dataset;
use crate::encoders::Channel;
use crate::error::{Error, Result};
use crate::training::data::SamplePlan;
use crate::training::trainer::{evaluate, train};

/// One trained-and-scored arm of the ablation.
#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    /// "full" or "without_<channel>".
    pub label: String,
    /// Tag of the removed channel (T/F/M/E), absent for the full model.
    pub channel: Option<String>,
    /// Test RMSE in raw return units.
    pub rmse: f64,
    pub accuracy: f64,
    /// Fractional RMSE improvement over the persistence baseline.
    pub improvement: f64,
    /// rmse − full rmse; positive means removing the channel hurt.
    pub delta_rmse: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, label: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.label == label)
    }
}

pub fn channel_word(ch: Channel) -> &'static str {
    match ch {
        Channel::Technical => "technical",
        Channel::Text => "text",
        Channel::Macro => "macro",
        Channel::Event => "event",
    }
}

/// The five arms in report order: full model first, then one per channel.
pub fn arms() -> Vec<(String, Option<Channel>)> {
    let mut out = vec![("full".to_string(), None)];
    out.extend(
        Channel::ALL
            .iter()
            .map(|&ch| (format!("without_{}", channel_word(ch)), Some(ch))),
    );
    out
}

/// Train and score one arm. `delta_rmse` is left at zero until
/// [`finalize`] fills it against the full row. `progress` fires per
/// (epoch, loss).
pub fn run_arm(
    ds: &Dataset,
    cfg: &RunConfig,
    label: &str,
    channel: Option<Channel>,
    mut progress: impl FnMut(usize, f64),
) -> Result<AblationRow> {
    let plan = SamplePlan::prepare(ds, cfg)?;
    let ablate: Vec<Channel> = channel.into_iter().collect();
    let trained = train(ds, cfg, &ablate, |e, l| progress(e, l))?;
    let eval = evaluate(&trained.model, &plan, &plan.test, &ablate)?;
    Ok(AblationRow {
        label: label.to_string(),
        channel: channel.map(|c| c.tag().to_string()),
        rmse: eval.metrics.rmse,
        accuracy: eval.metrics.accuracy,
        improvement: eval.improvement,
        delta_rmse: 0.0,
    })
}

/// Fill in every row's RMSE distance from the "full" row.
pub fn finalize(rows: &mut [AblationRow]) -> Result<()> {
    let full_rmse = rows
        .iter()
        .find(|r| r.label == "full")
        .map(|r| r.rmse)
        .ok_or_else(|| Error::Contract("ablation rows lack a 'full' arm".into()))?;
    for row in rows.iter_mut() {
        row.delta_rmse = row.rmse - full_rmse;
    }
    Ok(())
}

/// Train and score the full model plus one arm per channel, sequentially.
/// `progress` fires per (arm label, epoch, loss).
pub fn run_ablation(
    ds: &Dataset,
    cfg: &RunConfig,
    mut progress: impl FnMut(&str, usize, f64),
) -> Result<AblationReport> {
    let mut rows = Vec::with_capacity(5);
    for (label, channel) in arms() {
        rows.push(run_arm(ds, cfg, &label, channel, |e, l| {
            progress(&label, e, l)
        })?);
    }
    finalize(&mut rows)?;
    Ok(AblationReport { rows })
}
