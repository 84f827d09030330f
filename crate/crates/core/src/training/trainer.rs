//! End-to-end training and evaluation on one dataset.
//!
//! The loop is plain full-graph Adam: per batch, bind the parameter store
//! into a fresh tape, run every window forward, take one joint loss, walk
//! the tape backward, and update. Everything is seeded — batch order comes
//! from a named stream per epoch — so identical config and data reproduce
//! identical parameters byte for byte, regardless of thread count.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::config::RunConfig;
use crate::datagen::gen::Dataset;
use crate::encoders::Channel;
use crate::error::{Error, Result};
use crate::fusion::{forward_window, MarketView, Model};
use crate::numerics::graph::Graph;
use crate::numerics::init;
use crate::training::data::{SamplePlan, SampleSpec};
use crate::training::loss::{total_loss, LossWeights};
use crate::training::metrics::{self, MetricsReport};
use crate::training::optim::{adam_step, AdamState};

/// A trained model plus its loss history.
#[derive(Debug, Clone)]
pub struct Trained {
    pub model: Model,
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
}

/// One evaluated window: where, what the model said, what was true.
#[derive(Debug, Clone, Copy)]
pub struct PredictionRecord {
    pub symbol: usize,
    pub day: usize,
    /// Next-day return prediction, raw units.
    pub y_hat: f64,
    /// True next-day return, raw units.
    pub actual: f64,
    pub class: usize,
    pub actual_class: usize,
}

/// Split evaluation: metrics, the naive baseline, and every prediction.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub metrics: MetricsReport,
    /// RMSE of the zero-return forecast on the same split.
    pub persistence_rmse: f64,
    /// Fractional RMSE improvement over persistence, 1 − rmse/persistence.
    pub improvement: f64,
    pub predictions: Vec<PredictionRecord>,
}

/// Train a fresh model on the dataset's training split. Channels listed in
/// `ablate` are replaced by their learned null embeddings for every window,
/// which is how ablation arms are trained. `on_epoch` fires after each
/// epoch with (epoch index, mean loss).
pub fn train(
    ds: &Dataset,
    cfg: &RunConfig,
    ablate: &[Channel],
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<Trained> {
    let plan = SamplePlan::prepare(ds, cfg)?;
    let mut model = Model::init(cfg, plan.dims(), cfg.seed)?;
    let mut adam = AdamState::new(cfg.learning_rate)?;
    let lw = LossWeights::from_config(cfg)?;
    let view = MarketView {
        calendar: &ds.calendar,
        timeline: &plan.timeline,
        events: &ds.events,
    };

    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..plan.train.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = init::rng_for(cfg.seed, &format!("shuffle.{epoch}"));
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut g = Graph::new();
            let bound = model.store.bind(&mut g);
            let mut y_hats = Vec::with_capacity(chunk.len());
            let mut targets = Vec::with_capacity(chunk.len());
            let mut logits = Vec::with_capacity(chunk.len());
            let mut labels = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let sample = plan.materialize(&plan.train[i])?;
                let pred = forward_window(&mut g, &bound, cfg, &view, &sample, ablate)?;
                y_hats.push(pred.y_hat);
                targets.push(sample.target_return);
                logits.push(pred.class_logits);
                labels.push(sample.target_class);
            }
            let loss = total_loss(&mut g, &y_hats, &targets, &logits, &labels, &lw)?;
            g.backward(loss)?;
            let grads = model.store.collect_grads(&g, &bound)?;
            adam_step(&mut model.store, &grads, &mut adam)?;
            loss_sum += g.data(loss)[0] * chunk.len() as f64;
        }
        let mean_loss = loss_sum / plan.train.len() as f64;
        if !mean_loss.is_finite() {
            return Err(Error::numeric(format!("training loss at epoch {epoch}")));
        }
        epoch_losses.push(mean_loss);
        on_epoch(epoch, mean_loss);
    }
    Ok(Trained { model, epoch_losses })
}

/// Run the model over a split and score it. `ablate` must match how the
/// model was trained for the numbers to mean anything.
pub fn evaluate(
    model: &Model,
    plan: &SamplePlan,
    split: &[SampleSpec],
    ablate: &[Channel],
) -> Result<Evaluation> {
    if split.is_empty() {
        return Err(Error::Input("cannot evaluate an empty split".into()));
    }
    let ds = plan.dataset();
    let view = MarketView {
        calendar: &ds.calendar,
        timeline: &plan.timeline,
        events: &ds.events,
    };
    let cfg = &model.cfg;
    let mut predictions = Vec::with_capacity(split.len());
    for chunk in split.chunks(cfg.batch_size.max(1)) {
        let mut g = Graph::new();
        let bound = model.store.bind(&mut g);
        for spec in chunk {
            let sample = plan.materialize(spec)?;
            let pred = forward_window(&mut g, &bound, cfg, &view, &sample, ablate)?;
            let y_hat = plan.norm.unscale(g.data(pred.y_hat)[0]);
            let class = argmax3(g.data(pred.class_logits));
            predictions.push(PredictionRecord {
                symbol: spec.symbol,
                day: spec.day,
                y_hat,
                actual: spec.raw_target,
                class,
                actual_class: spec.target_class,
            });
        }
    }

    let y_hat: Vec<f64> = predictions.iter().map(|p| p.y_hat).collect();
    let actual: Vec<f64> = predictions.iter().map(|p| p.actual).collect();
    let classes: Vec<usize> = predictions.iter().map(|p| p.class).collect();
    let actual_classes: Vec<usize> = predictions.iter().map(|p| p.actual_class).collect();
    let rmse = metrics::rmse(&y_hat, &actual)?;
    let accuracy = metrics::accuracy(&classes, &actual_classes)?;
    let confusion = metrics::confusion(&classes, &actual_classes)?;

    // Sign-following strategy: each day, hold each symbol long or short by
    // the sign of its prediction; the day's return is the equal-weight mean.
    let mut by_day: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for p in &predictions {
        by_day
            .entry(p.day)
            .or_default()
            .push(p.y_hat.signum() * p.actual);
    }
    let daily: Vec<f64> = by_day
        .values()
        .map(|rs| rs.iter().sum::<f64>() / rs.len() as f64)
        .collect();
    let (sharpe_daily, sharpe_annual) = match metrics::sharpe(&daily, 0.0) {
        Ok((d, a)) => (Some(d), Some(a)),
        Err(Error::UndefinedMetric(_)) => (None, None),
        Err(e) => return Err(e),
    };

    let persistence_rmse = plan.persistence_rmse(split)?;
    let improvement = if persistence_rmse > 0.0 {
        1.0 - rmse / persistence_rmse
    } else {
        0.0
    };
    Ok(Evaluation {
        metrics: MetricsReport {
            rmse,
            accuracy,
            sharpe_daily,
            sharpe_annual,
            confusion,
            n_samples: predictions.len(),
        },
        persistence_rmse,
        improvement,
        predictions,
    })
}

/// Raw-unit next-day return predictions for arbitrary prediction days of
/// one symbol, under an explicitly provided market view. The impact
/// protocol drives this with counterfactual graphs/timelines.
pub fn predict_days(
    model: &Model,
    plan: &SamplePlan,
    view: &MarketView,
    symbol: usize,
    days: &[usize],
) -> Result<Vec<f64>> {
    let cfg = &model.cfg;
    let mut out = Vec::with_capacity(days.len());
    for chunk in days.chunks(cfg.batch_size.max(1)) {
        let mut g = Graph::new();
        let bound = model.store.bind(&mut g);
        for &day in chunk {
            let spec = SampleSpec {
                symbol,
                day,
                raw_target: 0.0,
                target_class: 1,
            };
            let sample = plan.materialize(&spec)?;
            let pred = forward_window(&mut g, &bound, cfg, view, &sample, &[])?;
            out.push(plan.norm.unscale(g.data(pred.y_hat)[0]));
        }
    }
    Ok(out)
}

fn argmax3(logits: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..3 {
        if logits[i] > logits[best] {
            best = i;
        }
    }
    best
}
