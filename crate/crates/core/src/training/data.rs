//! Dataset → model-ready windows: per-day channel inputs, z-scored targets,
//! and leakage-safe chronological splits.
//!
//! Windows are kept as light [`SampleSpec`] descriptors (symbol, prediction
//! day, targets) and only materialized into tensor-carrying
//! [`WindowSample`]s when a batch needs them; materializing every window up
//! front would hold gigabytes of overlapping price tensors.
//!
//! Causality rules, enforced here so the model never has to care:
//! - every feature for prediction day `t` is computed from days ≤ `t`;
//! - macro panels hold the last true observation at or before each day
//!   (no interpolation toward a future print);
//! - splits are chronological with a purge gap of `class_horizon` days, so
//!   a training label never overlaps a validation/test feature day.

use std::collections::HashMap;

use crate::config::RunConfig;
use crate::datagen::gen::{Dataset, Ohlcv};
use crate::encoders::macro_channel::MacroPanel;
use crate::encoders::technical::TechnicalWindow;
use crate::encoders::text::{tokenize, TokenSequence};
use crate::error::{Error, Result};
use crate::fusion::{DataDims, WindowSample};
use crate::numerics::tensor::Tensor;
use crate::timebase::{EventMark, EventTimeline};
use crate::training::metrics;

/// Class labels for the forward cumulative return.
pub const CLASS_DOWN: usize = 0;
pub const CLASS_FLAT: usize = 1;
pub const CLASS_UP: usize = 2;

/// Train-split statistics used to z-score regression targets and to map
/// predictions back to raw return units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetNorm {
    pub mean: f64,
    pub std: f64,
}

impl TargetNorm {
    pub fn zscore(&self, raw: f64) -> f64 {
        (raw - self.mean) / self.std
    }

    pub fn unscale(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// One window, before tensors exist: predict from `day`, answer
/// `raw_target` (next-day log return) and `target_class`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleSpec {
    pub symbol: usize,
    pub day: usize,
    pub raw_target: f64,
    pub target_class: usize,
}

/// Prepared view over one dataset: split sample descriptors, target
/// normalization, the event timeline, and the caches needed to materialize
/// any window on demand.
#[derive(Debug)]
pub struct SamplePlan<'a> {
    ds: &'a Dataset,
    cfg: RunConfig,
    pub train: Vec<SampleSpec>,
    pub val: Vec<SampleSpec>,
    pub test: Vec<SampleSpec>,
    pub norm: TargetNorm,
    pub timeline: EventTimeline,
    /// Causally aligned macro values and staleness, `[indicator][day]`.
    macro_values: Vec<Vec<f64>>,
    macro_staleness: Vec<Vec<f64>>,
    /// (day, symbol index) → index into `ds.docs`.
    doc_index: HashMap<(usize, usize), usize>,
}

/// Hold-last causal alignment: value of the most recent observation at or
/// before each day (0.0 before the first), and how many days stale it is
/// (before the first observation: days until it, mirroring the staleness
/// convention used by the recency weights — the value is zero there anyway).
fn causal_columns(obs: &[(usize, f64)], n_days: usize) -> (Vec<f64>, Vec<f64>) {
    let mut values = vec![0.0; n_days];
    let mut staleness = vec![0.0; n_days];
    let mut k = 0usize;
    let mut last: Option<(usize, f64)> = None;
    for t in 0..n_days {
        while k < obs.len() && obs[k].0 <= t {
            last = Some(obs[k]);
            k += 1;
        }
        match last {
            Some((day, v)) => {
                values[t] = v;
                staleness[t] = (t - day) as f64;
            }
            None => {
                values[t] = 0.0;
                staleness[t] = obs.first().map_or(n_days as f64, |&(d, _)| (d - t) as f64);
            }
        }
    }
    (values, staleness)
}

/// Per-window z-scored `[tech_lookback × 5]` OHLCV block. Window-local
/// standardization keeps drifting price levels in range at any date without
/// peeking beyond the window itself.
fn tech_window(bars: &[Ohlcv], wavelet_levels: usize) -> Result<TechnicalWindow> {
    let l = bars.len();
    let mut data = vec![0.0; l * 5];
    for (r, bar) in bars.iter().enumerate() {
        data[r * 5] = bar.open;
        data[r * 5 + 1] = bar.high;
        data[r * 5 + 2] = bar.low;
        data[r * 5 + 3] = bar.close;
        data[r * 5 + 4] = bar.volume;
    }
    for c in 0..5 {
        let mut mean = 0.0;
        for r in 0..l {
            mean += data[r * 5 + c];
        }
        mean /= l as f64;
        let mut var = 0.0;
        for r in 0..l {
            let d = data[r * 5 + c] - mean;
            var += d * d;
        }
        let denom = (var / l as f64).sqrt() + 1e-8;
        for r in 0..l {
            data[r * 5 + c] = (data[r * 5 + c] - mean) / denom;
        }
    }
    TechnicalWindow::new(Tensor::new(vec![l, 5], data)?, wavelet_levels)
}

impl<'a> SamplePlan<'a> {
    /// Earliest day with full feature history.
    fn first_candidate(cfg: &RunConfig) -> usize {
        cfg.lookback + cfg.tech_lookback.max(cfg.macro_lookback) - 2
    }

    pub fn prepare(ds: &'a Dataset, cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let n_days = ds.n_days();
        if ds.symbols.is_empty() {
            return Err(Error::Input("dataset has no symbols".into()));
        }

        let mut returns = Vec::with_capacity(ds.symbols.len());
        for i in 0..ds.symbols.len() {
            returns.push(ds.log_returns(i)?);
        }

        let first = Self::first_candidate(cfg);
        let last = match n_days.checked_sub(1 + cfg.class_horizon) {
            Some(l) if l >= first => l,
            _ => {
                return Err(Error::Input(format!(
                    "dataset of {n_days} days cannot fit a {}-day window with \
                     {}-day feature history and a {}-day horizon",
                    cfg.lookback,
                    cfg.tech_lookback.max(cfg.macro_lookback),
                    cfg.class_horizon
                )))
            }
        };
        let candidates: Vec<usize> = (first..=last).step_by(cfg.window_stride).collect();

        // Chronological split over candidate days with a purge gap, so no
        // training label window reaches into validation/test features.
        let gap = cfg.class_horizon.div_ceil(cfg.window_stride);
        let n = candidates.len();
        let n_train = ((n as f64) * cfg.train_frac).floor() as usize;
        let n_val = ((n as f64) * cfg.val_frac).floor() as usize;
        if n_train == 0 {
            return Err(Error::Input(format!(
                "train split is empty: only {n} candidate days"
            )));
        }
        let val_start = n_train + gap;
        let test_start = (val_start + n_val).min(n) + if n_val > 0 { gap } else { 0 };
        let train_days = &candidates[..n_train];
        let val_days = &candidates[val_start.min(n)..(val_start + n_val).min(n)];
        let test_days = &candidates[test_start.min(n)..];
        if test_days.is_empty() {
            return Err(Error::Input(format!(
                "test split is empty: {n} candidate days, {n_train} train, {n_val} val, gap {gap}"
            )));
        }

        let spec_for = |symbol: usize, day: usize| -> SampleSpec {
            let r = &returns[symbol];
            let raw_target = r[day + 1];
            let cum: f64 = r[day + 1..=day + cfg.class_horizon].iter().sum();
            let target_class = if cum > cfg.class_threshold {
                CLASS_UP
            } else if cum < -cfg.class_threshold {
                CLASS_DOWN
            } else {
                CLASS_FLAT
            };
            SampleSpec { symbol, day, raw_target, target_class }
        };
        let expand = |days: &[usize]| -> Vec<SampleSpec> {
            days.iter()
                .flat_map(|&d| (0..ds.symbols.len()).map(move |s| (s, d)))
                .map(|(s, d)| spec_for(s, d))
                .collect()
        };
        let train = expand(train_days);
        let val = expand(val_days);
        let test = expand(test_days);

        // Z-scoring statistics come from the training split alone.
        let mean = train.iter().map(|s| s.raw_target).sum::<f64>() / train.len() as f64;
        let var = train
            .iter()
            .map(|s| (s.raw_target - mean).powi(2))
            .sum::<f64>()
            / train.len() as f64;
        let std = var.sqrt();
        let norm = TargetNorm {
            mean,
            // A flat training set (all targets equal) leaves nothing to
            // scale; fall back to unit scale instead of dividing by zero.
            std: if std < 1e-12 { 1.0 } else { std },
        };

        let mut macro_values = Vec::new();
        let mut macro_staleness = Vec::new();
        for series in &ds.macro_series {
            let (v, s) = causal_columns(&series.observations, n_days);
            macro_values.push(v);
            macro_staleness.push(s);
        }
        if macro_values.is_empty() {
            // No indicators at all: feed one silent column so shapes hold.
            macro_values.push(vec![0.0; n_days]);
            macro_staleness.push((0..n_days).map(|t| (t + 1) as f64).collect());
        }

        let symbol_ids: HashMap<&str, usize> = ds
            .symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let mut doc_index = HashMap::new();
        for (i, doc) in ds.docs.iter().enumerate() {
            if let Some(&sym) = symbol_ids.get(doc.symbol.as_str()) {
                doc_index.insert((doc.day, sym), i);
            }
        }

        let mut marks: Vec<EventMark> = ds
            .events
            .nodes
            .iter()
            .map(|n| EventMark {
                ordinal: n.ordinal,
                node_id: n.id,
                event_type: ds
                    .event_type_names
                    .get(n.type_id)
                    .cloned()
                    .unwrap_or_default(),
            })
            .collect();
        marks.sort_by_key(|m| (m.ordinal, m.node_id));

        Ok(SamplePlan {
            ds,
            cfg: cfg.clone(),
            train,
            val,
            test,
            norm,
            timeline: EventTimeline { events: marks },
            macro_values,
            macro_staleness,
            doc_index,
        })
    }

    pub fn dataset(&self) -> &'a Dataset {
        self.ds
    }

    /// Inclusive range of days whose windows can be materialized. Targets
    /// are not required, so the range runs to the final day; callers that
    /// predict without scoring may use any day in it.
    pub fn feature_days(&self) -> (usize, usize) {
        (Self::first_candidate(&self.cfg), self.ds.n_days() - 1)
    }

    pub fn dims(&self) -> DataDims {
        DataDims {
            n_symbols: self.ds.symbols.len(),
            n_indicators: self.macro_values.len(),
            n_event_types: self.ds.event_type_names.len(),
            event_feat_dim: self.ds.events.feature_dim(),
        }
    }

    /// Macro panel whose last row is day `day`: hold-last values and their
    /// staleness over the macro lookback.
    fn macro_panel(&self, day: usize) -> Result<MacroPanel> {
        let ml = self.cfg.macro_lookback;
        let q = self.macro_values.len();
        let start = day + 1 - ml;
        let mut values = vec![0.0; ml * q];
        let mut staleness = vec![0.0; ml * q];
        for r in 0..ml {
            for c in 0..q {
                values[r * q + c] = self.macro_values[c][start + r];
                staleness[r * q + c] = self.macro_staleness[c][start + r];
            }
        }
        MacroPanel::new(
            Tensor::new(vec![ml, q], values)?,
            Tensor::new(vec![ml, q], staleness)?,
        )
    }

    /// Build the tensor-carrying window for one descriptor. Uses only data
    /// from days ≤ `spec.day`.
    pub fn materialize(&self, spec: &SampleSpec) -> Result<WindowSample> {
        let cfg = &self.cfg;
        let t = spec.day;
        if spec.symbol >= self.ds.symbols.len() {
            return Err(Error::Input(format!(
                "symbol index {} out of range",
                spec.symbol
            )));
        }
        if t < Self::first_candidate(cfg) || t >= self.ds.n_days() {
            return Err(Error::Input(format!(
                "day {t} lacks the feature history for a window"
            )));
        }
        let days: Vec<usize> = (t + 1 - cfg.lookback..=t).collect();
        let mut tech = Vec::with_capacity(days.len());
        let mut text = Vec::with_capacity(days.len());
        let mut macros = Vec::with_capacity(days.len());
        for &u in &days {
            let bars = &self.ds.prices[spec.symbol][u + 1 - cfg.tech_lookback..=u];
            tech.push(tech_window(bars, cfg.wavelet_levels)?);
            text.push(match self.doc_index.get(&(u, spec.symbol)) {
                Some(&i) => tokenize(&self.ds.docs[i].text, cfg.text_vocab, cfg.text_max_len),
                None => TokenSequence::null(),
            });
            macros.push(self.macro_panel(u)?);
        }
        Ok(WindowSample {
            symbol: spec.symbol,
            days,
            tech,
            text,
            macros,
            target_return: self.norm.zscore(spec.raw_target),
            target_class: spec.target_class,
        })
    }

    /// RMSE of the zero-return forecast on a split, in raw return units.
    pub fn persistence_rmse(&self, split: &[SampleSpec]) -> Result<f64> {
        let actual: Vec<f64> = split.iter().map(|s| s.raw_target).collect();
        let zeros = vec![0.0; actual.len()];
        metrics::rmse(&zeros, &actual)
    }
}
