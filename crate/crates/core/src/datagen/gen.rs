//! Synthetic multi-modal market with planted, recoverable structure.
//!
//! Per symbol, daily log returns follow
//!
//! ```text
//! r_t = macro_loading·f_t + Σ_e β_e·exp(−λ_e·(t−t_e))·1[t ≥ t_e]
//!       + text_strength·s_t + ε_t
//! ```
//!
//! where `f` is one slow AR(1) macro factor shared by all symbols and
//! observed quarterly, `s` is a per-symbol AR(1) sentiment that also writes
//! the day's document, the sum runs over planted events hitting the symbol,
//! and `ε` is i.i.d. Gaussian noise. Close prices are the cumulative
//! exponential of returns from `base_price`.
//!
//! Every planted effect lands in a [`Ledger`]: which event moved which
//! symbol, from what day, with what coefficient and decay. The ledger plus
//! the embedded spec reconstructs the full price paths, so downstream
//! ablation and impact protocols are judged against known truth rather than
//! against another model run.
//!
//! All randomness derives from `spec.seed` through independent named
//! streams (one per symbol and one each for the macro factor and event
//! placement), so per-symbol generation could run on any number of threads
//! without changing a single byte of output.

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::encoders::event::{EventGraph, EventNode};
use crate::error::{Error, Result};
use crate::numerics::init;
use crate::timebase::{build_calendar, Frequency, TradingCalendar};

/// AR(1) coefficient of the per-symbol daily sentiment process.
pub const SENT_PHI: f64 = 0.9;
/// AR(1) coefficient of the shared macro factor.
pub const MACRO_RHO: f64 = 0.98;
/// Edge relation: consecutive events in time.
pub const TIME_CHAIN_RELATION: usize = 1;
/// Edge relation: same event type within [`SAME_TYPE_WINDOW`] trading days.
pub const SAME_TYPE_RELATION: usize = 2;
/// Trading-day window for same-type edges.
pub const SAME_TYPE_WINDOW: usize = 63;

/// One event category with its planted return impulse and decay speed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventTypeSpec {
    pub name: String,
    /// Log-return impulse on the event day, in [−1, 1].
    pub beta: f64,
    /// Days until the impulse halves; decay rate λ = ln 2 / half_life.
    pub half_life_days: f64,
}

impl EventTypeSpec {
    pub fn new(name: impl Into<String>, beta: f64, half_life_days: f64) -> Self {
        EventTypeSpec {
            name: name.into(),
            beta,
            half_life_days,
        }
    }

    pub fn lambda(&self) -> f64 {
        std::f64::consts::LN_2 / self.half_life_days
    }
}

/// Generator recipe. Serializable so a dataset's provenance travels with it
/// inside the ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenSpec {
    pub seed: u64,
    pub n_symbols: usize,
    /// Trading days to generate; the calendar walks weekdays from `start`.
    pub n_days: usize,
    pub start: NaiveDate,
    pub event_types: Vec<EventTypeSpec>,
    /// Events drawn at random days/types when `planted_events` is empty.
    pub n_events: usize,
    /// Explicit (day, type index) plants; when non-empty this fully
    /// determines the events and `n_events` is ignored.
    pub planted_events: Vec<(usize, usize)>,
    /// Probability that an event hits any given symbol; 1.0 = market-wide.
    pub event_symbol_frac: f64,
    /// Return loading on same-day sentiment.
    pub text_strength: f64,
    /// Return loading on the macro factor.
    pub macro_loading: f64,
    /// Standard deviation of idiosyncratic return noise.
    pub sigma_noise: f64,
    pub base_price: f64,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            seed: 42,
            n_symbols: 8,
            n_days: 1000,
            start: NaiveDate::from_ymd_opt(2015, 1, 5).expect("valid date"),
            // Default impulse magnitudes follow the published impact table;
            // regulation and conflict shocks are signed negative. Half-lives
            // put the impulse at 10% of peak by day 63.
            event_types: vec![
                EventTypeSpec::new("Monetary Policy Adjustment", 0.89, 19.0),
                EventTypeSpec::new("Trade Policy Changes", 0.85, 19.0),
                EventTypeSpec::new("New Industry Regulations", -0.78, 19.0),
                EventTypeSpec::new("International Conflicts", -0.72, 19.0),
            ],
            n_events: 12,
            planted_events: Vec::new(),
            event_symbol_frac: 1.0,
            text_strength: 0.01,
            macro_loading: 0.005,
            sigma_noise: 0.01,
            base_price: 100.0,
        }
    }
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        let p = |name, detail: String| Err(Error::param(name, detail));
        if self.n_symbols == 0 {
            return p("n_symbols", "must be positive".into());
        }
        if self.n_days < 2 {
            return p("n_days", format!("need at least 2 days, got {}", self.n_days));
        }
        if !(self.base_price > 0.0) || !self.base_price.is_finite() {
            return p("base_price", format!("must be positive, got {}", self.base_price));
        }
        if !(self.sigma_noise >= 0.0) || !self.sigma_noise.is_finite() {
            return p("sigma_noise", format!("must be ≥ 0, got {}", self.sigma_noise));
        }
        if !self.text_strength.is_finite() || !self.macro_loading.is_finite() {
            return p("loadings", "text_strength and macro_loading must be finite".into());
        }
        if !(0.0..=1.0).contains(&self.event_symbol_frac) {
            return p(
                "event_symbol_frac",
                format!("must lie in [0, 1], got {}", self.event_symbol_frac),
            );
        }
        for (i, et) in self.event_types.iter().enumerate() {
            if et.name.is_empty() {
                return p("event_types", format!("type {i} has an empty name"));
            }
            if !et.beta.is_finite() || et.beta.abs() > 1.0 {
                return p(
                    "event_types",
                    format!("'{}' beta {} outside [−1, 1]", et.name, et.beta),
                );
            }
            if !(et.half_life_days > 0.0) || !et.half_life_days.is_finite() {
                return p(
                    "event_types",
                    format!("'{}' half-life {} must be positive", et.name, et.half_life_days),
                );
            }
        }
        let planted = !self.planted_events.is_empty();
        if (self.n_events > 0 || planted) && self.event_types.is_empty() {
            return p("event_types", "events requested but no types defined".into());
        }
        for &(day, type_id) in &self.planted_events {
            if day == 0 || day >= self.n_days {
                return p(
                    "planted_events",
                    format!("day {day} outside [1, {})", self.n_days),
                );
            }
            if type_id >= self.event_types.len() {
                return p(
                    "planted_events",
                    format!("type {type_id} beyond the {} defined types", self.event_types.len()),
                );
            }
        }
        Ok(())
    }

    fn symbol_name(i: usize) -> String {
        format!("S{i:02}")
    }
}

/// One day's bar. High/low sit at close ± |noise draw| and open carries the
/// previous close, so the technical channel sees non-degenerate columns
/// while the close path stays exactly the cumulative exponential of returns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ohlcv {
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
}

/// One macro indicator: sparse true observations on the shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroSeries {
    pub name: String,
    pub frequency: Frequency,
    /// (day ordinal, value), strictly increasing in day.
    pub observations: Vec<(usize, f64)>,
}

/// One document. Text encodes the planted sentiment: the word "rally" or
/// "slump" repeated in proportion to |sentiment|.
#[derive(Debug, Clone, PartialEq)]
pub struct DocRecord {
    pub day: usize,
    pub symbol: String,
    pub text: String,
}

/// One planted effect: event `event_id` moves `symbol` from `day` on,
/// starting at log-return `beta` and decaying at rate `lambda` per day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub event_id: usize,
    pub event_type: usize,
    pub symbol: String,
    pub day: usize,
    pub beta: f64,
    pub lambda: f64,
}

/// Ground truth behind a generated dataset: the spec that made it, every
/// planted event effect, and the exact sentiment/macro paths. Together with
/// the seed (inside the spec) this reconstructs all prices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ledger {
    pub spec: GenSpec,
    pub entries: Vec<LedgerEntry>,
    /// Per-symbol daily sentiment paths, `[n_symbols][n_days]`.
    pub sentiment: Vec<Vec<f64>>,
    /// Shared macro factor path, `[n_days]`.
    pub macro_factor: Vec<f64>,
}

impl Ledger {
    /// Rebuild every close-price path from the planted components alone,
    /// re-drawing only the idiosyncratic noise from the embedded seed. A
    /// correct ledger reproduces the generated prices exactly; a ledger
    /// with a missing or mis-attributed effect does not.
    pub fn resimulate_prices(&self) -> Result<Vec<Vec<f64>>> {
        let spec = &self.spec;
        spec.validate()?;
        if self.sentiment.len() != spec.n_symbols || self.macro_factor.len() != spec.n_days {
            return Err(Error::Input(
                "ledger paths do not match the embedded spec dimensions".into(),
            ));
        }
        let mut prices = Vec::with_capacity(spec.n_symbols);
        for (i, sent) in self.sentiment.iter().enumerate() {
            if sent.len() != spec.n_days {
                return Err(Error::Input(format!(
                    "sentiment path {i} has {} days, spec says {}",
                    sent.len(),
                    spec.n_days
                )));
            }
            let symbol = GenSpec::symbol_name(i);
            let mut r = vec![0.0; spec.n_days];
            for t in 0..spec.n_days {
                r[t] = spec.macro_loading * self.macro_factor[t] + spec.text_strength * sent[t];
            }
            for e in self.entries.iter().filter(|e| e.symbol == symbol) {
                for (t, rt) in r.iter_mut().enumerate().skip(e.day) {
                    *rt += e.beta * (-e.lambda * (t - e.day) as f64).exp();
                }
            }
            let mut noise = init::rng_for(spec.seed, &format!("noise.{symbol}"));
            let mut cum = 0.0;
            let mut closes = Vec::with_capacity(spec.n_days);
            for rt in &mut r {
                let z: f64 = noise.sample(StandardNormal);
                *rt += spec.sigma_noise * z;
                cum += *rt;
                closes.push(spec.base_price * cum.exp());
            }
            prices.push(closes);
        }
        Ok(prices)
    }
}

/// A complete generated (or loaded) dataset. All day indices are ordinals
/// on `calendar`; `ledger` is present for generated data and absent when
/// files came from elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub calendar: TradingCalendar,
    pub symbols: Vec<String>,
    /// `[symbol][day]` bars.
    pub prices: Vec<Vec<Ohlcv>>,
    pub macro_series: Vec<MacroSeries>,
    /// Sorted by (day, symbol).
    pub docs: Vec<DocRecord>,
    pub events: EventGraph,
    /// Event type names; node `type_id` indexes this list.
    pub event_type_names: Vec<String>,
    pub ledger: Option<Ledger>,
}

impl Dataset {
    pub fn n_days(&self) -> usize {
        self.calendar.len()
    }

    /// Daily log returns ln(close_t / close_{t−1}) for one symbol; the
    /// day-0 return is measured against the pre-sample base price only
    /// when a ledger is present, otherwise it is 0.
    pub fn log_returns(&self, symbol_idx: usize) -> Result<Vec<f64>> {
        let closes = self
            .prices
            .get(symbol_idx)
            .ok_or_else(|| Error::Input(format!("symbol index {symbol_idx} out of range")))?;
        let base = self.ledger.as_ref().map(|l| l.spec.base_price);
        let mut out = Vec::with_capacity(closes.len());
        for (t, bar) in closes.iter().enumerate() {
            let prev = if t == 0 {
                match base {
                    Some(b) => b,
                    None => bar.close,
                }
            } else {
                closes[t - 1].close
            };
            out.push((bar.close / prev).ln());
        }
        Ok(out)
    }
}

/// Walk weekdays from `start` until `n_days` grid days exist.
fn calendar_for(start: NaiveDate, n_days: usize) -> Result<TradingCalendar> {
    let mut d = start;
    let mut first = None;
    let mut last = start;
    let mut count = 0;
    while count < n_days {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            first.get_or_insert(d);
            last = d;
            count += 1;
        }
        d += Duration::days(1);
    }
    build_calendar(first.expect("n_days ≥ 1"), last)
}

struct PlacedEvent {
    day: usize,
    type_id: usize,
    /// Symbol indices the event hits.
    hits: Vec<usize>,
}

/// Draw event days, types, and symbol assignments. Events come out sorted
/// by day (ties keep draw order) so node ids increase with time.
fn place_events(spec: &GenSpec) -> Vec<PlacedEvent> {
    let mut rng = init::rng_for(spec.seed, "events");
    let mut placed: Vec<(usize, usize)> = if spec.planted_events.is_empty() {
        (0..spec.n_events)
            .map(|_| {
                let day = rng.gen_range(1..spec.n_days);
                let type_id = rng.gen_range(0..spec.event_types.len());
                (day, type_id)
            })
            .collect()
    } else {
        spec.planted_events.clone()
    };
    placed.sort_by_key(|&(day, _)| day);
    placed
        .into_iter()
        .map(|(day, type_id)| {
            let mut hits: Vec<usize> = (0..spec.n_symbols)
                .filter(|_| rng.gen::<f64>() < spec.event_symbol_frac)
                .collect();
            if hits.is_empty() {
                hits.push(rng.gen_range(0..spec.n_symbols));
            }
            PlacedEvent { day, type_id, hits }
        })
        .collect()
}

/// Unit-variance stationary AR(1) path.
fn ar1_path(rng: &mut impl Rng, coeff: f64, n: usize) -> Vec<f64> {
    let scale = (1.0 - coeff * coeff).sqrt();
    let mut out = Vec::with_capacity(n);
    let mut prev: f64 = rng.sample(StandardNormal);
    out.push(prev);
    for _ in 1..n {
        let z: f64 = rng.sample(StandardNormal);
        prev = coeff * prev + scale * z;
        out.push(prev);
    }
    out
}

/// Document text for one (symbol, day): the sentiment's sign picks the
/// word, its magnitude the repetition count, so a reader of the text alone
/// can rank the planted sentiment.
fn doc_text(symbol: &str, sentiment: f64) -> String {
    let word = if sentiment >= 0.0 { "rally" } else { "slump" };
    let count = ((3.0 * sentiment.abs()).round() as usize).min(9) + 1;
    let mut text = format!("{symbol} outlook");
    for _ in 0..count {
        text.push(' ');
        text.push_str(word);
    }
    text
}

/// First trading day of each month whose number is in `months`.
fn month_starts(cal: &TradingCalendar, months: &[u32]) -> Vec<usize> {
    let days = cal.days();
    (0..days.len())
        .filter(|&t| {
            let d = days[t];
            let new_month = t == 0 || (days[t - 1].month(), days[t - 1].year()) != (d.month(), d.year());
            new_month && months.contains(&d.month())
        })
        .collect()
}

/// Generate the full dataset a spec describes. Pure: the same spec always
/// yields the same dataset, byte for byte.
pub fn generate(spec: &GenSpec) -> Result<Dataset> {
    spec.validate()?;
    let calendar = calendar_for(spec.start, spec.n_days)?;
    let symbols: Vec<String> = (0..spec.n_symbols).map(GenSpec::symbol_name).collect();

    let mut macro_rng = init::rng_for(spec.seed, "macro");
    let macro_factor = ar1_path(&mut macro_rng, MACRO_RHO, spec.n_days);

    let placed = place_events(spec);
    let mut entries = Vec::new();
    for (id, ev) in placed.iter().enumerate() {
        let et = &spec.event_types[ev.type_id];
        for &sym in &ev.hits {
            entries.push(LedgerEntry {
                event_id: id,
                event_type: ev.type_id,
                symbol: symbols[sym].clone(),
                day: ev.day,
                beta: et.beta,
                lambda: et.lambda(),
            });
        }
    }

    // Per-symbol paths from independent seed streams.
    let mut sentiment = Vec::with_capacity(spec.n_symbols);
    let mut prices = Vec::with_capacity(spec.n_symbols);
    let mut docs = Vec::new();
    for symbol in &symbols {
        let mut sent_rng = init::rng_for(spec.seed, &format!("sent.{symbol}"));
        let sent = ar1_path(&mut sent_rng, SENT_PHI, spec.n_days);

        let mut effect = vec![0.0; spec.n_days];
        for e in entries.iter().filter(|e| e.symbol == *symbol) {
            for (t, slot) in effect.iter_mut().enumerate().skip(e.day) {
                *slot += e.beta * (-e.lambda * (t - e.day) as f64).exp();
            }
        }

        let mut noise_rng = init::rng_for(spec.seed, &format!("noise.{symbol}"));
        let mut bars = Vec::with_capacity(spec.n_days);
        let mut cum = 0.0;
        let mut prev_close = spec.base_price;
        for t in 0..spec.n_days {
            let z: f64 = noise_rng.sample(StandardNormal);
            let eps = spec.sigma_noise * z;
            let r = spec.macro_loading * macro_factor[t]
                + effect[t]
                + spec.text_strength * sent[t]
                + eps;
            cum += r;
            let close = spec.base_price * cum.exp();
            bars.push(Ohlcv {
                open: prev_close,
                high: close + eps.abs(),
                low: close - eps.abs(),
                close,
                volume: 1e6 * (1.0 + 10.0 * r.abs()),
            });
            prev_close = close;
        }
        prices.push(bars);
        sentiment.push(sent);
    }
    for t in 0..spec.n_days {
        for (i, symbol) in symbols.iter().enumerate() {
            docs.push(DocRecord {
                day: t,
                symbol: symbol.clone(),
                text: doc_text(symbol, sentiment[i][t]),
            });
        }
    }

    // Macro factor surfaces as a quarterly composite plus a monthly
    // activity proxy at 0.6 loading — two frequencies on one grid.
    let quarterly: Vec<(usize, f64)> = month_starts(&calendar, &[1, 4, 7, 10])
        .into_iter()
        .map(|t| (t, macro_factor[t]))
        .collect();
    let monthly: Vec<(usize, f64)> = month_starts(&calendar, &[1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12])
        .into_iter()
        .map(|t| (t, 0.6 * macro_factor[t]))
        .collect();
    let macro_series = vec![
        MacroSeries {
            name: "macro_composite".into(),
            frequency: Frequency::Quarterly,
            observations: quarterly,
        },
        MacroSeries {
            name: "activity_index".into(),
            frequency: Frequency::Monthly,
            observations: monthly,
        },
    ];

    // Event knowledge graph: time-chain edges between consecutive events,
    // same-type edges within a 63-day window, node features constant so
    // everything the GAT learns about a type comes from its embedding.
    let nodes: Vec<EventNode> = placed
        .iter()
        .enumerate()
        .map(|(id, ev)| EventNode {
            id,
            type_id: ev.type_id,
            ordinal: ev.day,
            features: vec![1.0],
        })
        .collect();
    let mut edges = Vec::new();
    for i in 1..nodes.len() {
        edges.push((i - 1, i, TIME_CHAIN_RELATION));
    }
    for i in 0..nodes.len() {
        for j in i + 1..nodes.len() {
            if nodes[j].type_id == nodes[i].type_id
                && nodes[j].ordinal - nodes[i].ordinal <= SAME_TYPE_WINDOW
            {
                edges.push((i, j, SAME_TYPE_RELATION));
            }
        }
    }
    let events = EventGraph::new(nodes, edges)?;

    Ok(Dataset {
        calendar,
        symbols,
        prices,
        macro_series,
        docs,
        events,
        event_type_names: spec.event_types.iter().map(|t| t.name.clone()).collect(),
        ledger: Some(Ledger {
            spec: spec.clone(),
            entries,
            sentiment,
            macro_factor,
        }),
    })
}
