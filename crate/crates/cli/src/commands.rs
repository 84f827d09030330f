//! Implementations behind the `mmft` subcommands. Each returns the exit
//! code for a completed run; errors bubble up to `main`, which classes
//! them into config (2), data (3), and numeric (4) exits.
//!
//! Progress and diagnostics go to stderr; summaries, tables, and report
//! JSON go to stdout; full reports land as files under `--out-dir`.

use std::fmt::Write as _;
use std::path::Path;
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use mmft_core::config::RunConfig;
use mmft_core::datagen::{self, Dataset, GenSpec};
use mmft_core::encoders::event::{self, EventGraph, EventNode};
use mmft_core::encoders::technical;
use mmft_core::encoders::Channel;
use mmft_core::fusion::{init_trunk_params, trunk_forward, Model};
use mmft_core::numerics::graph::Graph;
use mmft_core::numerics::tensor::Tensor;
use mmft_core::params::ParamStore;
use mmft_core::suite;
use mmft_core::training::ablation::{self, AblationReport, AblationRow};
use mmft_core::training::convergence::convergence_harness;
use mmft_core::training::data::SamplePlan;
use mmft_core::training::impact::quantify_impacts;
use mmft_core::training::trainer;
use mmft_core::{Error, Result};

use crate::{
    AblateArgs, BenchArgs, ConfigOpts, ConvergeArgs, EvaluateArgs, GenArgs, GradcheckArgs,
    ImpactArgs, TrainArgs,
};

/// Exit for a verification command whose checks ran but did not hold.
const CHECK_FAILED: u8 = 1;

// ── shared plumbing ─────────────────────────────────────────────────────

fn resolve_config(opts: &ConfigOpts) -> Result<RunConfig> {
    let mut cfg = match &opts.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for assignment in &opts.set {
        cfg.set(assignment)?;
    }
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: String) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Contract(format!("serializing {}: {e}", path.display())))?;
    write_text(path, text + "\n")
}

/// CSV cells are unquoted, so a comma inside a name would shear the row.
fn no_commas(kind: &str, value: &str) -> Result<()> {
    if value.contains(',') {
        return Err(Error::Input(format!(
            "{kind} '{value}' contains a comma and cannot live in CSV"
        )));
    }
    Ok(())
}

/// Load a checkpoint and confirm it matches the model this config and
/// dataset would build: same parameter names, same shapes.
fn load_model(cfg: &RunConfig, plan: &SamplePlan, path: &Path) -> Result<Model> {
    let store = ParamStore::load(path)?;
    let reference = Model::init(cfg, plan.dims(), cfg.seed)?;
    for (name, tensor) in reference.store.iter() {
        let loaded = store.get(name).map_err(|_| {
            Error::Input(format!(
                "checkpoint {} lacks parameter '{name}'; was it trained with this config?",
                path.display()
            ))
        })?;
        if loaded.shape != tensor.shape {
            return Err(Error::Input(format!(
                "checkpoint parameter '{name}' has shape {:?} but the config implies {:?}",
                loaded.shape, tensor.shape
            )));
        }
    }
    if store.len() != reference.store.len() {
        let extra: Vec<&String> = store
            .names()
            .filter(|n| !reference.store.contains(n.as_str()))
            .collect();
        return Err(Error::Input(format!(
            "checkpoint {} carries parameters this config does not: {extra:?}",
            path.display()
        )));
    }
    Ok(Model {
        cfg: cfg.clone(),
        dims: plan.dims(),
        store,
    })
}

// ── gen ─────────────────────────────────────────────────────────────────

fn load_gen_spec(path: &Path) -> Result<GenSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Apply one `key=value` override to a generator spec, mirroring
/// [`RunConfig::set`]: unknown keys are named, values parse as JSON with a
/// bare-string fallback.
fn set_spec(spec: &mut GenSpec, assignment: &str) -> Result<()> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{assignment}' is not key=value")))?;
    let mut doc = serde_json::to_value(&*spec)
        .map_err(|e| Error::Config(format!("spec serialization: {e}")))?;
    let slot = doc
        .get_mut(key)
        .ok_or_else(|| Error::Config(format!("unknown generator key '{key}'")))?;
    let parsed: serde_json::Value = serde_json::from_str(value)
        .or_else(|_| serde_json::from_str(&format!("\"{value}\"")))
        .map_err(|e| Error::Config(format!("value for '{key}': {e}")))?;
    *slot = parsed;
    *spec = serde_json::from_value(doc)
        .map_err(|e| Error::Config(format!("override '{assignment}': {e}")))?;
    spec.validate()
}

pub fn gen(a: GenArgs) -> Result<ExitCode> {
    let mut spec = match &a.config {
        Some(path) => load_gen_spec(path)?,
        None => GenSpec::default(),
    };
    for assignment in &a.set {
        set_spec(&mut spec, assignment)?;
    }
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    spec.validate()?;

    eprintln!(
        "generating {} symbols × {} days (seed {})",
        spec.n_symbols, spec.n_days, spec.seed
    );
    let ds = datagen::generate(&spec)?;
    datagen::save_dataset(&ds, &a.out_dir)?;

    let ledger = ds.ledger.as_ref().expect("generated datasets carry a ledger");
    let days = ds.calendar.days();
    println!("wrote dataset to {}", a.out_dir.display());
    println!(
        "  calendar : {} trading days, {} – {}",
        ds.n_days(),
        days[0],
        days[ds.n_days() - 1]
    );
    println!("  symbols  : {}", ds.symbols.len());
    println!("  macro    : {} series", ds.macro_series.len());
    println!("  documents: {}", ds.docs.len());
    println!("  events   : {}", ds.events.nodes.len());
    for node in &ds.events.nodes {
        let et = &spec.event_types[node.type_id];
        let hits = ledger.entries.iter().filter(|e| e.event_id == node.id).count();
        let date = ds.calendar.day(node.ordinal).expect("event day on calendar");
        println!(
            "    event {:>2}: {date} {} (beta {:+}, half-life {}d, hits {hits} of {} symbols)",
            node.id,
            et.name,
            et.beta,
            et.half_life_days,
            ds.symbols.len()
        );
    }
    Ok(ExitCode::SUCCESS)
}

// ── train ───────────────────────────────────────────────────────────────

pub fn train(a: TrainArgs) -> Result<ExitCode> {
    let cfg = resolve_config(&a.config)?;
    let ds = datagen::load_dataset(&a.data_dir)?;
    ensure_dir(&a.out_dir)?;

    eprintln!(
        "training on {} symbols × {} days for {} epochs",
        ds.symbols.len(),
        ds.n_days(),
        cfg.epochs
    );
    let t0 = Instant::now();
    let trained = trainer::train(&ds, &cfg, &[], |epoch, loss| {
        eprintln!("epoch {:>4}/{}: loss {loss:.6}", epoch + 1, cfg.epochs);
    })?;
    let secs = t0.elapsed().as_secs_f64();

    let ckpt = a.out_dir.join("model.ckpt");
    trained.model.store.save(&ckpt)?;
    cfg.save(&a.out_dir.join("config.json"))?;
    write_json(
        &a.out_dir.join("train_history.json"),
        &serde_json::json!({
            "epochs": trained.epoch_losses.len(),
            "final_loss": trained.epoch_losses.last(),
            "epoch_losses": trained.epoch_losses,
        }),
    )?;
    let mut csv = String::from("epoch,loss\n");
    for (epoch, loss) in trained.epoch_losses.iter().enumerate() {
        writeln!(csv, "{epoch},{loss}").expect("string write");
    }
    write_text(&a.out_dir.join("train_history.csv"), csv)?;

    println!(
        "trained {} parameters ({} tensors) in {secs:.1}s; final epoch loss {:.6}",
        trained.model.store.num_scalars(),
        trained.model.store.len(),
        trained.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    println!("checkpoint: {}", ckpt.display());
    Ok(ExitCode::SUCCESS)
}

// ── evaluate ────────────────────────────────────────────────────────────

pub fn evaluate(a: EvaluateArgs) -> Result<ExitCode> {
    let cfg = resolve_config(&a.config)?;
    let ds = datagen::load_dataset(&a.data_dir)?;
    let plan = SamplePlan::prepare(&ds, &cfg)?;
    let split = match a.split.as_str() {
        "val" => &plan.val,
        "test" => &plan.test,
        other => {
            return Err(Error::Config(format!(
                "--split must be 'val' or 'test', got '{other}'"
            )))
        }
    };
    let model = load_model(&cfg, &plan, &a.checkpoint)?;
    eprintln!("scoring {} windows on the {} split", split.len(), a.split);
    let eval = trainer::evaluate(&model, &plan, split, &[])?;
    ensure_dir(&a.out_dir)?;

    write_json(
        &a.out_dir.join("metrics.json"),
        &serde_json::json!({
            "split": a.split,
            "n_samples": eval.metrics.n_samples,
            "rmse": eval.metrics.rmse,
            "accuracy": eval.metrics.accuracy,
            "sharpe_daily": eval.metrics.sharpe_daily,
            "sharpe_annual": eval.metrics.sharpe_annual,
            "confusion": eval.metrics.confusion,
            "persistence_rmse": eval.persistence_rmse,
            "improvement_over_persistence": eval.improvement,
        }),
    )?;
    let mut csv = String::from("symbol,date,day,y_hat,actual,class,actual_class\n");
    for r in &eval.predictions {
        let date = ds
            .calendar
            .day(r.day)
            .ok_or_else(|| Error::Input(format!("prediction day {} beyond the calendar", r.day)))?;
        writeln!(
            csv,
            "{},{date},{},{},{},{},{}",
            ds.symbols[r.symbol], r.day, r.y_hat, r.actual, r.class, r.actual_class
        )
        .expect("string write");
    }
    write_text(&a.out_dir.join("predictions.csv"), csv)?;

    println!("split    : {} ({} windows)", a.split, eval.metrics.n_samples);
    println!(
        "rmse     : {:.6} (persistence {:.6}, improvement {:+.1}%)",
        eval.metrics.rmse,
        eval.persistence_rmse,
        100.0 * eval.improvement
    );
    println!("accuracy : {:.4}", eval.metrics.accuracy);
    match (eval.metrics.sharpe_daily, eval.metrics.sharpe_annual) {
        (Some(d), Some(y)) => println!("sharpe   : {d:.4} daily, {y:.4} annualized"),
        _ => println!("sharpe   : undefined (zero return variance)"),
    }
    Ok(ExitCode::SUCCESS)
}

// ── ablate ──────────────────────────────────────────────────────────────

/// Worker-thread cap from `MMFT_THREADS`; 1 (fully sequential) when unset.
fn worker_threads() -> Result<usize> {
    match std::env::var("MMFT_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| {
                Error::Config(format!("MMFT_THREADS must be a positive integer, got '{v}'"))
            }),
        Err(_) => Ok(1),
    }
}

/// Fan the arms out over scoped worker threads. Every arm trains its own
/// model from the same dataset and config, so the table is identical to a
/// sequential sweep regardless of thread count or completion order.
fn run_arms_parallel(
    ds: &Dataset,
    cfg: &RunConfig,
    arms: &[(String, Option<Channel>)],
    workers: usize,
) -> Result<Vec<AblationRow>> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<AblationRow>>>> =
        arms.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers.min(arms.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((label, channel)) = arms.get(i) else { break };
                eprintln!("arm {label}: training");
                let row = ablation::run_arm(ds, cfg, label, *channel, |_, _| {});
                eprintln!("arm {label}: done");
                *slots[i].lock().expect("arm slot lock") = Some(row);
            });
        }
    });
    let mut rows = Vec::with_capacity(arms.len());
    for (slot, (label, _)) in slots.into_iter().zip(arms) {
        let row = slot
            .into_inner()
            .expect("arm slot lock")
            .ok_or_else(|| Error::Contract(format!("arm {label} never reported")))?;
        rows.push(row?);
    }
    Ok(rows)
}

pub fn ablate(a: AblateArgs) -> Result<ExitCode> {
    let cfg = resolve_config(&a.config)?;
    let ds = datagen::load_dataset(&a.data_dir)?;
    ensure_dir(&a.out_dir)?;
    let workers = worker_threads()?;

    let arms = ablation::arms();
    eprintln!("{} arms, {} worker thread(s)", arms.len(), workers);
    let mut rows = if workers <= 1 {
        let mut rows = Vec::with_capacity(arms.len());
        for (label, channel) in &arms {
            eprintln!("arm {label}: training");
            rows.push(ablation::run_arm(&ds, &cfg, label, *channel, |epoch, loss| {
                eprintln!("arm {label} epoch {:>4}: loss {loss:.6}", epoch + 1);
            })?);
        }
        rows
    } else {
        run_arms_parallel(&ds, &cfg, &arms, workers)?
    };
    ablation::finalize(&mut rows)?;
    let report = AblationReport { rows };

    write_json(&a.out_dir.join("ablation.json"), &report)?;
    let mut csv = String::from("label,channel,rmse,accuracy,improvement,delta_rmse\n");
    for r in &report.rows {
        writeln!(
            csv,
            "{},{},{},{},{},{}",
            r.label,
            r.channel.as_deref().unwrap_or(""),
            r.rmse,
            r.accuracy,
            r.improvement,
            r.delta_rmse
        )
        .expect("string write");
    }
    write_text(&a.out_dir.join("ablation.csv"), csv)?;

    println!("{:<18} {:>10} {:>10} {:>12}", "arm", "rmse", "accuracy", "delta_rmse");
    for r in &report.rows {
        println!(
            "{:<18} {:>10.6} {:>10.4} {:>+12.6}",
            r.label, r.rmse, r.accuracy, r.delta_rmse
        );
    }
    Ok(ExitCode::SUCCESS)
}

// ── impact ──────────────────────────────────────────────────────────────

pub fn impact(a: ImpactArgs) -> Result<ExitCode> {
    if a.horizon == 0 {
        return Err(Error::param("horizon", "must be positive"));
    }
    let cfg = resolve_config(&a.config)?;
    let ds = datagen::load_dataset(&a.data_dir)?;
    let plan = SamplePlan::prepare(&ds, &cfg)?;
    let model = load_model(&cfg, &plan, &a.checkpoint)?;

    eprintln!(
        "measuring {} events over a {}-day horizon",
        ds.events.nodes.len(),
        a.horizon
    );
    let report = quantify_impacts(&model, &plan, a.horizon)?;
    ensure_dir(&a.out_dir)?;
    write_json(&a.out_dir.join("impact.json"), &report)?;

    let mut csv = String::from(
        "event_id,event_type,day,date,days_measured,mean_delta,peak_delta,coefficient,duration_days\n",
    );
    for e in &report.events {
        no_commas("event type", &e.event_type)?;
        let date = ds
            .calendar
            .day(e.day)
            .ok_or_else(|| Error::Input(format!("event day {} beyond the calendar", e.day)))?;
        writeln!(
            csv,
            "{},{},{},{date},{},{},{},{},{}",
            e.event_id,
            e.event_type,
            e.day,
            e.days_measured,
            e.mean_delta,
            e.peak_delta,
            e.coefficient,
            e.duration_days
        )
        .expect("string write");
    }
    write_text(&a.out_dir.join("impact_events.csv"), csv)?;

    let mut csv = String::from("event_type,coefficient,events\n");
    for (name, coef) in &report.type_coefficients {
        no_commas("event type", name)?;
        let n = report.events.iter().filter(|e| &e.event_type == name).count();
        writeln!(csv, "{name},{coef},{n}").expect("string write");
    }
    write_text(&a.out_dir.join("impact_types.csv"), csv)?;

    println!(
        "measured {} of {} events",
        report.events.len(),
        ds.events.nodes.len()
    );
    for (name, coef) in &report.type_coefficients {
        let n = report.events.iter().filter(|e| &e.event_type == name).count();
        println!("  {name}: coefficient {coef:+.4} ({n} events)");
    }
    Ok(ExitCode::SUCCESS)
}

// ── converge-check ──────────────────────────────────────────────────────

pub fn converge_check(a: ConvergeArgs) -> Result<ExitCode> {
    let report = convergence_harness(a.mu, a.l, a.eta, a.steps, [1.0, 1.0])?;
    let text = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Contract(format!("report serialization: {e}")))?;
    println!("{text}");
    if report.passed {
        eprintln!(
            "bound holds over {} steps: factor {:.6} (optimal-step rate {:.6})",
            report.steps, report.factor, report.optimal_factor
        );
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("bound violated; see distances vs bounds in the report");
        Ok(ExitCode::from(CHECK_FAILED))
    }
}

// ── gradcheck ───────────────────────────────────────────────────────────

pub fn gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    if a.instances == 0 {
        return Err(Error::param("instances", "must be positive"));
    }
    // The event suite also answers to its architectural name.
    let scope = match a.scope.as_str() {
        "encoders.gat" => "encoders.event",
        s => s,
    };
    let cases = if scope == "all" {
        suite::run_all(a.instances, a.seed)?
    } else if suite::SUITES.contains(&scope) {
        suite::run_suite(scope, a.instances, a.seed)?
    } else {
        return Err(Error::Config(format!(
            "unknown gradcheck scope '{}'; valid scopes: all, {}",
            a.scope,
            suite::SUITES.join(", ")
        )));
    };

    for name in suite::SUITES {
        let in_suite: Vec<_> = cases.iter().filter(|c| c.suite == *name).collect();
        if in_suite.is_empty() {
            continue;
        }
        let worst = in_suite
            .iter()
            .map(|c| c.report.max_rel_err)
            .fold(0.0f64, f64::max);
        let failed = in_suite.iter().filter(|c| !c.report.passed()).count();
        println!(
            "{name}: {} checks, worst rel err {worst:.2e}, {failed} failed",
            in_suite.len()
        );
    }
    let failures = suite::failures(&cases);
    if failures.is_empty() {
        println!("all {} gradient checks passed", cases.len());
        Ok(ExitCode::SUCCESS)
    } else {
        for f in &failures {
            eprintln!("FAIL {f}");
        }
        println!("{} of {} gradient checks failed", failures.len(), cases.len());
        Ok(ExitCode::from(CHECK_FAILED))
    }
}

// ── bench ───────────────────────────────────────────────────────────────

fn parse_sizes(s: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let l: usize = part.parse().map_err(|_| {
            Error::Config(format!("--sizes entry '{part}' is not a positive integer"))
        })?;
        if l < 2 || l % 2 != 0 {
            return Err(Error::Config(format!(
                "--sizes entry {l} must be an even length ≥ 2"
            )));
        }
        out.push(l);
    }
    if out.is_empty() {
        return Err(Error::Config("--sizes lists no lengths".into()));
    }
    Ok(out)
}

/// Deterministic non-degenerate fill for timing inputs.
fn wave(rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|i| (0.37 * i as f64).sin()).collect();
    Tensor::new(vec![rows, cols], data).expect("shape matches data")
}

/// Milliseconds for the fastest of three runs, after one warmup.
fn time_ms(mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    f()?;
    let mut best = f64::INFINITY;
    for _ in 0..3 {
        let t0 = Instant::now();
        f()?;
        best = best.min(t0.elapsed().as_secs_f64() * 1e3);
    }
    Ok(best)
}

fn bench_technical(l: usize) -> Result<()> {
    let mut cfg = RunConfig::default();
    cfg.tech_lookback = l;
    // As many decomposition levels as the window supports, up to the
    // configured default of 4; the deepest dilation must fit the window.
    let mut levels = (l.trailing_zeros() as usize).clamp(1, 4);
    while levels > 1 && (1 << (levels - 1)) * 2 + 1 > l {
        levels -= 1;
    }
    cfg.wavelet_levels = levels;
    let mut store = ParamStore::new();
    technical::init_params(&mut store, &cfg, 7);
    let mut g = Graph::new();
    let bound = store.bind(&mut g);
    let window = g.constant(wave(l, 5));
    let out = technical::encode_technical(&mut g, &bound, &cfg, window)?;
    std::hint::black_box(g.data(out));
    Ok(())
}

fn bench_attention(l: usize) -> Result<()> {
    let cfg = RunConfig::default();
    let mut store = ParamStore::new();
    init_trunk_params(&mut store, &cfg, 7);
    let mut g = Graph::new();
    let bound = store.bind(&mut g);
    let seq = g.constant(wave(l, cfg.d_model));
    let out = trunk_forward(&mut g, &bound, &cfg, seq)?;
    std::hint::black_box(g.data(out));
    Ok(())
}

fn bench_gat(l: usize) -> Result<()> {
    let cfg = RunConfig::default();
    let n_types = 4;
    let nodes: Vec<EventNode> = (0..l)
        .map(|i| EventNode {
            id: i,
            type_id: i % n_types,
            ordinal: i,
            features: vec![1.0],
        })
        .collect();
    let edges: Vec<(usize, usize, usize)> = (1..l).map(|i| (i - 1, i, 1)).collect();
    let graph = EventGraph::new(nodes, edges)?;
    let mut store = ParamStore::new();
    event::init_params(&mut store, &cfg, 7, n_types, 1);
    let mut g = Graph::new();
    let bound = store.bind(&mut g);
    let out = event::event2vec(&mut g, &bound, &cfg, &graph, l - 1)?;
    std::hint::black_box(g.data(out));
    Ok(())
}

pub fn bench(a: BenchArgs) -> Result<ExitCode> {
    let sizes = parse_sizes(&a.sizes)?;
    let mut csv = String::from("size,tcn_ms,attention_ms,gat_ms\n");
    for &l in &sizes {
        let tcn = time_ms(|| bench_technical(l))?;
        let attention = time_ms(|| bench_attention(l))?;
        let gat = time_ms(|| bench_gat(l))?;
        eprintln!("L={l}: tcn {tcn:.3}ms, attention {attention:.3}ms, gat {gat:.3}ms");
        writeln!(csv, "{l},{tcn:.3},{attention:.3},{gat:.3}").expect("string write");
    }
    print!("{csv}");
    if let Some(dir) = &a.out_dir {
        ensure_dir(dir)?;
        write_text(&dir.join("bench.csv"), csv)?;
    }
    Ok(ExitCode::SUCCESS)
}
