//! Dataset serialization. One directory holds the whole dataset:
//!
//! - `prices.csv`  — `date,symbol,open,high,low,close,volume`
//! - `macro.csv`   — `date,indicator,value,frequency`
//! - `docs.jsonl`  — one `{date, symbol, text}` object per line
//! - `events.json` — `{types, nodes: [{id, type, date, features}], edges: [[src, dst, relation]]}`
//! - `ledger.json` — ground-truth ledger; optional, absent for foreign data
//!
//! UTF-8 throughout, ISO-8601 dates, floats printed with Rust's shortest
//! round-trip formatting so save→load is exact. The trading calendar is
//! not stored: it is rebuilt as the weekday grid spanning the price dates,
//! which reproduces it because datasets live on contiguous weekday grids.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::encoders::event::{EventGraph, EventNode};
use crate::error::{Error, Result};
use crate::timebase::{build_calendar, Frequency, TradingCalendar};

use super::gen::{Dataset, DocRecord, Ledger, MacroSeries, Ohlcv};

const PRICES_HEADER: &str = "date,symbol,open,high,low,close,volume";
const MACRO_HEADER: &str = "date,indicator,value,frequency";

#[derive(Serialize, Deserialize)]
struct DocLine {
    date: NaiveDate,
    symbol: String,
    text: String,
}

#[derive(Serialize, Deserialize)]
struct NodeRecord {
    id: usize,
    #[serde(rename = "type")]
    type_name: String,
    date: NaiveDate,
    features: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct EventsFile {
    /// Type names; a node's `type` must appear here, its position is the id.
    types: Vec<String>,
    nodes: Vec<NodeRecord>,
    edges: Vec<(usize, usize, usize)>,
}

fn no_commas(kind: &str, value: &str) -> Result<()> {
    if value.contains(',') {
        return Err(Error::Input(format!(
            "{kind} '{value}' contains a comma and cannot live in CSV"
        )));
    }
    Ok(())
}

fn day_of(ds: &Dataset, ordinal: usize, what: &str) -> Result<NaiveDate> {
    ds.calendar
        .day(ordinal)
        .ok_or_else(|| Error::Input(format!("{what} day {ordinal} beyond the calendar")))
}

/// Write all dataset files into `dir` (created if missing).
pub fn save_dataset(ds: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, text: String| -> Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    };

    if ds.symbols.len() != ds.prices.len() {
        return Err(Error::Input(format!(
            "{} symbols but {} price paths",
            ds.symbols.len(),
            ds.prices.len()
        )));
    }
    let mut prices = String::from(PRICES_HEADER);
    prices.push('\n');
    for t in 0..ds.n_days() {
        let date = day_of(ds, t, "price")?;
        for (symbol, bars) in ds.symbols.iter().zip(&ds.prices) {
            no_commas("symbol", symbol)?;
            let bar = bars.get(t).ok_or_else(|| {
                Error::Input(format!("symbol {symbol} has no bar for day {t}"))
            })?;
            writeln!(
                prices,
                "{date},{symbol},{},{},{},{},{}",
                bar.open, bar.high, bar.low, bar.close, bar.volume
            )
            .expect("string write");
        }
    }
    write("prices.csv", prices)?;

    let mut macros = String::from(MACRO_HEADER);
    macros.push('\n');
    for series in &ds.macro_series {
        no_commas("indicator", &series.name)?;
        for &(t, value) in &series.observations {
            let date = day_of(ds, t, "macro observation")?;
            writeln!(macros, "{date},{},{value},{}", series.name, series.frequency)
                .expect("string write");
        }
    }
    write("macro.csv", macros)?;

    let mut docs = String::new();
    for doc in &ds.docs {
        let line = DocLine {
            date: day_of(ds, doc.day, "document")?,
            symbol: doc.symbol.clone(),
            text: doc.text.clone(),
        };
        docs.push_str(&serde_json::to_string(&line).expect("doc line serializes"));
        docs.push('\n');
    }
    write("docs.jsonl", docs)?;

    let mut nodes = Vec::with_capacity(ds.events.nodes.len());
    for n in &ds.events.nodes {
        let type_name = ds.event_type_names.get(n.type_id).ok_or_else(|| {
            Error::Input(format!(
                "event node {} has type {} but only {} names are defined",
                n.id,
                n.type_id,
                ds.event_type_names.len()
            ))
        })?;
        nodes.push(NodeRecord {
            id: n.id,
            type_name: type_name.clone(),
            date: day_of(ds, n.ordinal, "event")?,
            features: n.features.clone(),
        });
    }
    let events = EventsFile {
        types: ds.event_type_names.clone(),
        nodes,
        edges: ds.events.edges.clone(),
    };
    write(
        "events.json",
        serde_json::to_string_pretty(&events).expect("events serialize") + "\n",
    )?;

    if let Some(ledger) = &ds.ledger {
        write(
            "ledger.json",
            serde_json::to_string_pretty(ledger).expect("ledger serializes") + "\n",
        )?;
    }
    Ok(())
}

/// One parsed CSV row, 1-based line number attached for error context.
struct CsvRow<'a> {
    line: usize,
    fields: Vec<&'a str>,
}

/// Split a CSV body into rows, enforcing the header and field count.
fn csv_rows<'a>(file: &str, text: &'a str, header: &str) -> Result<Vec<CsvRow<'a>>> {
    let n_fields = header.split(',').count();
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, first)) if first == header => {}
        Some((_, first)) => {
            return Err(Error::parse(
                file,
                1,
                format!("expected header '{header}', found '{first}'"),
            ))
        }
        None => return Err(Error::parse(file, 1, "file is empty")),
    }
    let mut rows = Vec::new();
    for (idx, raw) in lines {
        if raw.is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != n_fields {
            return Err(Error::parse(
                file,
                idx + 1,
                format!("expected {n_fields} fields, found {}", fields.len()),
            ));
        }
        rows.push(CsvRow { line: idx + 1, fields });
    }
    Ok(rows)
}

fn parse_cell<T: std::str::FromStr>(file: &str, line: usize, what: &str, raw: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    raw.parse()
        .map_err(|e| Error::parse(file, line, format!("{what} '{raw}': {e}")))
}

fn grid_ordinal(cal: &TradingCalendar, file: &str, line: usize, date: NaiveDate) -> Result<usize> {
    cal.ordinal(date).ok_or_else(|| {
        Error::parse(file, line, format!("date {date} is not on the weekday grid"))
    })
}

/// Load a dataset directory written by [`save_dataset`] or by anything else
/// that follows the same schemas. `events.json` and `ledger.json` are
/// optional; everything else must be present.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let read = |name: &str| -> Result<String> {
        let path = dir.join(name);
        std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))
    };

    // prices.csv defines the calendar and the symbol set.
    let prices_text = read("prices.csv")?;
    let file = "prices.csv";
    let rows = csv_rows(file, &prices_text, PRICES_HEADER)?;
    let mut parsed: Vec<(usize, NaiveDate, String, Ohlcv)> = Vec::with_capacity(rows.len());
    for row in &rows {
        let date: NaiveDate = parse_cell(file, row.line, "date", row.fields[0])?;
        let bar = Ohlcv {
            open: parse_cell(file, row.line, "open", row.fields[2])?,
            high: parse_cell(file, row.line, "high", row.fields[3])?,
            low: parse_cell(file, row.line, "low", row.fields[4])?,
            close: parse_cell(file, row.line, "close", row.fields[5])?,
            volume: parse_cell(file, row.line, "volume", row.fields[6])?,
        };
        parsed.push((row.line, date, row.fields[1].to_string(), bar));
    }
    if parsed.is_empty() {
        return Err(Error::Input("prices.csv has no data rows".into()));
    }
    let first = parsed.iter().map(|(_, d, _, _)| *d).min().expect("non-empty");
    let last = parsed.iter().map(|(_, d, _, _)| *d).max().expect("non-empty");
    let calendar = build_calendar(first, last)?;

    let mut symbols: Vec<String> = Vec::new();
    for (_, _, symbol, _) in &parsed {
        if !symbols.contains(symbol) {
            symbols.push(symbol.clone());
        }
    }
    let index_of: BTreeMap<&str, usize> = symbols
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let mut grid: Vec<Vec<Option<Ohlcv>>> = vec![vec![None; calendar.len()]; symbols.len()];
    for (line, date, symbol, bar) in &parsed {
        let t = grid_ordinal(&calendar, file, *line, *date)?;
        let slot = &mut grid[index_of[symbol.as_str()]][t];
        if slot.is_some() {
            return Err(Error::parse(
                file,
                *line,
                format!("duplicate bar for {symbol} on {date}"),
            ));
        }
        *slot = Some(*bar);
    }
    let mut prices = Vec::with_capacity(symbols.len());
    for (i, path) in grid.into_iter().enumerate() {
        let missing = path.iter().filter(|b| b.is_none()).count();
        if missing > 0 {
            return Err(Error::Input(format!(
                "symbol {} is missing {missing} of {} grid days",
                symbols[i],
                calendar.len()
            )));
        }
        prices.push(path.into_iter().map(|b| b.expect("checked")).collect());
    }

    // macro.csv groups rows into per-indicator observation streams.
    let macro_text = read("macro.csv")?;
    let file = "macro.csv";
    let mut macro_series: Vec<MacroSeries> = Vec::new();
    for row in csv_rows(file, &macro_text, MACRO_HEADER)? {
        let date: NaiveDate = parse_cell(file, row.line, "date", row.fields[0])?;
        let t = grid_ordinal(&calendar, file, row.line, date)?;
        let name = row.fields[1];
        let value: f64 = parse_cell(file, row.line, "value", row.fields[2])?;
        let frequency: Frequency = parse_cell(file, row.line, "frequency", row.fields[3])?;
        match macro_series.iter_mut().find(|s| s.name == name) {
            Some(series) => {
                if series.frequency != frequency {
                    return Err(Error::parse(
                        file,
                        row.line,
                        format!(
                            "indicator {name} changes frequency from {} to {frequency}",
                            series.frequency
                        ),
                    ));
                }
                if series.observations.iter().any(|&(day, _)| day == t) {
                    return Err(Error::parse(
                        file,
                        row.line,
                        format!("duplicate observation for {name} on {date}"),
                    ));
                }
                series.observations.push((t, value));
            }
            None => macro_series.push(MacroSeries {
                name: name.to_string(),
                frequency,
                observations: vec![(t, value)],
            }),
        }
    }
    for series in &mut macro_series {
        series.observations.sort_by_key(|&(day, _)| day);
    }

    // docs.jsonl, one record per line.
    let docs_text = read("docs.jsonl")?;
    let file = "docs.jsonl";
    let mut docs = Vec::new();
    for (idx, raw) in docs_text.lines().enumerate() {
        if raw.is_empty() {
            continue;
        }
        let line: DocLine = serde_json::from_str(raw)
            .map_err(|e| Error::parse(file, idx + 1, e.to_string()))?;
        docs.push(DocRecord {
            day: grid_ordinal(&calendar, file, idx + 1, line.date)?,
            symbol: line.symbol,
            text: line.text,
        });
    }

    // events.json is optional; foreign price-only datasets load without it.
    let events_path = dir.join("events.json");
    let (events, event_type_names) = if events_path.exists() {
        let text = read("events.json")?;
        let file = "events.json";
        let parsed: EventsFile = serde_json::from_str(&text)
            .map_err(|e| Error::parse(file, e.line(), e.to_string()))?;
        let mut nodes = Vec::with_capacity(parsed.nodes.len());
        for record in &parsed.nodes {
            let type_id = parsed
                .types
                .iter()
                .position(|t| *t == record.type_name)
                .ok_or_else(|| {
                    Error::Input(format!(
                        "event node {} has type '{}' not listed in types",
                        record.id, record.type_name
                    ))
                })?;
            nodes.push(EventNode {
                id: record.id,
                type_id,
                ordinal: calendar.ordinal(record.date).ok_or_else(|| {
                    Error::Input(format!(
                        "event node {} date {} is not on the weekday grid",
                        record.id, record.date
                    ))
                })?,
                features: record.features.clone(),
            });
        }
        (EventGraph::new(nodes, parsed.edges)?, parsed.types)
    } else {
        (EventGraph::empty(), Vec::new())
    };

    let ledger_path = dir.join("ledger.json");
    let ledger: Option<Ledger> = if ledger_path.exists() {
        let text = read("ledger.json")?;
        Some(
            serde_json::from_str(&text)
                .map_err(|e| Error::parse("ledger.json", e.line(), e.to_string()))?,
        )
    } else {
        None
    };

    Ok(Dataset {
        calendar,
        symbols,
        prices,
        macro_series,
        docs,
        events,
        event_type_names,
        ledger,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::gen::{generate, GenSpec};

    fn small_dataset() -> Dataset {
        generate(&GenSpec {
            n_symbols: 3,
            n_days: 60,
            n_events: 4,
            event_symbol_frac: 0.6,
            ..GenSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn round_trip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let original = small_dataset();
        save_dataset(&original, dir.path()).unwrap();
        for name in ["prices.csv", "macro.csv", "docs.jsonl", "events.json", "ledger.json"] {
            assert!(dir.path().join(name).exists(), "{name} missing");
        }
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded.calendar, original.calendar);
        assert_eq!(loaded.symbols, original.symbols);
        assert_eq!(loaded.prices, original.prices);
        assert_eq!(loaded.macro_series, original.macro_series);
        assert_eq!(loaded.docs, original.docs);
        assert_eq!(loaded.events, original.events);
        assert_eq!(loaded.event_type_names, original.event_type_names);
        assert_eq!(loaded.ledger, original.ledger);
        assert_eq!(loaded, original);
    }

    #[test]
    fn saved_files_are_byte_stable() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ds = small_dataset();
        save_dataset(&ds, a.path()).unwrap();
        save_dataset(&ds, b.path()).unwrap();
        for name in ["prices.csv", "macro.csv", "docs.jsonl", "events.json", "ledger.json"] {
            let left = std::fs::read(a.path().join(name)).unwrap();
            let right = std::fs::read(b.path().join(name)).unwrap();
            assert_eq!(left, right, "{name} differs between identical saves");
        }
    }

    #[test]
    fn truncated_csv_reports_file_and_line() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small_dataset();
        save_dataset(&ds, dir.path()).unwrap();
        let path = dir.path().join("prices.csv");
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        lines[2] = "2015-01-06,S00,99.5";
        std::fs::write(&path, lines.join("\n")).unwrap();

        let err = load_dataset(dir.path()).unwrap_err();
        match err {
            Error::Parse { file, line, detail } => {
                assert_eq!(file, "prices.csv");
                assert_eq!(line, 3);
                assert!(detail.contains("7 fields"), "{detail}");
            }
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn foreign_fixture_loads() {
        let dir = tempfile::tempdir().unwrap();
        // Hand-written files on a 3-day grid (Mon 2020-03-02 .. Wed 2020-03-04).
        std::fs::write(
            dir.path().join("prices.csv"),
            "date,symbol,open,high,low,close,volume\n\
             2020-03-02,ACME,10,10.5,9.5,10.25,1000\n\
             2020-03-03,ACME,10.25,11,10,10.75,1500\n\
             2020-03-04,ACME,10.75,10.8,10.1,10.2,900\n",
        )
        .unwrap();
        std::fs::write(
            dir.path().join("macro.csv"),
            "date,indicator,value,frequency\n\
             2020-03-02,cpi,1.9,quarterly\n\
             2020-03-04,cpi,2.1,quarterly\n",
        )
        .unwrap();
        std::fs::write(
            dir.path().join("docs.jsonl"),
            "{\"date\":\"2020-03-02\",\"symbol\":\"ACME\",\"text\":\"earnings beat, surge expected\"}\n\
             {\"date\":\"2020-03-04\",\"symbol\":\"ACME\",\"text\":\"guidance cut\"}\n",
        )
        .unwrap();
        std::fs::write(
            dir.path().join("events.json"),
            r#"{
              "types": ["Rate Hike"],
              "nodes": [
                {"id": 0, "type": "Rate Hike", "date": "2020-03-02", "features": [1.0]},
                {"id": 1, "type": "Rate Hike", "date": "2020-03-04", "features": [1.0]}
              ],
              "edges": [[0, 1, 2]]
            }"#,
        )
        .unwrap();

        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.symbols, vec!["ACME"]);
        assert_eq!(ds.n_days(), 3);
        assert_eq!(ds.prices[0][1].close, 10.75);
        assert_eq!(ds.prices[0][2].volume, 900.0);
        assert_eq!(ds.macro_series.len(), 1);
        assert_eq!(ds.macro_series[0].observations, vec![(0, 1.9), (2, 2.1)]);
        assert_eq!(ds.docs.len(), 2);
        assert_eq!(ds.docs[1].day, 2);
        assert_eq!(ds.docs[1].text, "guidance cut");
        assert_eq!(ds.events.nodes.len(), 2);
        assert_eq!(ds.events.nodes[1].ordinal, 2);
        assert!(ds.events.edges.contains(&(0, 1, 2)));
        assert!(ds.events.edges.contains(&(0, 0, 0)), "self-loops added on load");
        assert_eq!(ds.event_type_names, vec!["Rate Hike"]);
        assert!(ds.ledger.is_none());
    }

    #[test]
    fn weekend_date_is_rejected_with_context() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small_dataset();
        save_dataset(&ds, dir.path()).unwrap();
        let path = dir.path().join("macro.csv");
        let mut text = std::fs::read_to_string(&path).unwrap();
        text.push_str("2015-01-10,macro_composite,0.5,quarterly\n");
        std::fs::write(&path, text).unwrap();

        match load_dataset(dir.path()).unwrap_err() {
            Error::Parse { file, detail, .. } => {
                assert_eq!(file, "macro.csv");
                assert!(detail.contains("2015-01-10"), "{detail}");
            }
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn missing_symbol_day_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("prices.csv"),
            "date,symbol,open,high,low,close,volume\n\
             2020-03-02,AAA,1,1,1,1,10\n\
             2020-03-03,AAA,1,1,1,1,10\n\
             2020-03-02,BBB,2,2,2,2,20\n",
        )
        .unwrap();
        std::fs::write(dir.path().join("macro.csv"), "date,indicator,value,frequency\n").unwrap();
        std::fs::write(dir.path().join("docs.jsonl"), "").unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(
            matches!(&err, Error::Input(msg) if msg.contains("BBB")),
            "got {err}"
        );
    }

    #[test]
    fn unknown_frequency_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small_dataset();
        save_dataset(&ds, dir.path()).unwrap();
        let path = dir.path().join("macro.csv");
        std::fs::write(
            &path,
            "date,indicator,value,frequency\n2015-01-05,cpi,1.0,weekly\n",
        )
        .unwrap();
        match load_dataset(dir.path()).unwrap_err() {
            Error::Parse { file, line, detail } => {
                assert_eq!(file, "macro.csv");
                assert_eq!(line, 2);
                assert!(detail.contains("weekly"), "{detail}");
            }
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn broken_doc_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small_dataset();
        save_dataset(&ds, dir.path()).unwrap();
        let path = dir.path().join("docs.jsonl");
        let mut text = std::fs::read_to_string(&path).unwrap();
        text.push_str("{not json\n");
        let n_lines = text.lines().count();
        std::fs::write(&path, text).unwrap();
        match load_dataset(dir.path()).unwrap_err() {
            Error::Parse { file, line, .. } => {
                assert_eq!(file, "docs.jsonl");
                assert_eq!(line, n_lines);
            }
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn unlisted_event_type_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small_dataset();
        save_dataset(&ds, dir.path()).unwrap();
        std::fs::write(
            dir.path().join("events.json"),
            r#"{"types": ["Rate Hike"],
                "nodes": [{"id": 0, "type": "Scandal", "date": "2015-01-05", "features": []}],
                "edges": []}"#,
        )
        .unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(
            matches!(&err, Error::Input(msg) if msg.contains("Scandal")),
            "got {err}"
        );
    }
}
