//! Aggregated reports over session records, as CSV or JSON.

use serde_json::{Map, Value};
use teleop_core::metrics::{
    aggregate, compare, comparison_table, task_performance_table, task_times_table, MetricsError, SessionRecord, Table,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// Parses `mode1:mode2`; `1:2` and `manual:semi` are accepted as well.
pub fn parse_compare(spec: &str) -> Result<(u8, u8), String> {
    let mode = |s: &str| match s.trim() {
        "mode1" | "1" | "manual" => Ok(1),
        "mode2" | "2" | "semi" => Ok(2),
        other => Err(format!("unknown mode {other:?} in --compare (use mode1 or mode2)")),
    };
    let (a, b) = spec.split_once(':').ok_or_else(|| format!("--compare expects A:B, got {spec:?}"))?;
    let (a, b) = (mode(a)?, mode(b)?);
    if a == b {
        return Err("--compare needs two different modes".into());
    }
    Ok((a, b))
}

/// Task performance and per-task time tables, plus the comparison of
/// `compare.1` against the baseline `compare.0` when requested.
pub fn build_tables(records: &[SessionRecord], modes: Option<(u8, u8)>) -> Result<Vec<Table>, MetricsError> {
    for r in records {
        r.validate(None)?;
    }
    let aggs = aggregate(records)?;
    let mut tables = vec![task_performance_table(&aggs), task_times_table(&aggs)];
    if let Some((base, other)) = modes {
        let pick = |m: u8| aggs.iter().filter(|a| a.mode == m).cloned().collect::<Vec<_>>();
        tables.push(comparison_table(&compare(&pick(base), &pick(other))?));
    }
    Ok(tables)
}

/// Each table as a `# title` line, a CSV header and rows, separated by a
/// blank line.
pub fn render_csv(tables: &[Table]) -> String {
    let mut out = String::new();
    for (i, t) in tables.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&format!("# {}\n", t.title));
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&t.header).expect("in-memory write");
        for row in &t.rows {
            w.write_record(row).expect("in-memory write");
        }
        out.push_str(&String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells"));
    }
    out
}

pub fn render_json(tables: &[Table]) -> String {
    let tables: Vec<Value> = tables
        .iter()
        .map(|t| {
            let rows: Vec<Value> = t
                .rows
                .iter()
                .map(|row| Value::Object(t.header.iter().cloned().zip(row.iter().cloned().map(Value::String)).collect::<Map<_, _>>()))
                .collect();
            let mut obj = Map::new();
            obj.insert("title".into(), Value::String(t.title.clone()));
            obj.insert("rows".into(), Value::Array(rows));
            Value::Object(obj)
        })
        .collect();
    let mut out = serde_json::to_string_pretty(&serde_json::json!({ "tables": tables })).expect("json values");
    out.push('\n');
    out
}

pub fn render(tables: &[Table], format: Format) -> String {
    match format {
        Format::Csv => render_csv(tables),
        Format::Json => render_json(tables),
    }
}
