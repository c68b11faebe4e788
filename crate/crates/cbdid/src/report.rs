//! Rendering of command output as CSV, Markdown or JSON.
//!
//! Every document starts with the resolved run configuration as `#@ key = value`
//! lines (a `"config"` object in JSON), which [`crate::config`] reads back. The only
//! run-dependent line is the timestamp banner, dropped by `--no-banner`.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::SystemTime;

use serde_json::{json, Map, Value};

use crate::error::Error;
use crate::harness::{McReport, TableKind};

/// JSON schema version.
pub const SCHEMA_VERSION: u32 = 1;

/// Output format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    /// Comma-separated values with `#` comment lines.
    #[default]
    Csv,
    /// Markdown tables.
    Md,
    /// One JSON object.
    Json,
}

impl Format {
    /// Flag value.
    pub fn as_str(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Md => "md",
            Format::Json => "json",
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "csv" => Ok(Format::Csv),
            "md" => Ok(Format::Md),
            "json" => Ok(Format::Json),
            other => Err(Error::Config(format!("unknown format `{other}`; expected csv, md or json"))),
        }
    }
}

/// One table cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    /// Text.
    Text(String),
    /// Real number.
    Num(f64),
    /// Integer.
    Int(i64),
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Num(v) => format!("{v}"),
            Cell::Int(v) => v.to_string(),
        }
    }

    fn md(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Num(v) => short(*v),
            Cell::Int(v) => v.to_string(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Text(s) => Value::String(s.clone()),
            Cell::Num(v) if v.is_finite() => json!(v),
            Cell::Num(_) => Value::Null,
            Cell::Int(v) => json!(v),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

/// Compact human-readable number.
fn short(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if !v.is_finite() {
        format!("{v}")
    } else if v.abs() >= 1e5 || v.abs() < 1e-3 {
        format!("{v:.3e}")
    } else {
        format!("{v:.4}")
    }
}

/// A titled table.
#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    /// Key in JSON output.
    pub name: String,
    /// Caption.
    pub title: String,
    /// Column names.
    pub columns: Vec<String>,
    /// Rows aligned with `columns`.
    pub rows: Vec<Vec<Cell>>,
}

impl Section {
    /// Empty section.
    pub fn new(name: impl Into<String>, title: impl Into<String>, columns: &[&str]) -> Self {
        Self {
            name: name.into(),
            title: title.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }
}

/// Everything a command prints.
#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    /// Subcommand name.
    pub command: String,
    /// Print the timestamp banner.
    pub banner: bool,
    /// Resolved configuration in flag order.
    pub config: Vec<(String, String)>,
    /// Scalar results.
    pub summary: Vec<(String, Cell)>,
    /// Tables.
    pub sections: Vec<Section>,
}

fn banner_line() -> String {
    format!(
        "generated by cbdid {} at {}",
        env!("CARGO_PKG_VERSION"),
        humantime::format_rfc3339_seconds(SystemTime::now())
    )
}

fn config_lines(doc: &Document, out: &mut String) {
    let _ = writeln!(out, "#@ command = {}", doc.command);
    for (k, v) in &doc.config {
        let _ = writeln!(out, "#@ {k} = {v}");
    }
}

fn csv_row(cells: impl Iterator<Item = String>) -> String {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    let fields: Vec<String> = cells.collect();
    w.write_record(&fields).expect("in-memory write");
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
}

fn render_csv(doc: &Document) -> String {
    let mut out = String::new();
    if doc.banner {
        let _ = writeln!(out, "# {}", banner_line());
    }
    config_lines(doc, &mut out);
    for (k, v) in &doc.summary {
        let _ = writeln!(out, "# {k}: {}", v.csv());
    }
    for s in &doc.sections {
        let _ = writeln!(out, "# [{}] {}", s.name, s.title);
        out.push_str(&csv_row(s.columns.iter().cloned()));
        for r in &s.rows {
            out.push_str(&csv_row(r.iter().map(Cell::csv)));
        }
    }
    out
}

fn render_md(doc: &Document) -> String {
    let mut out = String::new();
    if doc.banner {
        let _ = writeln!(out, "_{}_\n", banner_line());
    }
    let _ = writeln!(out, "```");
    config_lines(doc, &mut out);
    let _ = writeln!(out, "```\n");
    for (k, v) in &doc.summary {
        let _ = writeln!(out, "- {k}: {}", v.md());
    }
    if !doc.summary.is_empty() {
        out.push('\n');
    }
    for s in &doc.sections {
        let _ = writeln!(out, "### {}\n", s.title);
        let body: Vec<Vec<String>> = s.rows.iter().map(|r| r.iter().map(Cell::md).collect()).collect();
        let widths: Vec<usize> = (0..s.columns.len())
            .map(|j| body.iter().map(|r| r[j].chars().count()).chain([s.columns[j].chars().count(), 3]).max().unwrap_or(3))
            .collect();
        let line = |cells: &[String]| {
            let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
            format!("| {} |\n", padded.join(" | "))
        };
        out.push_str(&line(&s.columns));
        let rule: Vec<String> = widths.iter().map(|w| format!("{}:", "-".repeat(w - 1))).collect();
        out.push_str(&format!("|{}|\n", rule.iter().map(|r| format!(" {r} ")).collect::<Vec<_>>().join("|")));
        for r in &body {
            out.push_str(&line(r));
        }
        out.push('\n');
    }
    out
}

fn render_json(doc: &Document) -> String {
    let mut root = Map::new();
    root.insert("schema".into(), json!(SCHEMA_VERSION));
    if doc.banner {
        root.insert("banner".into(), json!(banner_line()));
    }
    root.insert("command".into(), json!(doc.command));
    let config: Map<String, Value> = doc.config.iter().map(|(k, v)| (k.clone(), json!(v))).collect();
    root.insert("config".into(), Value::Object(config));
    let summary: Map<String, Value> = doc.summary.iter().map(|(k, v)| (k.clone(), v.json())).collect();
    root.insert("summary".into(), Value::Object(summary));
    let sections: Map<String, Value> = doc
        .sections
        .iter()
        .map(|s| {
            let rows: Vec<Value> = s.rows.iter().map(|r| Value::Array(r.iter().map(Cell::json).collect())).collect();
            (s.name.clone(), json!({ "title": s.title, "columns": s.columns, "rows": rows }))
        })
        .collect();
    root.insert("sections".into(), Value::Object(sections));
    let mut text = serde_json::to_string_pretty(&Value::Object(root)).expect("JSON values serialize");
    text.push('\n');
    text
}

/// Renders a document.
pub fn render(doc: &Document, format: Format) -> String {
    match format {
        Format::Csv => render_csv(doc),
        Format::Md => render_md(doc),
        Format::Json => render_json(doc),
    }
}

/// Sections of a Monte Carlo report: the aggregated table, failures, and with
/// `dump_raw` every successful replication.
pub fn mc_sections(report: &McReport, dump_raw: bool) -> Vec<Section> {
    let t = report.table;
    let mut cols: Vec<&str> = vec!["cell"];
    cols.extend(t.key_columns());
    cols.extend(t.value_columns());
    cols.extend(["successes", "failures"]);
    let mut main = Section::new("table", t.title(), &cols);
    for c in &report.cells {
        let mut row: Vec<Cell> = vec![c.index.into()];
        for (k, v) in t.key_columns().iter().zip(t.key_values(&c.spec)) {
            row.push(if *k == "n" { Cell::Int(c.spec.n as i64) } else if *k == "case" { v.into() } else { Cell::Num(v.parse().unwrap_or(f64::NAN)) });
        }
        row.extend(c.values.iter().map(|&v| Cell::Num(v)));
        row.push(c.raw.len().into());
        row.push(c.failures.len().into());
        main.rows.push(row);
    }
    let mut out = vec![main];
    let failures: Vec<Vec<Cell>> = report
        .cells
        .iter()
        .flat_map(|c| c.failures.iter().map(move |f| vec![c.index.into(), Cell::Int(f.rep as i64), f.message.clone().into()]))
        .collect();
    if !failures.is_empty() {
        let mut s = Section::new("failures", "Excluded replications", &["cell", "rep", "error"]);
        s.rows = failures;
        out.push(s);
    }
    if dump_raw {
        let mut cols: Vec<&str> = vec!["cell", "replication"];
        cols.extend(t.raw_columns());
        let mut s = Section::new("raw", "Per-replication values", &cols);
        for c in &report.cells {
            for (i, r) in c.raw.iter().enumerate() {
                let mut row: Vec<Cell> = vec![c.index.into(), i.into()];
                row.extend(r.iter().map(|&v| Cell::Num(v)));
                s.rows.push(row);
            }
        }
        out.push(s);
    }
    out
}

/// Scalar summary of a Monte Carlo report.
pub fn mc_summary(report: &McReport) -> Vec<(String, Cell)> {
    let mut v: Vec<(String, Cell)> = vec![
        ("table".into(), report.table.id().into()),
        ("cells".into(), report.cells.len().into()),
        ("attempted".into(), report.attempted().into()),
        ("failed".into(), report.failed().into()),
        ("failure_rate".into(), Cell::Num(report.failure_rate())),
    ];
    if let TableKind::Selection(_) = report.table.kind() {
        v.push(("risk_convention".into(), "sum of e1 (x'theta* - x'theta_hat)^2, unselected slopes 0".into()));
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc() -> Document {
        let mut s = Section::new("t", "Title", &["a", "b"]);
        s.rows.push(vec![Cell::Num(1.5), "x,y".into()]);
        Document {
            command: "simulate".into(),
            banner: false,
            config: vec![("seed".into(), "7".into())],
            summary: vec![("n".into(), Cell::Int(3))],
            sections: vec![s],
        }
    }

    #[test]
    fn csv_quotes_and_embeds_config() {
        let text = render(&doc(), Format::Csv);
        assert!(text.starts_with("#@ command = simulate\n#@ seed = 7\n"));
        assert!(text.contains("1.5,\"x,y\"\n"));
        assert!(!text.contains("generated by"));
    }

    #[test]
    fn json_is_versioned() {
        let v: Value = serde_json::from_str(&render(&doc(), Format::Json)).unwrap();
        assert_eq!(v["schema"], 1);
        assert_eq!(v["config"]["seed"], "7");
        assert_eq!(v["sections"]["t"]["rows"][0][0], 1.5);
    }

    #[test]
    fn banner_only_when_requested() {
        let mut d = doc();
        d.banner = true;
        for f in [Format::Csv, Format::Md, Format::Json] {
            assert!(render(&d, f).contains("generated by cbdid"));
        }
    }

    #[test]
    fn markdown_has_aligned_table() {
        let text = render(&doc(), Format::Md);
        assert!(text.contains("| 1.5000 | x,y |"));
        assert!(text.contains("#@ seed = 7"));
    }
}
