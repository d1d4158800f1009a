//! Experiment reports: named CSV tables plus fitted statistics, written as a directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::Result;
use crate::measure::format_float;
use crate::stats::LinearFit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Convergence,
    Stability,
    Moments,
    Invariant,
    Chaos,
    Fournier,
    Simulate,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::Convergence,
        ExperimentKind::Stability,
        ExperimentKind::Moments,
        ExperimentKind::Invariant,
        ExperimentKind::Chaos,
        ExperimentKind::Fournier,
        ExperimentKind::Simulate,
    ];

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == name)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Convergence => "convergence",
            ExperimentKind::Stability => "stability",
            ExperimentKind::Moments => "moments",
            ExperimentKind::Invariant => "invariant",
            ExperimentKind::Chaos => "chaos",
            ExperimentKind::Fournier => "fournier",
            ExperimentKind::Simulate => "simulate",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Float(f64),
    Int(i64),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Float(v) => format_float(*v),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Float(v) => Some(*v),
            Cell::Int(v) => Some(*v as f64),
            Cell::Text(_) => None,
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
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

/// A CSV-serializable matrix; written to `<name>.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: impl Into<String>, columns: &[&str]) -> Self {
        Table {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len(), "table {}", self.name);
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<&Cell>> {
        let idx = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| &r[idx]).collect())
    }

    /// Numeric column values; text cells are skipped.
    pub fn floats(&self, name: &str) -> Option<Vec<f64>> {
        Some(
            self.column(name)?
                .into_iter()
                .filter_map(Cell::as_f64)
                .collect(),
        )
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render))?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub kind: ExperimentKind,
    pub seed: u64,
    /// Echo of the configuration that produced the report.
    pub config: Value,
    pub tables: Vec<Table>,
    pub fits: BTreeMap<String, LinearFit>,
    pub stats: BTreeMap<String, f64>,
    pub flags: BTreeMap<String, bool>,
    pub notes: BTreeMap<String, String>,
    pub wall_clock_secs: f64,
}

#[derive(Serialize)]
struct ReportJson<'a> {
    kind: &'a str,
    seed: u64,
    config: &'a Value,
    fits: &'a BTreeMap<String, LinearFit>,
    stats: BTreeMap<&'a str, Value>,
    flags: &'a BTreeMap<String, bool>,
    notes: &'a BTreeMap<String, String>,
    tables: Vec<&'a str>,
}

fn json_number(v: f64) -> Value {
    serde_json::Number::from_f64(v)
        .map(Value::Number)
        .unwrap_or_else(|| Value::String(format_float(v)))
}

impl ExperimentReport {
    pub fn new(kind: ExperimentKind, seed: u64, config: Value) -> Self {
        ExperimentReport {
            kind,
            seed,
            config,
            tables: Vec::new(),
            fits: BTreeMap::new(),
            stats: BTreeMap::new(),
            flags: BTreeMap::new(),
            notes: BTreeMap::new(),
            wall_clock_secs: 0.0,
        }
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn stat(&self, name: &str) -> Option<f64> {
        self.stats.get(name).copied()
    }

    pub fn set_stat(&mut self, name: &str, value: f64) {
        self.stats.insert(name.to_string(), value);
    }

    pub fn set_flag(&mut self, name: &str, value: bool) {
        self.flags.insert(name.to_string(), value);
    }

    pub fn set_note(&mut self, name: &str, value: impl Into<String>) {
        self.notes.insert(name.to_string(), value.into());
    }

    /// `report.json` contents; everything in it is a function of (kind, config, seed).
    pub fn to_json_string(&self) -> Result<String> {
        let doc = ReportJson {
            kind: self.kind.as_str(),
            seed: self.seed,
            config: &self.config,
            fits: &self.fits,
            stats: self
                .stats
                .iter()
                .map(|(k, v)| (k.as_str(), json_number(*v)))
                .collect(),
            flags: &self.flags,
            notes: &self.notes,
            tables: self.tables.iter().map(|t| t.name.as_str()).collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)? + "\n")
    }

    /// Writes `report.json`, one CSV per table, and `timing.json` (wall clock only).
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.json"), self.to_json_string()?)?;
        for t in &self.tables {
            fs::write(dir.join(format!("{}.csv", t.name)), t.to_csv_string()?)?;
        }
        let timing = serde_json::json!({ "wall_clock_secs": self.wall_clock_secs });
        fs::write(
            dir.join("timing.json"),
            serde_json::to_string_pretty(&timing)? + "\n",
        )?;
        Ok(())
    }
}

/// Renders a time for use in a file name: `0.4` -> `0.4`, `20` -> `20`.
pub fn time_label(t: f64) -> String {
    let s = format_float(t);
    s.strip_suffix(".0").map(str::to_string).unwrap_or(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_csv() {
        let mut t = Table::new("rmse", &["dt", "rmse", "method"]);
        t.push(vec![0.5.into(), 1e-3.into(), "tem".into()]);
        t.push(vec![0.25.into(), f64::INFINITY.into(), "em".into()]);
        assert_eq!(
            t.to_csv_string().unwrap(),
            "dt,rmse,method\n0.5,0.001,tem\n0.25,inf,em\n"
        );
        assert_eq!(t.floats("dt").unwrap(), vec![0.5, 0.25]);
    }

    #[test]
    fn time_labels() {
        assert_eq!(time_label(20.0), "20");
        assert_eq!(time_label(0.4), "0.4");
    }

    #[test]
    fn report_writes_directory() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = ExperimentReport::new(ExperimentKind::Chaos, 7, serde_json::json!({"a": 1}));
        r.set_stat("slope", -1.0);
        r.set_stat("em_peak", f64::INFINITY);
        r.tables.push(Table::new("chaos", &["m", "mean_w2_sq"]));
        r.write_dir(dir.path()).unwrap();
        let json: Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap())
                .unwrap();
        assert_eq!(json["kind"], "chaos");
        assert_eq!(json["stats"]["slope"], -1.0);
        assert_eq!(json["stats"]["em_peak"], "inf");
        assert!(dir.path().join("chaos.csv").exists());
    }
}
