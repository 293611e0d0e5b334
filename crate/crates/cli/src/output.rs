//! Report documents and their three encodings.
//!
//! JSON is the canonical encoding and carries full precision. TSV carries the
//! same numbers (shortest round-trip decimal form). The `table` format is a
//! human view with fixed precision: two decimals for percentage points, four for
//! probabilities.

use std::fmt::Write as _;

use las_core::stats::format_p;
use serde_json::{Map, Value};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Tsv,
    Table,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    Int(i64),
    /// Percentage points.
    Pp(f64),
    /// Probabilities, proportions and other unit-scale reals.
    Prob(f64),
    PValue(f64),
    Empty,
}

impl Cell {
    fn to_json(&self) -> Value {
        match self {
            Cell::Text(s) => Value::from(s.as_str()),
            Cell::Int(i) => Value::from(*i),
            Cell::Pp(v) | Cell::Prob(v) | Cell::PValue(v) => {
                serde_json::Number::from_f64(*v).map_or(Value::Null, Value::Number)
            }
            Cell::Empty => Value::Null,
        }
    }

    fn to_tsv(&self) -> String {
        match self {
            Cell::Text(s) => s.replace(['\t', '\n'], " "),
            Cell::Int(i) => i.to_string(),
            Cell::Pp(v) | Cell::Prob(v) | Cell::PValue(v) => format!("{v:?}"),
            Cell::Empty => String::new(),
        }
    }

    fn to_pretty(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Int(i) => i.to_string(),
            Cell::Pp(v) => format!("{v:.2}"),
            Cell::Prob(v) => format!("{v:.4}"),
            Cell::PValue(p) => format_p(*p),
            Cell::Empty => "-".to_string(),
        }
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len(), "row width for {}", self.name);
        self.rows.push(row);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub command: String,
    pub meta: Vec<(String, Cell)>,
    pub tables: Vec<Table>,
}

impl Document {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            meta: Vec::new(),
            tables: Vec::new(),
        }
    }

    pub fn meta(&mut self, key: &str, value: impl Into<Cell>) {
        self.meta.push((key.to_string(), value.into()));
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn to_json(&self) -> Value {
        let mut root = Map::new();
        root.insert("command".into(), Value::from(self.command.as_str()));
        let meta: Map<String, Value> = self
            .meta
            .iter()
            .map(|(k, v)| (k.clone(), v.to_json()))
            .collect();
        root.insert("meta".into(), Value::Object(meta));
        let mut tables = Map::new();
        for t in &self.tables {
            let rows: Vec<Value> = t
                .rows
                .iter()
                .map(|row| {
                    Value::Object(
                        t.columns
                            .iter()
                            .zip(row)
                            .map(|(c, v)| (c.clone(), v.to_json()))
                            .collect(),
                    )
                })
                .collect();
            tables.insert(t.name.clone(), Value::Array(rows));
        }
        root.insert("tables".into(), Value::Object(tables));
        Value::Object(root)
    }

    pub fn render(&self, format: Format) -> Result<String, CliError> {
        match format {
            Format::Json => {
                let mut s = serde_json::to_string_pretty(&self.to_json())
                    .map_err(|e| CliError::Io(e.to_string()))?;
                s.push('\n');
                Ok(s)
            }
            Format::Tsv => Ok(self.render_tsv()),
            Format::Table => Ok(self.render_table()),
        }
    }

    fn render_tsv(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.meta {
            let _ = writeln!(out, "#meta\t{k}\t{}", v.to_tsv());
        }
        for t in &self.tables {
            let _ = writeln!(out, "#table\t{}", t.name);
            let _ = writeln!(out, "{}", t.columns.join("\t"));
            for row in &t.rows {
                let cells: Vec<String> = row.iter().map(Cell::to_tsv).collect();
                let _ = writeln!(out, "{}", cells.join("\t"));
            }
        }
        out
    }

    fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "== {} ==", self.command);
        for (k, v) in &self.meta {
            let _ = writeln!(out, "{k}: {}", v.to_pretty());
        }
        for t in &self.tables {
            let _ = writeln!(out, "\n[{}]", t.name);
            let cells: Vec<Vec<String>> = t
                .rows
                .iter()
                .map(|r| r.iter().map(Cell::to_pretty).collect())
                .collect();
            let widths: Vec<usize> = t
                .columns
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    cells
                        .iter()
                        .map(|r| r[i].chars().count())
                        .chain(std::iter::once(c.chars().count()))
                        .max()
                        .unwrap_or(0)
                })
                .collect();
            let line = |vals: &[String]| {
                vals.iter()
                    .zip(&widths)
                    .map(|(v, w)| format!("{v:>w$}"))
                    .collect::<Vec<_>>()
                    .join("  ")
            };
            let _ = writeln!(out, "{}", line(&t.columns));
            for r in &cells {
                let _ = writeln!(out, "{}", line(r));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc() -> Document {
        let mut d = Document::new("demo");
        d.meta("seed", 7u64);
        let mut t = Table::new("rows", &["name", "las", "p"]);
        t.push(vec!["human".into(), Cell::Pp(14.734999), Cell::PValue(1e-40)]);
        t.push(vec!["ST-Ra".into(), Cell::Pp(-0.1), Cell::Empty]);
        d.tables.push(t);
        d
    }

    #[test]
    fn json_and_tsv_carry_same_numbers() {
        let d = doc();
        let json = d.to_json();
        let tsv = d.render(Format::Tsv).unwrap();
        let row: Vec<&str> = tsv.lines().nth(3).unwrap().split('\t').collect();
        let las: f64 = row[1].parse().unwrap();
        assert_eq!(Value::from(las), json["tables"]["rows"][0]["las"]);
        let p: f64 = row[2].parse().unwrap();
        assert_eq!(p, 1e-40);
    }

    #[test]
    fn pretty_uses_fixed_precision() {
        let s = doc().render(Format::Table).unwrap();
        assert!(s.contains("14.73"));
        assert!(s.contains("-0.10"));
        assert!(!s.contains("14.734999"));
    }
}
