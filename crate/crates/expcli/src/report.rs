//! Versioned reports and their JSON, CSV and table renderings.

use std::fmt::Write as _;

use serde::Serialize;
use serde_json::{Map, Value};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Format {
    #[default]
    Json,
    Csv,
    Table,
}

/// A command result. `rows`, when present, is a list of flat records (trajectory points,
/// per-setup results) and becomes the CSV body.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub schema: u32,
    pub command: String,
    pub result: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rows: Option<Vec<Value>>,
}

impl Report {
    pub fn new(command: &str, result: impl Serialize) -> serde_json::Result<Self> {
        Ok(Self {
            schema: SCHEMA_VERSION,
            command: command.to_string(),
            result: serde_json::to_value(result)?,
            rows: None,
        })
    }

    pub fn with_rows<T: Serialize>(mut self, rows: &[T]) -> serde_json::Result<Self> {
        self.rows = Some(
            rows.iter()
                .map(serde_json::to_value)
                .collect::<serde_json::Result<_>>()?,
        );
        Ok(self)
    }

    pub fn render(&self, format: Format) -> anyhow::Result<String> {
        Ok(match format {
            Format::Json => serde_json::to_string_pretty(self)? + "\n",
            Format::Csv => self.to_csv()?,
            Format::Table => self.to_table(),
        })
    }

    /// With rows: one CSV record per row, columns from the flattened keys of all rows.
    /// Without rows: `key,value` pairs of the flattened result.
    pub fn to_csv(&self) -> anyhow::Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        match &self.rows {
            Some(rows) => {
                let flat: Vec<Vec<(String, String)>> = rows.iter().map(flatten).collect();
                let mut columns: Vec<String> = Vec::new();
                for row in &flat {
                    for (k, _) in row {
                        if !columns.contains(k) {
                            columns.push(k.clone());
                        }
                    }
                }
                w.write_record(&columns)?;
                for row in &flat {
                    w.write_record(columns.iter().map(|c| {
                        row.iter()
                            .find(|(k, _)| k == c)
                            .map_or("", |(_, v)| v.as_str())
                    }))?;
                }
            }
            None => {
                w.write_record(["key", "value"])?;
                for (k, v) in flatten(&self.result) {
                    w.write_record([k, v])?;
                }
            }
        }
        Ok(String::from_utf8(w.into_inner()?)?)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let pairs = flatten(&self.result);
        let width = pairs.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let _ = writeln!(out, "{}", self.command);
        for (k, v) in &pairs {
            let _ = writeln!(out, "  {k:<width$}  {v}");
        }
        if let Some(rows) = &self.rows {
            let flat: Vec<Vec<(String, String)>> = rows.iter().map(flatten).collect();
            if let Some(first) = flat.first() {
                let columns: Vec<&str> = first.iter().map(|(k, _)| k.as_str()).collect();
                let widths: Vec<usize> = columns
                    .iter()
                    .enumerate()
                    .map(|(i, c)| {
                        flat.iter()
                            .filter_map(|r| r.get(i).map(|(_, v)| v.len()))
                            .max()
                            .unwrap_or(0)
                            .max(c.len())
                    })
                    .collect();
                out.push('\n');
                let line = |cells: Vec<&str>| {
                    cells
                        .iter()
                        .zip(&widths)
                        .map(|(c, w)| format!("{c:>w$}"))
                        .collect::<Vec<_>>()
                        .join("  ")
                };
                let _ = writeln!(out, "{}", line(columns.clone()));
                for r in &flat {
                    let _ = writeln!(out, "{}", line(r.iter().map(|(_, v)| v.as_str()).collect()));
                }
            }
        }
        out
    }
}

/// Flattens nested objects and arrays into dotted keys; scalars keep their JSON text
/// except strings, which are written bare. Null becomes an empty cell.
pub fn flatten(value: &Value) -> Vec<(String, String)> {
    let mut out = Vec::new();
    flatten_into(value, String::new(), &mut out);
    out
}

fn flatten_into(value: &Value, prefix: String, out: &mut Vec<(String, String)>) {
    let join = |k: &str| {
        if prefix.is_empty() {
            k.to_string()
        } else {
            format!("{prefix}.{k}")
        }
    };
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                flatten_into(v, join(k), out);
            }
        }
        Value::Array(items) => {
            for (i, v) in items.iter().enumerate() {
                flatten_into(v, join(&i.to_string()), out);
            }
        }
        Value::Null => out.push((prefix, String::new())),
        Value::String(s) => out.push((prefix, s.clone())),
        other => out.push((prefix, other.to_string())),
    }
}

/// Object with the given fields, for ad hoc results.
pub fn object(fields: impl IntoIterator<Item = (&'static str, Value)>) -> Value {
    Value::Object(
        fields
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect::<Map<_, _>>(),
    )
}
