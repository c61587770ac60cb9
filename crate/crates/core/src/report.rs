//! Report envelope and canonical serialization.
//!
//! JSON output is canonical: object keys sorted, floats printed with 17
//! significant digits so that every value round-trips exactly.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// 17-significant-digit scientific notation, the format used in every CSV.
pub fn fmt17(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "NaN".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Provenance {
    pub tool_version: String,
    /// Seconds since the Unix epoch; excluded from determinism checks.
    pub timestamp: u64,
    pub seeds: Vec<u64>,
}

impl Provenance {
    pub fn now(seeds: Vec<u64>) -> Self {
        Self {
            tool_version: crate::TOOL_VERSION.to_string(),
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            seeds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Report {
    pub task: String,
    /// The effective configuration after flag overrides.
    pub config: Value,
    pub results: Value,
    pub provenance: Provenance,
    pub warnings: Vec<String>,
}

impl Report {
    pub fn new(task: impl Into<String>, config: &impl Serialize, results: &impl Serialize, seeds: Vec<u64>) -> Result<Self> {
        Ok(Self {
            task: task.into(),
            config: serde_json::to_value(config)?,
            results: serde_json::to_value(results)?,
            provenance: Provenance::now(seeds),
            warnings: Vec::new(),
        })
    }

    pub fn with_warnings(mut self, warnings: Vec<String>) -> Self {
        self.warnings = warnings;
        self
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(canonical_json(&serde_json::to_value(self)?))
    }

    /// Canonical text of the results payload alone.
    pub fn results_json(&self) -> String {
        canonical_json(&self.results)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// A named CSV table written next to the main output.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub name: String,
    pub content: String,
}

/// Pretty-printed JSON with sorted keys and 17-digit floats.
pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_value(value, 0, &mut out);
    out.push('\n');
    out
}

fn write_value(value: &Value, indent: usize, out: &mut String) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if n.is_f64() {
                let v = n.as_f64().unwrap_or(f64::NAN);
                out.push_str(&fmt17(v));
            } else {
                let _ = write!(out, "{n}");
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s).unwrap_or_default()),
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            // numeric rows stay on one line
            if items.iter().all(|v| v.is_number()) {
                out.push('[');
                for (i, v) in items.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    write_value(v, indent, out);
                }
                out.push(']');
                return;
            }
            out.push_str("[\n");
            for (i, v) in items.iter().enumerate() {
                pad(indent + 1, out);
                write_value(v, indent + 1, out);
                if i + 1 < items.len() {
                    out.push(',');
                }
                out.push('\n');
            }
            pad(indent, out);
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push_str("{\n");
            for (i, k) in keys.iter().enumerate() {
                pad(indent + 1, out);
                out.push_str(&serde_json::to_string(k).unwrap_or_default());
                out.push_str(": ");
                write_value(&map[*k], indent + 1, out);
                if i + 1 < keys.len() {
                    out.push(',');
                }
                out.push('\n');
            }
            pad(indent, out);
            out.push('}');
        }
    }
}

fn pad(indent: usize, out: &mut String) {
    for _ in 0..indent {
        out.push_str("  ");
    }
}

/// Writes the report as canonical JSON, or writes `csv` when the format is
/// CSV (which then must be present).
pub fn write_report(report: &Report, path: &Path, format: Format, csv: Option<&str>) -> Result<()> {
    let text = match format {
        Format::Json => report.to_json()?,
        Format::Csv => csv
            .ok_or_else(|| Error::input(format!("task '{}' has no CSV form", report.task)))?
            .to_string(),
    };
    write_file(path, &text)
}

/// Writes each table to `<stem>.<name>.csv` beside `path`; returns the paths.
pub fn write_companions(path: &Path, tables: &[CsvTable]) -> Result<Vec<PathBuf>> {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    let dir = path.parent().unwrap_or(Path::new(""));
    let mut written = Vec::new();
    for t in tables {
        let p = dir.join(format!("{stem}.{}.csv", t.name));
        write_file(&p, &t.content)?;
        written.push(p);
    }
    Ok(written)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, text)?;
    Ok(())
}
