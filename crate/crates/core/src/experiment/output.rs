//! Artifact collection. Everything is buffered and written once at the end of a
//! run; wall-clock times go to `run.log` only.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde_json::{Map, Value};

use crate::error::Result;

pub const MODULE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// One CSV table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Table { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    fn render(&self, header: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# {header}");
        let _ = writeln!(s, "{}", self.columns.join(","));
        for r in &self.rows {
            let _ = writeln!(s, "{}", r.join(","));
        }
        s
    }
}

/// Shortest round-trip decimal form; `nan` for missing values.
pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:?}")
    } else {
        "nan".to_string()
    }
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

#[derive(Debug)]
pub struct Artifacts {
    pub summary: Map<String, Value>,
    pub tables: BTreeMap<String, Table>,
    pub report: String,
    log: String,
    started: Instant,
}

impl Default for Artifacts {
    fn default() -> Self {
        Self::new()
    }
}

impl Artifacts {
    pub fn new() -> Self {
        Artifacts {
            summary: Map::new(),
            tables: BTreeMap::new(),
            report: String::new(),
            log: String::new(),
            started: Instant::now(),
        }
    }

    pub fn section(&mut self, name: &str, value: Value) {
        self.summary.insert(name.to_string(), value);
    }

    pub fn table(&mut self, name: &str, table: Table) {
        self.tables.insert(name.to_string(), table);
    }

    pub fn line(&mut self, text: impl AsRef<str>) {
        self.report.push_str(text.as_ref());
        self.report.push('\n');
    }

    /// Timestamped entry for the sidecar log.
    pub fn log(&mut self, text: impl AsRef<str>) {
        let wall = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
        let _ = writeln!(
            self.log,
            "unix={wall:.3} elapsed={:.3}s {}",
            self.started.elapsed().as_secs_f64(),
            text.as_ref()
        );
        log::info!("{}", text.as_ref());
    }

    /// Write `summary.json`, every table as `<name>.csv`, `report.txt` and `run.log`.
    pub fn write(&self, dir: &Path, config_digest: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let header = format!("dalab {MODULE_VERSION} config_sha256={config_digest}");
        let mut summary = serde_json::to_string_pretty(&Value::Object(self.summary.clone()))?;
        summary.push('\n');
        std::fs::write(dir.join("summary.json"), summary)?;
        for (name, t) in &self.tables {
            std::fs::write(dir.join(format!("{name}.csv")), t.render(&header))?;
        }
        std::fs::write(dir.join("report.txt"), format!("{header}\n\n{}", self.report))?;
        std::fs::write(dir.join("run.log"), &self.log)?;
        Ok(())
    }
}
