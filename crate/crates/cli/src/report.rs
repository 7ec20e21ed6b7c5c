use serde::Serialize;
use serde_json::Value;

use disperc::audit::Assertion;

use crate::settings::RunConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub command: String,
    pub config: Option<RunConfig>,
    pub results: Value,
    pub certificate: Option<Value>,
    pub assertions: Vec<Assertion>,
    pub error: Option<String>,
    pub wall_time: f64,
}

/// What a subcommand hands back before the report is assembled.
#[derive(Debug, Default)]
pub struct Outcome {
    pub results: Value,
    pub certificate: Option<Value>,
    pub assertions: Vec<Assertion>,
    /// Lines for the human summary on standard error.
    pub summary: Vec<String>,
    /// `(header, rows)` for `--csv`.
    pub csv: Option<(&'static str, Vec<[f64; 3]>)>,
}

impl Outcome {
    pub fn all_pass(&self) -> bool {
        self.assertions.iter().all(|a| a.pass)
    }
}

pub fn csv_text(header: &str, rows: &[[f64; 3]]) -> String {
    let mut out = format!("{header}\n");
    for [a, b, c] in rows {
        out.push_str(&format!("{a},{b},{c}\n"));
    }
    out
}
