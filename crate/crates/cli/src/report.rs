use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use domlab::system::SystemSummary;
use domlab::{Error, ErrorCategory};
use serde::Serialize;
use serde_json::Value;

pub const EXIT_OK: i32 = 0;
pub const EXIT_NUMERICAL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_BUDGET: i32 = 3;
pub const EXIT_INCONCLUSIVE: i32 = 4;
pub const EXIT_SCENARIO_FAILED: i32 = 5;

/// Failure of a command, carrying the exit code it maps to.
#[derive(Debug)]
pub enum CliError {
    Core(Error),
    /// Error while reading the named file.
    InFile(String, Error),
    Config(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) | CliError::InFile(_, e) => match e.category() {
                ErrorCategory::Config => EXIT_CONFIG,
                ErrorCategory::Budget => EXIT_BUDGET,
                ErrorCategory::Inconclusive => EXIT_INCONCLUSIVE,
                ErrorCategory::Numerical => EXIT_NUMERICAL,
            },
            CliError::Config(_) | CliError::Io(_) => EXIT_CONFIG,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) | CliError::InFile(_, e) => e.kind(),
            CliError::Config(_) => "config",
            CliError::Io(_) => "io",
        }
    }

    pub fn to_json(&self) -> Value {
        serde_json::json!({
            "error": {
                "kind": self.kind(),
                "exit_code": self.exit_code(),
                "message": self.to_string(),
            }
        })
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::InFile(path, e) => write!(f, "{path}:{e}"),
            CliError::Config(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Top-level JSON document written by every command.
#[derive(Debug, Serialize)]
pub struct Report {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config: Value,
    pub system: Option<SystemSummary>,
    pub result: Value,
}

impl Report {
    pub fn new(command: &'static str, config: impl Serialize, system: Option<SystemSummary>, result: impl Serialize) -> CliResult<Self> {
        Ok(Report {
            tool: "domlab",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config: to_value(config)?,
            system,
            result: to_value(result)?,
        })
    }

    pub fn to_pretty(&self) -> CliResult<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| CliError::Io(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    /// Writes to `path`, or to stdout when no path is given.
    pub fn emit(&self, path: Option<&Path>) -> CliResult<()> {
        let text = self.to_pretty()?;
        match path {
            Some(p) => std::fs::write(p, text).map_err(|e| CliError::Io(format!("{}: {e}", p.display()))),
            None => {
                let mut out = std::io::stdout().lock();
                out.write_all(text.as_bytes())?;
                Ok(())
            }
        }
    }
}

pub fn to_value(v: impl Serialize) -> CliResult<Value> {
    serde_json::to_value(v).map_err(|e| CliError::Io(e.to_string()))
}

/// Drops bulky per-sample arrays from a serialized value; they go to CSV.
pub fn without(mut v: Value, keys: &[&str]) -> Value {
    if let Value::Object(map) = &mut v {
        for k in keys {
            map.remove(*k);
        }
    }
    v
}

/// CSV table writer with a fixed header.
pub struct Table {
    out: csv::Writer<BufWriter<File>>,
}

impl Table {
    pub fn create(path: &Path, header: &[String]) -> CliResult<Self> {
        let file = File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut out = csv::Writer::from_writer(BufWriter::new(file));
        out.write_record(header)?;
        Ok(Table { out })
    }

    pub fn row(&mut self, fields: impl IntoIterator<Item = String>) -> CliResult<()> {
        self.out.write_record(fields.into_iter().collect::<Vec<_>>())?;
        Ok(())
    }

    pub fn finish(mut self) -> CliResult<()> {
        self.out.flush()?;
        Ok(())
    }
}

pub fn numbered(prefix: &str, count: usize) -> Vec<String> {
    (1..=count).map(|i| format!("{prefix}{i}")).collect()
}

pub fn fmt_f(v: f64) -> String {
    format!("{v:?}")
}
