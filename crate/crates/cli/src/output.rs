//! Output plumbing: stderr logging gated by STABFN_LOG, the shared JSON
//! summary envelope, CSV assembly, and atomic file writes.

use serde::Serialize;
use serde_json::{json, Value};

use crate::config::ResolvedConfig;
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub enum LogLevel {
    Off = 0,
    Error = 1,
    Warn = 2,
    Info = 3,
    Debug = 4,
}

#[derive(Debug, Clone, Copy)]
pub struct Logger {
    level: LogLevel,
}

impl Logger {
    /// Level comes from STABFN_LOG (off, error, warn, info, debug);
    /// unrecognized values fall back to warn.
    pub fn from_env() -> Self {
        let level = match std::env::var("STABFN_LOG").as_deref() {
            Ok("off") => LogLevel::Off,
            Ok("error") => LogLevel::Error,
            Ok("info") => LogLevel::Info,
            Ok("debug") => LogLevel::Debug,
            _ => LogLevel::Warn,
        };
        Logger { level }
    }

    pub fn info(&self, msg: &str) {
        if self.level >= LogLevel::Info {
            eprintln!("stabfn[info]: {msg}");
        }
    }

    pub fn warn(&self, msg: &str) {
        if self.level >= LogLevel::Warn {
            eprintln!("stabfn[warn]: {msg}");
        }
    }

    pub fn debug(&self, msg: &str) {
        if self.level >= LogLevel::Debug {
            eprintln!("stabfn[debug]: {msg}");
        }
    }
}

/// One pass/fail check carried into the JSON summary.
#[derive(Debug, Clone, Serialize)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Assertion {
    pub fn check(name: &str, passed: bool, detail: String) -> Self {
        Assertion {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

/// CSV cell: formatted on construction so every writer agrees on the
/// shortest round-trip representation.
pub fn cell_f64(v: f64) -> String {
    format!("{v}")
}

pub fn cell_int(v: i64) -> String {
    format!("{v}")
}

#[derive(Debug, Clone)]
pub struct Csv {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Csv {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.header.join(","));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Everything one experiment run produces.
#[derive(Debug)]
pub struct ExperimentResult {
    pub assertions: Vec<Assertion>,
    pub payload: Value,
    pub csv: Csv,
}

impl ExperimentResult {
    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }
}

/// The stable summary envelope shared by every experiment.
pub fn summary_json(config: &ResolvedConfig, result: &ExperimentResult) -> Value {
    json!({
        "tool": "stabfn",
        "version": env!("CARGO_PKG_VERSION"),
        "experiment": config.experiment,
        "config": serde_json::to_value(config).expect("config serializes"),
        "assertions": serde_json::to_value(&result.assertions).expect("assertions serialize"),
        "passed": result.passed(),
        "payload": result.payload,
    })
}

/// Write bytes to a sibling temp file, then rename over the target, so a
/// crash never leaves a half-written artifact.
pub fn write_atomic(path: &str, bytes: &[u8]) -> Result<(), CliError> {
    let target = std::path::Path::new(path);
    if let Some(parent) = target.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::Config(format!("out: cannot create {parent:?}: {e}")))?;
        }
    }
    let mut tmp = target.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp_path = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp_path, bytes)
        .map_err(|e| CliError::Config(format!("out: cannot write {tmp_path:?}: {e}")))?;
    std::fs::rename(&tmp_path, target)
        .map_err(|e| CliError::Config(format!("out: cannot rename into {path}: {e}")))?;
    Ok(())
}

/// Least-squares constant of c0 + c1/x over a prefix of the series; the
/// running-fit column of the asymptotics CSVs.
pub fn running_c0(grid: &[f64], values: &[f64], upto: usize) -> Option<f64> {
    if upto == 0 {
        return None;
    }
    let n = upto + 1;
    let (mut s11, mut s12, mut s22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        let u = 1.0 / grid[i];
        s11 += 1.0;
        s12 += u;
        s22 += u * u;
        b1 += values[i];
        b2 += u * values[i];
    }
    let det = s11 * s22 - s12 * s12;
    if det.abs() < 1e-300 {
        return None;
    }
    Some((b1 * s22 - b2 * s12) / det)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_uses_shortest_round_trip_decimals() {
        assert_eq!(cell_f64(0.1), "0.1");
        assert_eq!(cell_f64(1.0 / 3.0), "0.3333333333333333");
        assert_eq!(cell_f64(2.0), "2");
        let back: f64 = cell_f64(0.1 + 0.2).parse().unwrap();
        assert_eq!(back, 0.1 + 0.2);
    }

    #[test]
    fn csv_text_shape() {
        let mut csv = Csv::new(&["a", "b"]);
        csv.push(vec![cell_int(1), cell_f64(0.5)]);
        assert_eq!(csv.to_text(), "a,b\n1,0.5\n");
    }

    #[test]
    fn running_fit_recovers_exact_series() {
        let grid = [10.0, 20.0, 40.0, 80.0];
        let vals: Vec<f64> = grid.iter().map(|&x| 5.0 + 2.0 / x).collect();
        let c0 = running_c0(&grid, &vals, 3).unwrap();
        assert!((c0 - 5.0).abs() < 1e-12);
        assert!(running_c0(&grid, &vals, 0).is_none());
    }

    #[test]
    fn atomic_write_round_trips() {
        let dir = std::env::temp_dir().join("stabfn-out-test");
        let path = dir.join("x.csv");
        let path_s = path.to_str().unwrap();
        write_atomic(path_s, b"a,b\n").unwrap();
        assert_eq!(std::fs::read(path_s).unwrap(), b"a,b\n");
        write_atomic(path_s, b"c\n").unwrap();
        assert_eq!(std::fs::read(path_s).unwrap(), b"c\n");
        std::fs::remove_dir_all(&dir).ok();
    }
}
