//! JSON and CSV writers.
//!
//! CSV files start with two comment lines, `# config <json>` and
//! `# seed <n>`, followed by a header row. Floats are written with 9
//! significant digits.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::{CliError, SCHEMA_VERSION};

/// Shortest decimal form of `x` rounded to 9 significant digits.
pub fn fmt_float(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.8e}").parse().expect("formatted float parses");
    if rounded == 0.0 || (1e-4..1e15).contains(&rounded.abs()) {
        format!("{rounded}")
    } else {
        format!("{rounded:e}")
    }
}

/// The resolved configuration as embedded in output files. The output
/// directory is left out so that a run replayed elsewhere gives identical
/// bytes.
pub fn config_json(config: &RunConfig) -> Value {
    let mut table = config.to_table();
    table.remove("output");
    serde_json::to_value(table).expect("config tables convert to JSON")
}

pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(config: &RunConfig, header: &[&str]) -> Self {
        let mut text = String::new();
        writeln!(text, "# config {}", config_json(config)).unwrap();
        writeln!(text, "# seed {}", config.seed).unwrap();
        writeln!(text, "{}", header.join(",")).unwrap();
        Csv { text }
    }

    pub fn row(&mut self, cells: &[Cell]) {
        let line: Vec<String> = cells.iter().map(Cell::render).collect();
        writeln!(self.text, "{}", line.join(",")).unwrap();
    }
}

pub enum Cell {
    F(f64),
    U(u64),
    S(String),
    Missing,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::F(x) => fmt_float(*x),
            Cell::U(x) => x.to_string(),
            Cell::S(s) => s.clone(),
            Cell::Missing => String::new(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::F(x)
    }
}

impl From<u64> for Cell {
    fn from(x: u64) -> Self {
        Cell::U(x)
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Cell::Missing, Cell::F)
    }
}

/// Collects output files and writes them into the configured directory.
pub struct Writer<'a> {
    config: &'a RunConfig,
    files: Vec<PathBuf>,
}

impl<'a> Writer<'a> {
    pub fn new(config: &'a RunConfig) -> Result<Self, CliError> {
        let dir = &config.output_dir;
        fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.clone(), source })?;
        Ok(Writer { config, files: Vec::new() })
    }

    fn path(&self, ext: &str) -> PathBuf {
        self.config.output_dir.join(format!("{}.{ext}", self.config.experiment.name()))
    }

    fn write(&mut self, path: PathBuf, text: &str) -> Result<(), CliError> {
        fs::write(&path, text).map_err(|source| CliError::Io { path: path.clone(), source })?;
        self.files.push(path);
        Ok(())
    }

    pub fn json(&mut self, result: &impl Serialize) -> Result<(), CliError> {
        let doc = json!({
            "schema_version": SCHEMA_VERSION,
            "experiment": self.config.experiment.name(),
            "seed": self.config.seed,
            "config": config_json(self.config),
            "result": result,
        });
        let mut text = serde_json::to_string_pretty(&doc).expect("results serialize");
        text.push('\n');
        self.write(self.path("json"), &text)
    }

    pub fn csv(&mut self, csv: Csv) -> Result<(), CliError> {
        self.write(self.path("csv"), &csv.text)
    }

    pub fn finish(self) -> Vec<PathBuf> {
        self.files
    }
}

pub fn read_to_string(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}
