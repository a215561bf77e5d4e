//! CSV and JSON artifacts. Every CSV starts with the config echo as `#`
//! comment lines, followed by a header row.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::CliResult;

pub struct OutputDir {
    root: PathBuf,
    echo: String,
}

impl OutputDir {
    /// Creates the directory. Call only after the config has been validated.
    pub fn create(root: &Path, echo: String) -> CliResult<Self> {
        std::fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            echo,
        })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn write_csv(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> CliResult<String> {
        let mut out = BufWriter::new(File::create(self.root.join(name))?);
        for line in self.echo.lines() {
            if line.is_empty() {
                writeln!(out, "#")?;
            } else {
                writeln!(out, "# {line}")?;
            }
        }
        let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        wtr.write_record(header)?;
        for row in rows {
            wtr.write_record(row)?;
        }
        wtr.flush()?;
        Ok(name.to_string())
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<String> {
        let mut out = BufWriter::new(File::create(self.root.join(name))?);
        serde_json::to_writer_pretty(&mut out, value).map_err(|e| crate::error::CliError::Output(e.to_string()))?;
        writeln!(out)?;
        out.flush()?;
        Ok(name.to_string())
    }
}

/// Float formatting shared by all CSVs: shortest round-trip scientific form.
pub fn num(x: f64) -> String {
    format!("{x:e}")
}

pub fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Outcome of a campaign, also written as `summary.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Report {
    pub command: String,
    pub passed: bool,
    pub failures: Vec<String>,
    /// warnings that do not affect the exit code
    pub notes: Vec<String>,
    pub files: Vec<String>,
}

impl Report {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            passed: true,
            ..Self::default()
        }
    }

    pub fn fail(&mut self, msg: impl Into<String>) {
        self.passed = false;
        self.failures.push(msg.into());
    }

    pub fn note(&mut self, msg: impl Into<String>) {
        self.notes.push(msg.into());
    }

    /// Writes `summary.json` and records it in the file list.
    pub fn finish(mut self, out: &OutputDir) -> CliResult<Self> {
        self.files.push("summary.json".into());
        out.write_json("summary.json", &self)?;
        Ok(self)
    }
}
