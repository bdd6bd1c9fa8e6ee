use crate::commands::CliError;
use serde::Serialize;
use std::fs;
use std::path::{Path, PathBuf};

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

/// CSV table with a fixed header; floats use the shortest round-trip form.
pub struct Table {
    path: PathBuf,
    w: csv::Writer<fs::File>,
}

impl Table {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self, CliError> {
        let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        w.write_record(header).map_err(|e| CliError::Runtime(e.to_string()))?;
        Ok(Table { path: path.into(), w })
    }

    pub fn row<I: IntoIterator<Item = String>>(&mut self, fields: I) -> Result<(), CliError> {
        self.w.write_record(fields).map_err(|e| CliError::Runtime(format!("{}: {e}", self.path.display())))
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.w.flush().map_err(|e| CliError::Runtime(format!("{}: {e}", self.path.display())))
    }
}

pub fn num(x: f64) -> String {
    format!("{x:e}")
}

pub fn flag(b: bool) -> String {
    b.to_string()
}
