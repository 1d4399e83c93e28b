//! CSV tables with `#` metadata lines, buffered in memory so that nothing
//! is written unless the whole command succeeds.

use std::path::{Path, PathBuf};

use crate::error::CliError;

/// Bumped whenever a column is added, removed or renamed.
pub const SCHEMA_VERSION: u32 = 1;

pub struct Table {
    pub name: &'static str,
    writer: csv::Writer<Vec<u8>>,
    pub rows: usize,
}

impl Table {
    pub fn new(name: &'static str, header: &[&str]) -> Self {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(header).expect("writing to memory");
        Self { name, writer, rows: 0 }
    }

    pub fn row<I, S>(&mut self, fields: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields).expect("writing to memory");
        self.rows += 1;
    }

    fn render(self, config_sha256: &str) -> Vec<u8> {
        let mut out = format!(
            "# edgesched {} schema {SCHEMA_VERSION}\n# config_sha256 {config_sha256}\n",
            env!("CARGO_PKG_VERSION")
        )
        .into_bytes();
        out.extend(self.writer.into_inner().expect("writing to memory"));
        out
    }
}

/// Writes every table into `dir`, returning the paths.
pub fn write_all(dir: &Path, tables: Vec<Table>, config_sha256: &str) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Other(format!("cannot create {}: {e}", dir.display())))?;
    let mut paths = Vec::new();
    for t in tables {
        let path = dir.join(t.name);
        std::fs::write(&path, t.render(config_sha256))
            .map_err(|e| CliError::Other(format!("cannot write {}: {e}", path.display())))?;
        paths.push(path);
    }
    Ok(paths)
}

/// Shortest representation that reads back to the same `f64`, switching to
/// exponent form for very small or large magnitudes.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}
