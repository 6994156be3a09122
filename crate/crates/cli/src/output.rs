//! Output files. Everything is written to a temporary file in the target
//! directory and renamed into place, so a failed command leaves nothing
//! behind.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use air_core::Matrix;
use serde::Serialize;

use crate::error::{CliError, CliResult};

pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir)
        .map_err(|e| CliError::Input(format!("cannot create {}: {e}", dir.display())))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)
        .map_err(|e| CliError::Input(format!("cannot write in {}: {e}", dir.display())))?;
    tmp.write_all(bytes)
        .and_then(|_| tmp.as_file().sync_all())
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
    tmp.persist(path)
        .map_err(|e| CliError::Input(format!("cannot write {}: {}", path.display(), e.error)))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_vec_pretty(value).map_err(CliError::internal)?;
    text.push(b'\n');
    write_atomic(path, &text)
}

pub fn write_npy(path: &Path, m: &Matrix) -> CliResult<()> {
    write_atomic(path, &air_core::npy::to_bytes(m))
}

/// A CSV table built in memory. Floats go through `Display`, which prints
/// the shortest representation that parses back to the same value.
pub struct Table {
    writer: csv::Writer<Vec<u8>>,
}

impl Table {
    pub fn new(header: &[&str]) -> CliResult<Self> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(header).map_err(CliError::internal)?;
        Ok(Self { writer })
    }

    pub fn row<I, S>(&mut self, fields: I) -> CliResult<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields).map_err(CliError::internal)
    }

    pub fn save(self, path: &Path) -> CliResult<()> {
        let bytes = self.writer.into_inner().map_err(CliError::internal)?;
        write_atomic(path, &bytes)
    }
}
