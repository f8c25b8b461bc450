//! Atomic CSV and JSON writers.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::CliError;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Shortest decimal that parses back to the same `f64`.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

/// Output directory; created on first use.
#[derive(Clone, Debug)]
pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(io_err(root))?;
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Write through a temporary file in the same directory, then rename.
    pub fn write_with<F>(&self, name: &str, fill: F) -> Result<PathBuf, CliError>
    where
        F: FnOnce(&mut dyn Write) -> std::io::Result<()>,
    {
        let target = self.path(name);
        let tmp = tempfile::NamedTempFile::new_in(&self.root).map_err(io_err(&self.root))?;
        {
            let mut w = BufWriter::new(tmp.as_file());
            fill(&mut w).map_err(io_err(&target))?;
            w.flush().map_err(io_err(&target))?;
        }
        tmp.persist(&target).map_err(|e| CliError::Io {
            path: target.display().to_string(),
            source: e.error,
        })?;
        Ok(target)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        self.write_with(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w)
        })
    }

    pub fn write_table(
        &self,
        name: &str,
        header: &[String],
        rows: &[Vec<f64>],
    ) -> Result<PathBuf, CliError> {
        self.write_with(name, |w| {
            let mut out = csv::Writer::from_writer(w);
            out.write_record(header)?;
            for row in rows {
                out.write_record(row.iter().map(|x| num(*x)))?;
            }
            out.flush()
        })
    }
}
