//! CSV tables with a header row.

use std::fs::File;
use std::path::{Path, PathBuf};

use crate::error::{CvfError, Result};

fn csv_err(path: &Path, e: csv::Error) -> CvfError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CvfError::io(path, io),
        other => CvfError::Malformed {
            path: path.to_path_buf(),
            detail: format!("{other:?}"),
        },
    }
}

/// Row-at-a-time writer that flushes after every row, so a crashed run
/// still leaves a readable log.
pub struct CsvLog {
    path: PathBuf,
    writer: csv::Writer<File>,
}

impl CsvLog {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self> {
        let file = File::create(path).map_err(|e| CvfError::io(path, e))?;
        let mut log = CsvLog {
            path: path.to_path_buf(),
            writer: csv::Writer::from_writer(file),
        };
        log.row(header)?;
        Ok(log)
    }

    pub fn row<S: AsRef<str>>(&mut self, fields: &[S]) -> Result<()> {
        self.writer
            .write_record(fields.iter().map(|f| f.as_ref()))
            .map_err(|e| csv_err(&self.path, e))?;
        self.writer.flush().map_err(|e| CvfError::io(&self.path, e))
    }
}

/// Header and rows of a CSV file, all as strings.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = reader
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(String::from)
        .collect();
    let rows = reader
        .records()
        .map(|r| r.map(|rec| rec.iter().map(String::from).collect()))
        .collect::<std::result::Result<Vec<Vec<String>>, _>>()
        .map_err(|e| csv_err(path, e))?;
    Ok((header, rows))
}
