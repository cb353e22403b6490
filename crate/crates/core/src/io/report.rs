//! CSV report tables. UTF-8, LF line endings, header row first.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

pub fn csv_string<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    for row in rows {
        writer.serialize(row)?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::InvalidParameter(format!("csv flush failed: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_csv<T: Serialize>(rows: &[T], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = csv_string(rows)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
