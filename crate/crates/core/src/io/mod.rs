//! File formats: detection CSV, configuration, JSON reports and SVG output.

pub mod config;
pub mod detections;
pub mod report;
pub mod svg;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never observe a partial file.
pub(crate) fn write_atomic(path: &Path, write: impl FnOnce(&mut BufWriter<&File>) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::file(dir, e))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        write(&mut w)?;
        w.flush().map_err(|e| Error::file(path, e))?;
    }
    tmp.persist(path).map_err(|e| Error::file(path, e.error))?;
    Ok(())
}

/// Atomically writes a string to `path`.
pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    write_atomic(path, |w| w.write_all(text.as_bytes()).map_err(|e| Error::file(path, e)))
}
