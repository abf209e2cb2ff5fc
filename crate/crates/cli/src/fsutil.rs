use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::CliError;

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, write: impl FnOnce(&mut dyn Write) -> Result<(), CliError>) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        write(&mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| CliError::Data(format!("cannot write {}: {}", path.display(), e.error)))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

/// Opens an input file; a missing file becomes a data error naming it.
pub fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))
}

/// Opens an artifact produced by an earlier stage.
pub fn open_artifact(path: &Path, producer: &str) -> Result<BufReader<File>, CliError> {
    if !path.exists() {
        return Err(CliError::Usage(format!("missing {}; run `aoa {producer}` first", path.display())));
    }
    open(path)
}

pub fn read_json<T: DeserializeOwned>(path: &Path, producer: &str) -> Result<T, CliError> {
    let r = open_artifact(path, producer)?;
    serde_json::from_reader(r).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}
