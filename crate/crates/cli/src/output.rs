//! Atomic artifact writes.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use tempfile::NamedTempFile;

use crate::inputs::{CliError, CliResult};

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Output(format!("{}: {e}", path.display()))
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(dir: &Path, name: &str, fill: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let target = dir.join(name);
    let mut tmp = NamedTempFile::new_in(dir).map_err(|e| io_err(dir, e))?;
    {
        let mut w = std::io::BufWriter::new(tmp.as_file_mut());
        fill(&mut w).map_err(|e| io_err(&target, e))?;
        w.flush().map_err(|e| io_err(&target, e))?;
    }
    tmp.persist(&target).map_err(|e| io_err(&target, e.error))?;
    Ok(())
}

pub fn json_string<T: Serialize>(value: &T) -> CliResult<String> {
    serde_json::to_string_pretty(value).map_err(|e| CliError::Output(e.to_string()))
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> CliResult<()> {
    let text = json_string(value)?;
    write_atomic(dir, name, |w| writeln!(w, "{text}"))
}

/// Writes a line to stdout. A closed pipe ends the process quietly.
pub fn print_line(text: &str) -> CliResult<()> {
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match writeln!(lock, "{text}").and_then(|_| lock.flush()) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => std::process::exit(0),
        Err(e) => Err(CliError::Output(format!("stdout: {e}"))),
    }
}

/// Prints to stdout, or writes `name` under `out` when given.
pub fn emit_json<T: Serialize>(out: Option<&Path>, name: &str, value: &T) -> CliResult<()> {
    match out {
        Some(dir) => write_json(dir, name, value),
        None => {
            print_line(&json_string(value)?)
        }
    }
}
