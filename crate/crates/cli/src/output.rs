//! Artifact writers shared by the subcommands.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

/// Run record sufficient to repeat a command.
pub fn manifest<T: Serialize>(
    command: &str,
    seed: u64,
    options: &T,
    outputs: &[PathBuf],
) -> Result<Value> {
    Ok(json!({
        "tool": "tvcm",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "seed": seed,
        "options": options,
        "outputs": outputs
            .iter()
            .map(|p| p.file_name().map_or_else(String::new, |f| f.to_string_lossy().into_owned()))
            .collect::<Vec<_>>(),
    }))
}

/// Rows of `coefficient,t,estimate,lower,upper`; missing bounds stay empty.
pub fn curves_csv(rows: &[(usize, f64, f64, Option<(f64, f64)>)]) -> String {
    let mut out = String::from("coefficient,t,estimate,lower,upper\n");
    for (r, t, est, band) in rows {
        match band {
            Some((lo, hi)) => writeln!(out, "{r},{t},{est},{lo},{hi}"),
            None => writeln!(out, "{r},{t},{est},,"),
        }
        .expect("writing to a String cannot fail");
    }
    out
}

/// JSON to stdout, and to `out` when given.
pub fn emit_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    print_stdout(&text)?;
    if let Some(path) = out {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            ensure_dir(parent)?;
        }
        write_json(path, value)?;
    }
    Ok(())
}

/// Write to stdout; a closed pipe is not an error.
pub fn print_stdout(text: &str) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}
