use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

/// A problem with one input record.
#[derive(Debug, Clone)]
pub struct RecordError {
    pub path: PathBuf,
    pub line: usize,
    pub message: String,
}

impl fmt::Display for RecordError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.path.display(), self.line, self.message)
    }
}

/// A parsed record with its 1-based line number.
pub struct Line<T> {
    pub line: usize,
    pub value: T,
}

/// Reads a JSONL file, keeping going past bad lines. Blank lines are skipped.
pub fn read_lines<T: DeserializeOwned>(path: &Path) -> Result<(Vec<Line<T>>, Vec<RecordError>)> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut ok = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(value) => ok.push(Line { line: i + 1, value }),
            Err(e) => errors.push(RecordError {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            }),
        }
    }
    Ok((ok, errors))
}

/// Reads a JSONL file where any bad line is fatal.
pub fn read_all<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let (ok, errors) = read_lines(path)?;
    if let Some(e) = errors.first() {
        bail!("{e}");
    }
    Ok(ok.into_iter().map(|l| l.value).collect())
}

pub fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn quarantine_path(out: &Path) -> PathBuf {
    let ext = out.extension().and_then(|e| e.to_str()).unwrap_or("jsonl");
    out.with_extension(format!("quarantine.{ext}"))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    w.write_all(bytes)?;
    w.flush()?;
    Ok(())
}

pub fn to_jsonl<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut buf, row)?;
        buf.push(b'\n');
    }
    Ok(buf)
}

pub fn to_pretty<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut buf = serde_json::to_vec_pretty(value)?;
    buf.push(b'\n');
    Ok(buf)
}

/// Where a run's results went.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    Quarantined,
}

/// Writes `bytes` to `out`, or to the quarantine path when any record
/// failed, and drops a `<out>.meta.json` sidecar next to it. Diagnostics go
/// to stderr.
pub fn commit(out: &Path, bytes: &[u8], errors: &[RecordError], records: usize, config: Value) -> Result<Status> {
    for e in errors {
        eprintln!("{e}");
    }
    let (target, status) = if errors.is_empty() {
        (out.to_path_buf(), Status::Ok)
    } else {
        (quarantine_path(out), Status::Quarantined)
    };
    write_bytes(&target, bytes)?;
    let meta = serde_json::json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "status": if status == Status::Ok { "ok" } else { "quarantined" },
        "output": target,
        "records": records,
        "errors": errors.len(),
        "config": config,
    });
    write_bytes(&with_suffix(out, ".meta.json"), &to_pretty(&meta)?)?;
    if status == Status::Quarantined {
        eprintln!(
            "{} bad record(s); partial output written to {}",
            errors.len(),
            target.display()
        );
    }
    Ok(status)
}

/// Fails early on unreadable inputs or an output directory that does not exist.
pub fn check_paths(inputs: &[&Path], output: Option<&Path>) -> Result<()> {
    for p in inputs {
        if !p.is_file() {
            bail!("input {} is not a readable file", p.display());
        }
    }
    if let Some(out) = output {
        let parent = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        if !parent.is_dir() {
            bail!("output directory {} does not exist", parent.display());
        }
    }
    Ok(())
}
