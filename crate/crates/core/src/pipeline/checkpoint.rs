//! Append-only jsonl stage files keyed by posting id.

use std::collections::BTreeSet;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::PipelineError;
use crate::classify::{CondensedSummary, RelevanceResult, SpecAlignment};
use crate::corpus::Posting;

/// A record that belongs to exactly one posting.
pub trait Keyed {
    fn key(&self) -> &str;
}

impl Keyed for Posting {
    fn key(&self) -> &str {
        &self.id
    }
}

impl Keyed for RelevanceResult {
    fn key(&self) -> &str {
        &self.posting_id
    }
}

impl Keyed for SpecAlignment {
    fn key(&self) -> &str {
        &self.posting_id
    }
}

impl Keyed for CondensedSummary {
    fn key(&self) -> &str {
        &self.posting_id
    }
}

/// Read a stage file. A missing file reads as empty. A torn final line
/// (no trailing newline) is cut off the file before anything else reads it.
pub fn load<T>(path: &Path, stage: &str) -> Result<Vec<T>, PipelineError>
where
    T: DeserializeOwned + Keyed,
{
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(PipelineError::io(path, e)),
    };
    let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    if complete < bytes.len() {
        log::warn!("{}: dropping torn final line ({} bytes)", path.display(), bytes.len() - complete);
        let f = OpenOptions::new().write(true).open(path).map_err(|e| PipelineError::io(path, e))?;
        f.set_len(complete as u64).map_err(|e| PipelineError::io(path, e))?;
    }
    let text = std::str::from_utf8(&bytes[..complete])
        .map_err(|e| PipelineError::validation(stage, format!("{}: not utf-8: {e}", path.display())))?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(line)
            .map_err(|e| PipelineError::validation(stage, format!("{} line {}: {e}", path.display(), i + 1)))?;
        if !seen.insert(record.key().to_string()) {
            return Err(PipelineError::validation(
                stage,
                format!("{} line {}: posting {} appears twice", path.display(), i + 1, record.key()),
            ));
        }
        out.push(record);
    }
    Ok(out)
}

/// Every id in `records` must be in `upstream`; the smallest offender is
/// reported.
pub fn check_subset<T: Keyed>(
    stage: &str,
    records: &[T],
    upstream_stage: &str,
    upstream: &BTreeSet<&str>,
) -> Result<(), PipelineError> {
    let offender = records.iter().map(Keyed::key).filter(|k| !upstream.contains(k)).min();
    match offender {
        Some(id) => Err(PipelineError::Integrity {
            stage: stage.to_string(),
            upstream: upstream_stage.to_string(),
            posting_id: id.to_string(),
        }),
        None => Ok(()),
    }
}

/// Single writer appending whole lines.
pub struct Appender {
    path: PathBuf,
    file: File,
}

impl Appender {
    pub fn open(path: &Path) -> Result<Self, PipelineError> {
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| PipelineError::io(path, e))?;
        Ok(Self { path: path.to_path_buf(), file })
    }

    pub fn append<T: Serialize>(&mut self, record: &T) -> Result<(), PipelineError> {
        let mut line = serde_json::to_vec(record).expect("record serializes");
        line.push(b'\n');
        // One write per line keeps partial writes confined to the last line.
        self.file.write_all(&line).map_err(|e| PipelineError::io(&self.path, e))
    }

    pub fn sync(&mut self) -> Result<(), PipelineError> {
        self.file.flush().map_err(|e| PipelineError::io(&self.path, e))?;
        self.file.sync_data().map_err(|e| PipelineError::io(&self.path, e))
    }
}

/// Replace `path` with `contents` via a sibling temp file and rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_os_string();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).map_err(|e| PipelineError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| PipelineError::io(path, e))
}

/// Serialize records one per line and write the file atomically.
pub fn write_all<T: Serialize>(path: &Path, records: &[T]) -> Result<(), PipelineError> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).expect("record serializes");
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

/// Read a plain jsonl file with no key discipline.
pub fn read_lines<T: DeserializeOwned>(path: &Path, stage: &str) -> Result<Vec<T>, PipelineError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(PipelineError::io(path, e)),
    };
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| PipelineError::validation(stage, format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}
