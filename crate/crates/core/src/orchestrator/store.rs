//! Append-only JSONL record file with resume support.

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{Decision, EndpointSnapshot};
use crate::key::ConditionKey;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    /// Every attempt produced output without a decision line.
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub key: ConditionKey,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<Decision>,
    pub explanation: String,
    pub legality_acknowledged: bool,
    pub latency_s: f64,
    pub word_count: usize,
    pub attempts: u32,
    pub raw: String,
    pub endpoint: EndpointSnapshot,
    pub timestamp: String,
}

impl RunRecord {
    pub fn is_ok(&self) -> bool {
        self.status == RunStatus::Ok
    }
}

pub struct RecordStore {
    path: PathBuf,
    file: File,
    seen: HashSet<String>,
    records: Vec<RunRecord>,
}

impl RecordStore {
    /// Opens (or creates) the record file and indexes existing slots. A
    /// trailing partial line left by an interrupted write is dropped.
    pub fn open(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let (records, truncate_to) = read_complete(path)?;
        if let Some(len) = truncate_to {
            // the next append must start on a fresh line
            let f = OpenOptions::new().write(true).open(path).map_err(|e| Error::io(path, e))?;
            f.set_len(len).map_err(|e| Error::io(path, e))?;
        }
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if !seen.insert(r.key.slot_id()) {
                return Err(Error::Validation(format!(
                    "{} holds duplicate records for {}",
                    path.display(),
                    r.key.slot_id()
                )));
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(RecordStore {
            path: path.to_path_buf(),
            file,
            seen,
            records,
        })
    }

    pub fn contains(&self, key: &ConditionKey) -> bool {
        self.seen.contains(&key.slot_id())
    }

    /// Appends records in the given order; keys already present are skipped.
    pub fn append(&mut self, batch: Vec<RunRecord>) -> Result<usize> {
        let mut buf = String::new();
        let mut fresh = Vec::with_capacity(batch.len());
        for record in batch {
            if self.seen.insert(record.key.slot_id()) {
                buf.push_str(&serde_json::to_string(&record)?);
                buf.push('\n');
                fresh.push(record);
            }
        }
        if buf.is_empty() {
            return Ok(0);
        }
        self.file
            .write_all(buf.as_bytes())
            .and_then(|()| self.file.flush())
            .map_err(|e| Error::io(&self.path, e))?;
        let n = fresh.len();
        self.records.extend(fresh);
        Ok(n)
    }

    pub fn records(&self) -> &[RunRecord] {
        &self.records
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Reads all complete records; a missing file yields an empty list and an
/// incomplete trailing line is ignored.
pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    Ok(read_complete(path)?.0)
}

/// Records plus the byte length of the complete-line prefix of the file.
fn read_complete(path: &Path) -> Result<(Vec<RunRecord>, Option<u64>)> {
    let text = match std::fs::read_to_string(path) {
        Ok(text) => text,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((Vec::new(), None)),
        Err(e) => return Err(Error::io(path, e)),
    };
    let complete = text.rfind('\n').map_or("", |end| &text[..=end]);
    let truncate_to = if complete.len() < text.len() {
        log::warn!(
            "{}: ignoring incomplete trailing record ({} bytes)",
            path.display(),
            text.len() - complete.len()
        );
        Some(complete.len() as u64)
    } else {
        None
    };
    let records = complete
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| {
                Error::Validation(format!("{} line {}: {e}", path.display(), i + 1))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((records, truncate_to))
}
