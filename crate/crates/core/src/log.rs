//! Append-only decision log: one JSON record per line,
//! `{"seq":N,"checksum":"<16 hex>","decision":{...}}`. The checksum is the
//! first 8 bytes of SHA-256 over the decision JSON exactly as written. On
//! open, an incomplete or corrupt final line is treated as a torn write and
//! cut off; corruption anywhere else is an error.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::pipeline::ModerationDecision;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("decision log storage failure: {0}")]
    Storage(#[from] std::io::Error),
    #[error("decision log corrupt at line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
}

pub fn checksum(decision_json: &str) -> String {
    hex::encode(&Sha256::digest(decision_json.as_bytes())[..8])
}

pub fn encode_line(seq: u64, decision: &ModerationDecision) -> String {
    let json = serde_json::to_string(decision).expect("decision serializes");
    format!(
        "{{\"seq\":{seq},\"checksum\":\"{}\",\"decision\":{json}}}\n",
        checksum(&json)
    )
}

/// Parses one line (without its newline).
pub fn decode_line(line: &str) -> Result<(u64, ModerationDecision), String> {
    let rest = line.strip_prefix("{\"seq\":").ok_or("missing seq")?;
    let (seq, rest) = rest.split_once(',').ok_or("missing checksum")?;
    let seq: u64 = seq.parse().map_err(|_| "bad seq")?;
    let rest = rest
        .strip_prefix("\"checksum\":\"")
        .ok_or("missing checksum")?;
    let (sum, rest) = rest.split_once('"').ok_or("unterminated checksum")?;
    let json = rest
        .strip_prefix(",\"decision\":")
        .and_then(|r| r.strip_suffix('}'))
        .ok_or("missing decision")?;
    if checksum(json) != sum {
        return Err("checksum mismatch".into());
    }
    let decision = serde_json::from_str(json).map_err(|e| e.to_string())?;
    Ok((seq, decision))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Recovery {
    pub records: usize,
    /// Bytes cut from the end of the file.
    pub discarded_bytes: u64,
}

#[derive(Debug, Default)]
pub struct DecisionLog {
    entries: Vec<ModerationDecision>,
    by_id: HashMap<String, Vec<usize>>,
    file: Option<File>,
    path: Option<PathBuf>,
    len: u64,
    durable: bool,
}

impl DecisionLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens or creates a file-backed log, discarding a torn tail.
    pub fn open(path: impl AsRef<Path>) -> Result<(Self, Recovery), LogError> {
        let path = path.as_ref();
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(path)?;
        let mut raw = Vec::new();
        file.read_to_end(&mut raw)?;
        let mut log = Self::in_memory();
        let mut good = 0usize;
        let mut line_no = 0;
        let mut pos = 0;
        while pos < raw.len() {
            line_no += 1;
            let Some(nl) = raw[pos..].iter().position(|b| *b == b'\n') else {
                break;
            };
            let end = pos + nl;
            let parsed = std::str::from_utf8(&raw[pos..end])
                .map_err(|e| e.to_string())
                .and_then(decode_line)
                .and_then(|(seq, d)| {
                    if seq as usize == log.entries.len() {
                        Ok(d)
                    } else {
                        Err(format!("expected seq {}, found {seq}", log.entries.len()))
                    }
                });
            match parsed {
                Ok(d) => {
                    log.push(d);
                    pos = end + 1;
                    good = pos;
                }
                Err(reason) if end + 1 >= raw.len() => {
                    log::warn!("discarding torn final record: {reason}");
                    break;
                }
                Err(reason) => {
                    return Err(LogError::Corrupt {
                        line: line_no,
                        reason,
                    })
                }
            }
        }
        let discarded = (raw.len() - good) as u64;
        if discarded > 0 {
            file.set_len(good as u64)?;
            file.seek(SeekFrom::End(0))?;
        }
        log.len = good as u64;
        log.file = Some(file);
        log.path = Some(path.to_owned());
        let records = log.entries.len();
        Ok((
            log,
            Recovery {
                records,
                discarded_bytes: discarded,
            },
        ))
    }

    /// fsync after every append.
    pub fn durable(mut self, on: bool) -> Self {
        self.durable = on;
        self
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    fn push(&mut self, d: ModerationDecision) {
        self.by_id
            .entry(d.content_id.clone())
            .or_default()
            .push(self.entries.len());
        self.entries.push(d);
    }

    /// Appends one decision and returns its sequence number. On a storage
    /// error the file is cut back to its previous length and nothing is
    /// recorded.
    pub fn append(&mut self, decision: ModerationDecision) -> Result<u64, LogError> {
        let seq = self.entries.len() as u64;
        let line = encode_line(seq, &decision);
        if let Some(f) = self.file.as_mut() {
            let written = f.write_all(line.as_bytes()).and_then(|_| {
                if self.durable {
                    f.sync_data()
                } else {
                    Ok(())
                }
            });
            if let Err(e) = written {
                let _ = f.set_len(self.len);
                return Err(LogError::Storage(e));
            }
        }
        self.len += line.len() as u64;
        self.push(decision);
        Ok(seq)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ModerationDecision] {
        &self.entries
    }

    pub fn latest(&self, content_id: &str) -> Option<&ModerationDecision> {
        self.by_id
            .get(content_id)
            .and_then(|v| v.last())
            .map(|&i| &self.entries[i])
    }

    pub fn history(&self, content_id: &str) -> Vec<&ModerationDecision> {
        self.by_id
            .get(content_id)
            .map(|v| v.iter().map(|&i| &self.entries[i]).collect())
            .unwrap_or_default()
    }

    /// Latest decision per content id, in order of first appearance.
    pub fn latest_per_item(&self) -> Vec<&ModerationDecision> {
        let mut seen = std::collections::HashSet::new();
        self.entries
            .iter()
            .filter(|d| seen.insert(d.content_id.as_str()))
            .map(|d| self.latest(&d.content_id).expect("indexed"))
            .collect()
    }

    /// The exact bytes a file-backed log with these entries holds.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for (i, d) in self.entries.iter().enumerate() {
            out.extend_from_slice(encode_line(i as u64, d).as_bytes());
        }
        out
    }
}

/// Reads a log file without modifying it; a torn tail is skipped.
pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<ModerationDecision>, LogError> {
    let text = std::fs::read(path)?;
    let mut out = Vec::new();
    let lines: Vec<&[u8]> = text.split(|b| *b == b'\n').collect();
    let complete = lines.len() - 1;
    for (i, l) in lines[..complete].iter().enumerate() {
        let parsed = std::str::from_utf8(l)
            .map_err(|e| e.to_string())
            .and_then(decode_line);
        match parsed {
            Ok((_, d)) => out.push(d),
            Err(_) if i + 1 == complete => break,
            Err(reason) => {
                return Err(LogError::Corrupt {
                    line: i + 1,
                    reason,
                })
            }
        }
    }
    Ok(out)
}
