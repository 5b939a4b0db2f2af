// SPDX-License-Identifier: Apache-2.0

//! `hypertests.jsonl`: one JSON object per confirmed leak.

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::Hash64;
use crate::model::Hypertest;
use crate::oracle::{report_key, ReportKey};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct HypertestRecord {
    pub public_hex: String,
    pub secret_a_hex: String,
    pub secret_b_hex: String,
    pub output_hash_a: Hash64,
    pub output_hash_b: Hash64,
    pub exec_index: u64,
    pub wall_time_ms: u64,
}

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error("line {line}: bad hex in {field}: {source}")]
    Hex {
        line: usize,
        field: &'static str,
        source: hex::FromHexError,
    },
}

impl HypertestRecord {
    pub fn new(h: &Hypertest, exec_index: u64, wall_time_ms: u64) -> Self {
        Self {
            public_hex: hex::encode(&h.public),
            secret_a_hex: hex::encode(&h.secret_a),
            secret_b_hex: hex::encode(&h.secret_b),
            output_hash_a: h.output_hash_a,
            output_hash_b: h.output_hash_b,
            exec_index,
            wall_time_ms,
        }
    }

    pub fn hypertest(&self, line: usize) -> Result<Hypertest, RecordError> {
        let field = |field: &'static str, s: &str| {
            hex::decode(s).map_err(|source| RecordError::Hex {
                line,
                field,
                source,
            })
        };
        Ok(Hypertest {
            public: field("publicHex", &self.public_hex)?,
            secret_a: field("secretAHex", &self.secret_a_hex)?,
            secret_b: field("secretBHex", &self.secret_b_hex)?,
            output_hash_a: self.output_hash_a,
            output_hash_b: self.output_hash_b,
        })
    }
}

/// Appends deduplicated records to a file and keeps them in memory. Write
/// failures are logged; the in-memory copy is always kept.
#[derive(Debug, Default)]
pub struct ReportSink {
    path: Option<PathBuf>,
    file: Option<File>,
    seen: HashSet<ReportKey>,
    records: Vec<HypertestRecord>,
    write_failures: u64,
}

impl ReportSink {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Creates (truncating) the report file.
    pub fn create(path: impl AsRef<Path>) -> io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(&path)?;
        Ok(Self {
            path: Some(path),
            file: Some(file),
            ..Default::default()
        })
    }

    /// Returns `false` if an equivalent hypertest was already emitted.
    pub fn emit(&mut self, h: &Hypertest, exec_index: u64, wall_time_ms: u64) -> bool {
        if !h.is_well_formed() {
            warn!("refusing to report malformed hypertest {h:?}");
            return false;
        }
        if !self.seen.insert(report_key(h)) {
            return false;
        }
        let record = HypertestRecord::new(h, exec_index, wall_time_ms);
        if let Some(file) = self.file.as_mut() {
            let mut line = serde_json::to_vec(&record).expect("record serializes");
            line.push(b'\n');
            if let Err(e) = file.write_all(&line).and_then(|_| file.flush()) {
                self.write_failures += 1;
                warn!(
                    "writing hypertest to {} failed: {e}",
                    self.path.as_deref().unwrap_or(Path::new("?")).display()
                );
            }
        }
        self.records.push(record);
        true
    }

    pub fn records(&self) -> &[HypertestRecord] {
        &self.records
    }

    pub fn write_failures(&self) -> u64 {
        self.write_failures
    }
}

/// Parses a report file; each non-blank line yields a record or an error.
pub fn read_report(
    path: impl AsRef<Path>,
) -> io::Result<Vec<Result<HypertestRecord, RecordError>>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|source| RecordError::Json {
                line: i + 1,
                source,
            }),
        );
    }
    Ok(out)
}
