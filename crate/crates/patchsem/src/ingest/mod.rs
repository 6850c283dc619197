//! Patch ingestion: unified-diff parsing, code tokenization, vocabulary
//! construction and fixed-length integer encoding of the three input
//! streams (code tokens, changed lines, commit message).

mod diff;
mod encode;
mod tokenize;
mod vocab;

pub use diff::{parse_unified_diff, DiffHunks};
pub use encode::{encode_patch, encode_record, EncodedPatch, SequenceLimits};
pub use tokenize::{normalize_line, tokenize_code};
pub use vocab::{build_vocab, Vocab, PAD_ID, UNK_ID};

use serde::Deserialize;
use std::fs;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed diff: no hunk marker and no +/- lines")]
    MalformedDiff,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("schema error at line {line}: {message}")]
    Schema { line: usize, message: String },
}

/// One raw patch: the diff, its commit message, and a binary label
/// (1 = security fix, 0 = anything else).
#[derive(Debug, Clone, PartialEq)]
pub struct PatchRecord {
    pub id: String,
    pub diff_text: String,
    pub description: String,
    pub label: u8,
}

#[derive(Deserialize)]
struct RawRecord {
    id: String,
    diff: String,
    message: String,
    label: i64,
}

/// Load a JSON Lines dataset: one object per line with fields `id`,
/// `diff`, `message` and `label` (0 or 1). Unknown fields are ignored;
/// blank lines are skipped.
pub fn load_dataset(path: &Path) -> Result<Vec<PatchRecord>, IngestError> {
    let text = fs::read_to_string(path)?;
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| IngestError::Schema {
            line: line_no,
            message: e.to_string(),
        })?;
        if raw.label != 0 && raw.label != 1 {
            return Err(IngestError::Schema {
                line: line_no,
                message: format!("label must be 0 or 1, got {}", raw.label),
            });
        }
        records.push(PatchRecord {
            id: raw.id,
            diff_text: raw.diff,
            description: raw.message,
            label: raw.label as u8,
        });
    }
    Ok(records)
}
