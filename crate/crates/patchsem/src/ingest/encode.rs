//! Fixed-length integer encoding of a patch into the three streams the
//! model consumes: code tokens, changed lines, and description tokens.
//! Removed lines always precede added lines in the code streams.

use super::diff::{parse_unified_diff, DiffHunks};
use super::tokenize::{normalize_line, tokenize_code};
use super::vocab::{Vocab, PAD_ID};
use super::{IngestError, PatchRecord};

/// Padded/truncated lengths for the three streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SequenceLimits {
    pub max_tokens: usize,
    pub max_lines: usize,
    pub max_desc: usize,
}

/// A patch as three padded id sequences plus masks marking the real
/// (non-padding) positions.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedPatch {
    pub id: String,
    pub token_ids: Vec<usize>,
    pub line_ids: Vec<usize>,
    pub desc_ids: Vec<usize>,
    pub token_mask: Vec<bool>,
    pub line_mask: Vec<bool>,
    pub desc_mask: Vec<bool>,
    pub label: u8,
}

fn pad_to(mut ids: Vec<usize>, limit: usize) -> (Vec<usize>, Vec<bool>) {
    ids.truncate(limit);
    let mut mask = vec![true; ids.len()];
    while ids.len() < limit {
        ids.push(PAD_ID);
        mask.push(false);
    }
    (ids, mask)
}

/// Encode parsed hunks and a description against the three vocabularies.
///
/// Token stream: tokens of removed lines then added lines. Line stream:
/// one id per removed then added line, keyed by the whitespace-normalized
/// line. Description stream: tokenized message. Context lines do not
/// participate.
pub fn encode_patch(
    rec: &PatchRecord,
    hunks: &DiffHunks,
    token_vocab: &Vocab,
    line_vocab: &Vocab,
    desc_vocab: &Vocab,
    limits: SequenceLimits,
) -> EncodedPatch {
    let mut token_ids = Vec::new();
    for line in hunks.removed_lines.iter().chain(&hunks.added_lines) {
        for tok in tokenize_code(line) {
            token_ids.push(token_vocab.lookup(&tok));
        }
    }
    let line_ids: Vec<usize> = hunks
        .removed_lines
        .iter()
        .chain(&hunks.added_lines)
        .map(|line| line_vocab.lookup(&normalize_line(line)))
        .collect();
    let desc_ids: Vec<usize> = tokenize_code(&rec.description)
        .iter()
        .map(|tok| desc_vocab.lookup(tok))
        .collect();

    let (token_ids, token_mask) = pad_to(token_ids, limits.max_tokens);
    let (line_ids, line_mask) = pad_to(line_ids, limits.max_lines);
    let (desc_ids, desc_mask) = pad_to(desc_ids, limits.max_desc);
    EncodedPatch {
        id: rec.id.clone(),
        token_ids,
        line_ids,
        desc_ids,
        token_mask,
        line_mask,
        desc_mask,
        label: rec.label,
    }
}

/// Parse a record's diff and encode it in one step.
pub fn encode_record(
    rec: &PatchRecord,
    token_vocab: &Vocab,
    line_vocab: &Vocab,
    desc_vocab: &Vocab,
    limits: SequenceLimits,
) -> Result<EncodedPatch, IngestError> {
    let hunks = parse_unified_diff(&rec.diff_text)?;
    Ok(encode_patch(
        rec,
        &hunks,
        token_vocab,
        line_vocab,
        desc_vocab,
        limits,
    ))
}
