//! Unified-diff parsing. Only the change content matters here: hunk body
//! lines are classified by their leading character and collected in order;
//! file headers and git noise are dropped.

use super::IngestError;

/// The classified lines of a patch, in original order within each class.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DiffHunks {
    pub added_lines: Vec<String>,
    pub removed_lines: Vec<String>,
    pub context_lines: Vec<String>,
}

fn is_header(line: &str) -> bool {
    line.starts_with("+++")
        || line.starts_with("---")
        || line.starts_with("@@")
        || line.starts_with("diff ")
        || line.starts_with("index ")
}

/// Split a unified diff into added, removed and context lines with the
/// leading marker stripped. Header lines (`+++`, `---`, `@@`, `diff`,
/// `index`) never land in any list. Inputs without file headers are
/// tolerated: if no `@@` marker exists at all, the whole text is treated
/// as one hunk body.
///
/// Errors with [`IngestError::MalformedDiff`] when the text has neither a
/// hunk marker nor any `+`/`-` line; an empty [`DiffHunks`] is not an
/// error.
pub fn parse_unified_diff(diff_text: &str) -> Result<DiffHunks, IngestError> {
    let has_hunk_marker = diff_text.lines().any(|l| l.starts_with("@@"));
    let has_change_line = diff_text
        .lines()
        .any(|l| l.starts_with('+') || l.starts_with('-'));
    if !has_hunk_marker && !has_change_line {
        return Err(IngestError::MalformedDiff);
    }

    let mut hunks = DiffHunks::default();
    // Without any @@ marker the entire input counts as hunk body.
    let mut in_hunk = !has_hunk_marker;
    for line in diff_text.lines() {
        if line.starts_with("@@") {
            in_hunk = true;
            continue;
        }
        if is_header(line) {
            continue;
        }
        if !in_hunk {
            continue;
        }
        match line.chars().next() {
            Some('+') => hunks.added_lines.push(line[1..].to_string()),
            Some('-') => hunks.removed_lines.push(line[1..].to_string()),
            Some(' ') => hunks.context_lines.push(line[1..].to_string()),
            // Some tools strip the single space off blank context lines.
            None => hunks.context_lines.push(String::new()),
            // "\ No newline at end of file" and similar metadata.
            _ => {}
        }
    }
    Ok(hunks)
}
