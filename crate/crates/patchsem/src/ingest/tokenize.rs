//! Deterministic, language-agnostic code tokenizer: whitespace split,
//! every punctuation character its own token, identifiers split on
//! camelCase and snake_case boundaries, everything lowercased.

/// Tokenize one line of code (or prose). Empty input gives an empty list.
pub fn tokenize_code(line: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for chunk in line.split_whitespace() {
        for ch in chunk.chars() {
            if ch.is_alphanumeric() || ch == '_' {
                word.push(ch);
            } else {
                flush_word(&mut word, &mut tokens);
                tokens.push(ch.to_lowercase().to_string());
            }
        }
        flush_word(&mut word, &mut tokens);
    }
    tokens
}

fn flush_word(word: &mut String, out: &mut Vec<String>) {
    if word.is_empty() {
        return;
    }
    for part in word.split('_').filter(|p| !p.is_empty()) {
        split_camel(part, out);
    }
    word.clear();
}

// Boundaries: before an uppercase that follows a non-uppercase
// ("fooBar" -> foo|Bar), and before the last uppercase of a run that is
// followed by lowercase ("HTTPResponse" -> HTTP|Response).
fn split_camel(part: &str, out: &mut Vec<String>) {
    let chars: Vec<char> = part.chars().collect();
    let mut start = 0;
    for i in 1..chars.len() {
        let boundary = (chars[i].is_uppercase() && !chars[i - 1].is_uppercase())
            || (chars[i].is_uppercase()
                && chars[i - 1].is_uppercase()
                && i + 1 < chars.len()
                && chars[i + 1].is_lowercase());
        if boundary {
            out.push(chars[start..i].iter().collect::<String>().to_lowercase());
            start = i;
        }
    }
    out.push(chars[start..].iter().collect::<String>().to_lowercase());
}

/// Canonical key for line-level vocabulary entries: leading/trailing
/// whitespace trimmed, internal runs collapsed to single spaces.
pub fn normalize_line(line: &str) -> String {
    line.split_whitespace().collect::<Vec<_>>().join(" ")
}
