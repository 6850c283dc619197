//! Frequency-ranked vocabularies mapping tokens to dense integer ids.
//! Ids 0 and 1 are reserved for padding and unknown tokens; those two
//! have no string form, so corpus tokens can never collide with them.

use std::collections::HashMap;

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    token_to_id: HashMap<String, usize>,
    // index i holds the token with id i + 2
    id_to_token: Vec<String>,
    min_freq: usize,
}

impl Vocab {
    /// Id of `token`, or [`UNK_ID`] when absent.
    pub fn lookup(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK_ID)
    }

    /// Token string for a non-special id.
    pub fn token(&self, id: usize) -> Option<&str> {
        if id < 2 {
            return None;
        }
        self.id_to_token.get(id - 2).map(|s| s.as_str())
    }

    /// Total id count, specials included.
    pub fn size(&self) -> usize {
        self.id_to_token.len() + 2
    }

    /// Corpus tokens in id order (first entry has id 2).
    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    pub fn min_freq(&self) -> usize {
        self.min_freq
    }

    /// Rebuild a vocabulary from its id-ordered token list (checkpoint
    /// loading path).
    pub fn from_tokens(tokens: Vec<String>, min_freq: usize) -> Vocab {
        let token_to_id = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i + 2))
            .collect();
        Vocab {
            token_to_id,
            id_to_token: tokens,
            min_freq,
        }
    }
}

/// Build a vocabulary over every token list in `corpus`. Tokens with
/// frequency below `min_freq` are dropped; ids are assigned from 2 by
/// descending frequency with ties broken lexicographically, which makes
/// the assignment deterministic for a given corpus.
pub fn build_vocab<'a, I>(corpus: I, min_freq: usize) -> Vocab
where
    I: IntoIterator<Item = &'a [String]>,
{
    assert!(min_freq >= 1, "min_freq must be at least 1");
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for list in corpus {
        for token in list {
            *freq.entry(token.as_str()).or_insert(0) += 1;
        }
    }
    let mut entries: Vec<(&str, usize)> = freq
        .into_iter()
        .filter(|(_, count)| *count >= min_freq)
        .collect();
    entries.sort_by(|(ta, ca), (tb, cb)| cb.cmp(ca).then_with(|| ta.cmp(tb)));
    Vocab::from_tokens(
        entries.into_iter().map(|(t, _)| t.to_string()).collect(),
        min_freq,
    )
}
