use std::collections::{BTreeSet, HashMap};

use crate::datagen::Sample;

pub const UNKNOWN_TOKEN: &str = "<unk>";

/// Fixed word-level vocabulary. Id 0 is the unknown token; every other word
/// gets its rank in sorted order, so the same word set always yields the
/// same ids.
#[derive(Clone, Debug, PartialEq)]
pub struct Tokenizer {
    words: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Tokenizer {
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let set: BTreeSet<String> = words
            .into_iter()
            .map(|w| w.as_ref().to_owned())
            .filter(|w| w != UNKNOWN_TOKEN)
            .collect();
        let words: Vec<String> = std::iter::once(UNKNOWN_TOKEN.to_owned()).chain(set).collect();
        let ids = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Self { words, ids }
    }

    /// Vocabulary of every word appearing in `samples`.
    pub fn from_samples<'a, I: IntoIterator<Item = &'a Sample>>(samples: I) -> Self {
        Self::from_words(samples.into_iter().flat_map(|s| s.words()))
    }

    /// Rebuilds a tokenizer from its id-ordered word list (as stored in a
    /// checkpoint). Returns `None` if the list is not in canonical form.
    pub fn from_id_order(words: Vec<String>) -> Option<Self> {
        if words.first().map(String::as_str) != Some(UNKNOWN_TOKEN) {
            return None;
        }
        let t = Self::from_words(words.iter().skip(1));
        (t.words == words).then_some(t)
    }

    pub fn unknown_id(&self) -> usize {
        0
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, word: &str) -> usize {
        self.ids.get(word).copied().unwrap_or(0)
    }

    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        text.split_whitespace().map(|w| self.id(w)).collect()
    }

    /// All words in id order, starting with the unknown token.
    pub fn id_order(&self) -> &[String] {
        &self.words
    }

    /// Known words, excluding the unknown token.
    pub fn known_words(&self) -> &[String] {
        &self.words[1..]
    }
}
