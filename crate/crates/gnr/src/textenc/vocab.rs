//! Word-level vocabulary with PAD/UNK specials and a boundary tokenizer.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub const PAD_INDEX: usize = 0;
pub const UNK_INDEX: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Token table with reserved PAD (0) and UNK (1) entries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds from raw texts, keeping tokens seen at least `min_freq` times.
    /// Qualifying tokens are assigned indices in lexicographic order so the
    /// result is independent of text order.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, min_freq: usize) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for token in split_tokens(text) {
                *counts.entry(token).or_insert(0) += 1;
            }
        }
        let mut kept: Vec<String> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_freq)
            .map(|(t, _)| t)
            .collect();
        kept.sort_unstable();
        Self::from_tokens(kept)
    }

    /// Wraps an explicit token list (specials are prepended).
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let mut all = Vec::with_capacity(tokens.len() + 2);
        all.push(PAD_TOKEN.to_string());
        all.push(UNK_TOKEN.to_string());
        all.extend(tokens);
        let index = all
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { tokens: all, index }
    }

    /// Rebuilds the lookup map after deserialization.
    pub fn rebuild_index(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    /// Non-special token list, in index order.
    pub fn content_tokens(&self) -> &[String] {
        &self.tokens[2..]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // always holds PAD and UNK
    }

    pub fn lookup(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_INDEX)
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }
}

/// Lowercases and splits on whitespace and punctuation boundaries;
/// alphanumeric runs are the tokens.
pub fn split_tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_lowercase)
}

/// Token indices for `text`, truncated or PAD-padded to exactly `max_len`.
pub fn tokenize(text: &str, vocab: &Vocabulary, max_len: usize) -> Vec<usize> {
    assert!(max_len >= 1, "max_len must be at least 1");
    let mut ids: Vec<usize> = split_tokens(text)
        .take(max_len)
        .map(|t| vocab.lookup(&t))
        .collect();
    ids.resize(max_len, PAD_INDEX);
    ids
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_vocab() -> Vocabulary {
        Vocabulary::from_tokens(vec![
            "cup".into(),
            "final".into(),
            "world".into(),
        ])
    }

    #[test]
    fn empty_text_is_all_pad() {
        let v = sample_vocab();
        assert_eq!(tokenize("", &v, 4), vec![PAD_INDEX; 4]);
    }

    #[test]
    fn known_tokens_map_and_pad_fills() {
        let v = sample_vocab();
        let ids = tokenize("World Cup final", &v, 4);
        assert_eq!(
            ids,
            vec![v.lookup("world"), v.lookup("cup"), v.lookup("final"), PAD_INDEX]
        );
        assert!(ids[0] > UNK_INDEX);
    }

    #[test]
    fn unseen_token_becomes_unk() {
        let v = sample_vocab();
        let ids = tokenize("world zebra", &v, 2);
        assert_eq!(ids[1], UNK_INDEX);
    }

    #[test]
    fn punctuation_is_a_boundary() {
        let v = Vocabulary::from_tokens(vec!["kurds".into(), "no".into(), "trump".into()]);
        let tokens: Vec<String> = split_tokens("Trump: the Kurds 'are no angels'").collect();
        assert_eq!(tokens, vec!["trump", "the", "kurds", "are", "no", "angels"]);
        assert_eq!(tokenize("Trump,Kurds", &v, 2), vec![v.lookup("trump"), v.lookup("kurds")]);
    }

    #[test]
    fn truncation_respects_max_len() {
        let v = sample_vocab();
        assert_eq!(tokenize("world cup final world cup", &v, 3).len(), 3);
    }

    #[test]
    fn build_applies_min_frequency() {
        let v = Vocabulary::build(["world cup", "world final", "once"], 2);
        assert!(v.lookup("world") > UNK_INDEX);
        assert_eq!(v.lookup("once"), UNK_INDEX);
        assert_eq!(v.lookup("cup"), UNK_INDEX);
    }

    #[test]
    fn build_is_order_independent() {
        let a = Vocabulary::build(["alpha beta", "beta gamma", "alpha gamma"], 2);
        let b = Vocabulary::build(["alpha gamma", "alpha beta", "beta gamma"], 2);
        assert_eq!(a.content_tokens(), b.content_tokens());
    }
}
