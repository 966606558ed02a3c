//! Sentence splitting and token-overlap helpers shared by the stub
//! provider and the builtin consistency judge.

use std::collections::HashSet;

use crate::textenc::split_tokens;

/// Common English function words excluded from stub theme phrases.
pub const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "but", "by", "for", "from", "has", "have", "he",
    "her", "his", "in", "into", "is", "it", "its", "of", "on", "or", "say", "says", "she", "that",
    "the", "their", "they", "this", "to", "was", "were", "will", "with",
];

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.contains(&token)
}

/// Splits on `.`, `!`, `?` keeping the terminator attached; a trailing
/// fragment without a terminator is kept as its own sentence.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut sentences = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        current.push(c);
        if matches!(c, '.' | '!' | '?') {
            let trimmed = current.trim();
            if !trimmed.is_empty() {
                sentences.push(trimmed.to_string());
            }
            current.clear();
        }
    }
    let trimmed = current.trim();
    if !trimmed.is_empty() {
        sentences.push(trimmed.to_string());
    }
    sentences
}

/// First sentence of the text, with a terminal period appended when the
/// source had no terminator.
pub fn first_sentence(text: &str) -> Option<String> {
    let mut first = split_sentences(text).into_iter().next()?;
    if !first.ends_with(['.', '!', '?']) {
        first.push('.');
    }
    Some(first)
}

/// Jaccard overlap of the lowercased token sets of two texts.
pub fn token_jaccard(a: &str, b: &str) -> f64 {
    let sa: HashSet<String> = split_tokens(a).collect();
    let sb: HashSet<String> = split_tokens(b).collect();
    if sa.is_empty() && sb.is_empty() {
        return 1.0;
    }
    if sa.is_empty() || sb.is_empty() {
        return 0.0;
    }
    let inter = sa.intersection(&sb).count() as f64;
    let union = sa.union(&sb).count() as f64;
    inter / union
}

/// True when every sentence of `narrative_text` has token-Jaccard overlap of
/// at least 0.5 with some sentence drawn from the source texts.
pub fn extractively_consistent(source_texts: &[String], narrative_text: &str) -> bool {
    let source_sentences: Vec<String> = source_texts
        .iter()
        .flat_map(|t| split_sentences(t))
        .collect();
    if source_sentences.is_empty() {
        return false;
    }
    split_sentences(narrative_text).iter().all(|sentence| {
        source_sentences
            .iter()
            .any(|src| token_jaccard(sentence, src) >= 0.5)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_and_keeps_terminators() {
        let s = split_sentences("One here. Two there! Three? tail");
        assert_eq!(s, vec!["One here.", "Two there!", "Three?", "tail"]);
    }

    #[test]
    fn first_sentence_appends_a_period_when_missing() {
        assert_eq!(first_sentence("No terminator at all"), Some("No terminator at all.".into()));
        assert_eq!(first_sentence("Done. Next."), Some("Done.".into()));
        assert_eq!(first_sentence("   "), None);
    }

    #[test]
    fn jaccard_handles_identical_and_disjoint() {
        assert_eq!(token_jaccard("the vote passed", "The vote PASSED!"), 1.0);
        assert_eq!(token_jaccard("alpha beta", "gamma delta"), 0.0);
    }

    #[test]
    fn extractive_check_accepts_copied_sentences_and_rejects_foreign_ones() {
        let sources = vec![
            "The senate passed the budget. Debate ran long.".to_string(),
            "The court opened a new case.".to_string(),
        ];
        assert!(extractively_consistent(&sources, "The senate passed the budget."));
        assert!(extractively_consistent(
            &sources,
            "The senate passed the budget. The court opened a new case."
        ));
        assert!(!extractively_consistent(
            &sources,
            "The senate passed the budget. Aliens landed yesterday evening."
        ));
    }
}
