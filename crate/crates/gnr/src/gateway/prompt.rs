//! Prompt templates and the quoted-record micro-format they share with the
//! response parsers.
//!
//! Rendered inputs are single-line records of `"key": "value"` pairs.
//! Values are escaped JSON-style (`\"`, `\\`; newlines become spaces) so the
//! record scanner can recover the original text exactly.

use crate::corpus::NewsArticle;
use crate::gateway::{GatewayError, Prompt, UserInterestProfile};

pub(crate) fn escape_field(value: &str) -> String {
    let mut out = String::with_capacity(value.len());
    for c in value.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '"' => out.push_str("\\\""),
            '\n' | '\r' => out.push(' '),
            _ => out.push(c),
        }
    }
    out
}

pub(crate) fn unescape_field(value: &str) -> String {
    let mut out = String::with_capacity(value.len());
    let mut chars = value.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('"') => out.push('"'),
                Some('\\') => out.push('\\'),
                Some(other) => {
                    out.push('\\');
                    out.push(other);
                }
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

fn field(key: &str, value: &str) -> String {
    format!("\"{key}\": \"{}\"", escape_field(value))
}

const THEME_INSTRUCTION: &str = "Based on the given news information, summarize what topic(s) \
the news is related to. Each news article is related to 1-3 topics, and each topic should not \
exceed five words. Answer in the form: This news is related to [topic], [topic].";

const PROFILE_INSTRUCTION: &str = "You are asked to describe user interest based on his/her \
browsed news list. User interest includes the news [categories] and news [topics] (under each \
[category]) that users are interested in. Answer in the form: According to [News 1, News 2], \
this user is interested in news about [category], especially [topic, topic].";

const FUSION_INSTRUCTION: &str = "You are a personalized text generator. First, I will provide \
you with a news list that includes both the [main news] and [topic-related news]. Second, I \
will provide you with user interests, including the [categories] and [topics] of news that the \
user is interested in. Based on the input news list and user interests, you are required to \
generate a {personalized news summary} centered around the [main news]. Answer as a record \
with quoted \"title\", \"category\", \"topics\" and \"abstract\" fields.";

/// Prompt asking for 1-3 short topics for one article.
pub fn render_theme_prompt(article: &NewsArticle) -> Prompt {
    let user = format!(
        "{{{}, {}, {}}}",
        field("title", &article.title),
        field("abstract", &article.abstract_text),
        field("category", &article.category),
    );
    Prompt {
        system: THEME_INSTRUCTION.to_string(),
        user,
    }
}

/// Prompt describing a user from their annotated history. Every article must
/// already carry theme topics.
pub fn render_profile_prompt(history: &[&NewsArticle]) -> Result<Prompt, GatewayError> {
    if history.is_empty() {
        return Err(GatewayError::EmptyHistory);
    }
    let mut user = String::from("News List:\n");
    for (i, article) in history.iter().enumerate() {
        let topics = article
            .theme_topics
            .as_ref()
            .ok_or_else(|| GatewayError::MissingThemes(article.id.clone()))?;
        user.push_str(&format!(
            "{{{}, {}, {}, {}}}\n",
            field("ID", &format!("News {}", i + 1)),
            field("title", &article.title),
            field("category", &article.category),
            field("topics", &topics.join(", ")),
        ));
    }
    Ok(Prompt {
        system: PROFILE_INSTRUCTION.to_string(),
        user: user.trim_end().to_string(),
    })
}

/// Prompt fusing the focal article and its related articles into one
/// narrative for a user with the given interests.
pub fn render_fusion_prompt(
    focal: &NewsArticle,
    related: &[&NewsArticle],
    profile: &UserInterestProfile,
) -> Prompt {
    let mut user = String::from("News List:\n");
    let record = |label: &str, article: &NewsArticle| {
        format!(
            "{{{}, {}, {}, {}, {}}}\n",
            field("ID", label),
            field("title", &article.title),
            field("abstract", &article.abstract_text),
            field("category", &article.category),
            field("topic", &article.theme_topics.as_deref().unwrap_or(&[]).join(", ")),
        )
    };
    user.push_str(&record("Main News", focal));
    for (i, article) in related.iter().enumerate() {
        user.push_str(&record(&format!("Topic-related News {}", i + 1), article));
    }
    user.push_str("User Interest:\n");
    user.push_str(&format!(
        "This user is interested in news about [{}], especially [{}].",
        profile.categories.join(", "),
        profile.topics.join(", "),
    ));
    Prompt {
        system: FUSION_INSTRUCTION.to_string(),
        user,
    }
}

/// Finds `"key"` followed by a colon and a quoted value, returning the
/// unescaped value. Searches the whole of `text`.
pub(crate) fn extract_quoted_value(text: &str, key: &str) -> Option<String> {
    let needle = format!("\"{key}\"");
    let mut search_from = 0;
    while let Some(rel) = text[search_from..].find(&needle) {
        let after_key = search_from + rel + needle.len();
        let rest = text[after_key..].trim_start();
        if let Some(stripped) = rest.strip_prefix(':') {
            let value_part = stripped.trim_start();
            if let Some(raw) = value_part.strip_prefix('"') {
                let mut end = None;
                let bytes = raw.as_bytes();
                let mut i = 0;
                while i < bytes.len() {
                    match bytes[i] {
                        b'\\' => i += 2,
                        b'"' => {
                            end = Some(i);
                            break;
                        }
                        _ => i += 1,
                    }
                }
                if let Some(end) = end {
                    return Some(unescape_field(&raw[..end]));
                }
            }
        }
        search_from = after_key;
    }
    None
}

/// All `[...]` segments in order, trimmed.
pub(crate) fn bracketed_segments(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find('[') {
        let Some(close_rel) = rest[open + 1..].find(']') else {
            break;
        };
        out.push(rest[open + 1..open + 1 + close_rel].trim().to_string());
        rest = &rest[open + 1 + close_rel + 1..];
    }
    out
}

/// The first `[...]` segment after `marker`, trimmed.
pub(crate) fn bracket_after(text: &str, marker: &str) -> Option<String> {
    let at = text.find(marker)?;
    let rest = &text[at + marker.len()..];
    let open = rest.find('[')?;
    let close = rest[open + 1..].find(']')?;
    Some(rest[open + 1..open + 1 + close].trim().to_string())
}

/// Lines of `text` that look like records (start with `{`).
pub(crate) fn record_lines(text: &str) -> Vec<&str> {
    text.lines()
        .map(str::trim)
        .filter(|l| l.starts_with('{'))
        .collect()
}

pub(crate) fn split_comma_list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}
