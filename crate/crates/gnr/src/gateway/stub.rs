//! Deterministic offline provider. Responses are pure functions of the
//! prompt text (and seed), built extractively from the prompt contents so
//! that render -> complete -> parse always closes without a network.

use std::collections::HashMap;

use crate::gateway::prompt::{extract_quoted_value, record_lines, split_comma_list};
use crate::gateway::{ChatRequest, ProviderTag, Transport, TransportFailure, TransportReply};
use crate::text::{extractively_consistent, first_sentence, is_stopword};
use crate::textenc::split_tokens;

pub struct StubTransport {
    #[allow(dead_code)]
    seed: u64,
}

impl StubTransport {
    pub fn new(seed: u64) -> Self {
        StubTransport { seed }
    }
}

impl Transport for StubTransport {
    fn send(&self, request: &ChatRequest) -> Result<TransportReply, TransportFailure> {
        let content = respond(&request.system, &request.user);
        Ok(TransportReply {
            content,
            usage: None,
        })
    }

    fn tag(&self) -> ProviderTag {
        ProviderTag::Stub
    }
}

fn respond(system: &str, user: &str) -> String {
    if system.contains("summarize what topic(s)") {
        theme_response(user)
    } else if system.contains("describe user interest") {
        profile_response(user)
    } else if system.contains("personalized text generator") {
        fusion_response(user)
    } else if system.contains("factually consistent") {
        judge_response(user)
    } else {
        "[stub]".to_string()
    }
}

/// Up to three most frequent bigrams of the title whose words are both
/// non-stopwords; falls back to the first five title words.
fn theme_response(user: &str) -> String {
    let title = extract_quoted_value(user, "title").unwrap_or_default();
    let tokens: Vec<String> = split_tokens(&title).collect();

    let mut counts: HashMap<(String, String), usize> = HashMap::new();
    let mut order: Vec<(String, String)> = Vec::new();
    for pair in tokens.windows(2) {
        if is_stopword(&pair[0]) || is_stopword(&pair[1]) {
            continue;
        }
        let key = (pair[0].clone(), pair[1].clone());
        if !counts.contains_key(&key) {
            order.push(key.clone());
        }
        *counts.entry(key).or_insert(0) += 1;
    }
    let mut ranked: Vec<(usize, (String, String))> = order
        .into_iter()
        .enumerate()
        .map(|(first_seen, key)| (first_seen, key))
        .collect();
    ranked.sort_by(|a, b| {
        counts[&b.1]
            .cmp(&counts[&a.1])
            .then_with(|| a.0.cmp(&b.0))
    });

    let phrases: Vec<String> = ranked
        .into_iter()
        .take(3)
        .map(|(_, (a, b))| format!("{a} {b}"))
        .collect();
    let phrases = if phrases.is_empty() {
        vec![tokens
            .iter()
            .take(5)
            .cloned()
            .collect::<Vec<_>>()
            .join(" ")]
    } else {
        phrases
    };
    let list = phrases
        .iter()
        .map(|p| format!("[{p}]"))
        .collect::<Vec<_>>()
        .join(", ");
    format!("This news is related to {list}.")
}

/// Majority category plus the first five distinct topics across the
/// history, supported by every listed news item.
fn profile_response(user: &str) -> String {
    let mut categories: Vec<String> = Vec::new();
    let mut category_counts: HashMap<String, usize> = HashMap::new();
    let mut topics: Vec<String> = Vec::new();
    let mut labels: Vec<String> = Vec::new();

    for line in record_lines(user) {
        if let Some(label) = extract_quoted_value(line, "ID") {
            labels.push(label);
        }
        if let Some(category) = extract_quoted_value(line, "category") {
            if !category_counts.contains_key(&category) {
                categories.push(category.clone());
            }
            *category_counts.entry(category).or_insert(0) += 1;
        }
        if let Some(topic_list) = extract_quoted_value(line, "topics") {
            for topic in split_comma_list(&topic_list) {
                if !topics.contains(&topic) {
                    topics.push(topic);
                }
            }
        }
    }
    topics.truncate(5);

    let majority = categories
        .iter()
        .max_by_key(|c| category_counts[*c])
        .cloned()
        .unwrap_or_else(|| "news".to_string());

    let mut out = format!("According to [{}], ", labels.join(", "));
    out.push_str(&format!("this user is interested in news about [{majority}]"));
    if !topics.is_empty() {
        out.push_str(&format!(", especially [{}]", topics.join(", ")));
    }
    out.push('.');
    out
}

/// Extractive fusion: focal title and category, the union of topics, and an
/// abstract made of the first sentence of every listed article in order.
fn fusion_response(user: &str) -> String {
    let mut title = String::new();
    let mut category = String::new();
    let mut topics: Vec<String> = Vec::new();
    let mut sentences: Vec<String> = Vec::new();

    for line in record_lines(user) {
        let is_main = extract_quoted_value(line, "ID")
            .map(|id| id == "Main News")
            .unwrap_or(false);
        let record_title = extract_quoted_value(line, "title").unwrap_or_default();
        let record_abstract = extract_quoted_value(line, "abstract").unwrap_or_default();
        if is_main {
            title = record_title.clone();
            category = extract_quoted_value(line, "category").unwrap_or_default();
        }
        for key in ["topic", "topics"] {
            if let Some(topic_list) = extract_quoted_value(line, key) {
                for topic in split_comma_list(&topic_list) {
                    if !topics.contains(&topic) {
                        topics.push(topic);
                    }
                }
            }
        }
        let source = if record_abstract.is_empty() {
            record_title
        } else {
            record_abstract
        };
        if let Some(sentence) = first_sentence(&source) {
            sentences.push(sentence);
        }
    }

    let abstract_text = sentences.join(" ");
    format!(
        "{{\"title\": \"{}\", \"category\": \"{}\", \"topics\": \"{}\", \"abstract\": \"{}\"}}",
        crate::gateway::prompt::escape_field(&title),
        crate::gateway::prompt::escape_field(&category),
        crate::gateway::prompt::escape_field(&topics.join(", ")),
        crate::gateway::prompt::escape_field(&abstract_text),
    )
}

/// Runs the same extractive check the builtin judge applies and answers
/// yes/no.
fn judge_response(user: &str) -> String {
    let mut sources: Vec<String> = Vec::new();
    let mut summary = String::new();
    let mut in_summary = false;
    for line in user.lines() {
        let trimmed = line.trim();
        if trimmed.starts_with("Summary:") {
            in_summary = true;
            continue;
        }
        if trimmed.starts_with('{') {
            let title = extract_quoted_value(trimmed, "title").unwrap_or_default();
            let abstract_text = extract_quoted_value(trimmed, "abstract").unwrap_or_default();
            let text = format!("{title} {abstract_text}");
            if in_summary {
                summary = text;
            } else {
                sources.push(text);
            }
        }
    }
    if !summary.is_empty() && extractively_consistent(&sources, &summary) {
        "Yes.".to_string()
    } else {
        "No.".to_string()
    }
}
