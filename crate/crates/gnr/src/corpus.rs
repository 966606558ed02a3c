//! Flat-file ingestion of news articles, user behaviors, relation pairs,
//! and theme sidecars.
//!
//! File formats (UTF-8, LF lines, tab-separated):
//!
//! - news: `id \t category \t title \t abstract [\t ignored...]`
//! - behaviors: `impression_id \t user_id \t timestamp \t history \t candidates`
//!   where history is space-separated news ids and every candidate carries a
//!   `-1` (clicked) or `-0` (not clicked) suffix
//! - relation pairs: `anchor_id \t related_id`
//! - theme sidecar: `id \t topic1|topic2|topic3`

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Opaque news article key.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NewsId(pub String);

impl NewsId {
    pub fn new(id: impl Into<String>) -> Self {
        NewsId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NewsId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NewsId {
    fn from(s: &str) -> Self {
        NewsId(s.to_string())
    }
}

/// One news article. `theme_topics` stays unset until a sidecar is applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewsArticle {
    pub id: NewsId,
    pub category: String,
    pub title: String,
    pub abstract_text: String,
    pub theme_topics: Option<Vec<String>>,
}

impl NewsArticle {
    /// Wraps free text as a pseudo-article: the first sentence becomes the
    /// title, the remainder the abstract.
    pub fn from_free_text(
        id: NewsId,
        category: &str,
        text: &str,
        theme_topics: Option<Vec<String>>,
    ) -> NewsArticle {
        let sentences = crate::text::split_sentences(text);
        let (title, abstract_text) = match sentences.split_first() {
            Some((first, rest)) => (first.clone(), rest.join(" ")),
            None => (text.trim().to_string(), String::new()),
        };
        NewsArticle {
            id,
            category: category.to_string(),
            title,
            abstract_text,
            theme_topics,
        }
    }

    /// Title and abstract joined for semantic encoding.
    pub fn full_text(&self) -> String {
        if self.abstract_text.is_empty() {
            self.title.clone()
        } else {
            format!("{} {}", self.title, self.abstract_text)
        }
    }

    /// Theme phrases joined for theme encoding; empty when unannotated.
    pub fn theme_text(&self) -> String {
        match &self.theme_topics {
            Some(topics) => topics.join(" "),
            None => String::new(),
        }
    }
}

/// A candidate news item with its click label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: NewsId,
    pub clicked: bool,
}

/// One logged exposure: a user's click history plus a labeled candidate list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Impression {
    pub impression_id: String,
    pub user_id: String,
    pub timestamp: String,
    pub history: Vec<NewsId>,
    pub candidates: Vec<Candidate>,
}

impl Impression {
    pub fn clicked_candidates(&self) -> impl Iterator<Item = &Candidate> {
        self.candidates.iter().filter(|c| c.clicked)
    }

    pub fn unclicked_candidates(&self) -> impl Iterator<Item = &Candidate> {
        self.candidates.iter().filter(|c| !c.clicked)
    }
}

/// Positive related-news pairs used to train the relation model.
#[derive(Debug, Clone)]
pub struct RelationPairSet {
    pub pairs: Vec<(NewsId, NewsId)>,
    pub source: String,
}

/// Insertion-ordered, id-indexed article store. Immutable after load.
#[derive(Debug, Clone, Default)]
pub struct CorpusStore {
    articles: Vec<NewsArticle>,
    index: HashMap<NewsId, usize>,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: expected at least {expected} tab-separated columns, found {found}")]
    MalformedLine {
        path: String,
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("{path}:{line}: duplicate news id {id}")]
    DuplicateId {
        path: String,
        line: usize,
        id: NewsId,
    },
    #[error("{path}:{line}: empty {field}")]
    EmptyField {
        path: String,
        line: usize,
        field: &'static str,
    },
    #[error("{path}:{line}: unknown news id {id}")]
    UnknownId {
        path: String,
        line: usize,
        id: NewsId,
    },
    #[error("{path}:{line}: candidate {token} has no -1/-0 click suffix")]
    MissingClickLabel {
        path: String,
        line: usize,
        token: String,
    },
    #[error("{path}:{line}: impression has no candidates")]
    NoCandidates { path: String, line: usize },
    #[error("{path}:{line}: pair relates {id} to itself")]
    SelfPair {
        path: String,
        line: usize,
        id: NewsId,
    },
    #[error("{path}:{line}: theme list must have 1-3 topics, found {found}")]
    BadThemeCount {
        path: String,
        line: usize,
        found: usize,
    },
}

fn read_lines(path: &Path) -> Result<Vec<String>, CorpusError> {
    // read_to_string rejects invalid UTF-8, which is the wanted hard error.
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(text.lines().map(str::to_string).collect())
}

impl CorpusStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.articles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.articles.is_empty()
    }

    pub fn get(&self, id: &NewsId) -> Option<&NewsArticle> {
        self.index.get(id).map(|&i| &self.articles[i])
    }

    pub fn contains(&self, id: &NewsId) -> bool {
        self.index.contains_key(id)
    }

    /// Articles in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = &NewsArticle> {
        self.articles.iter()
    }

    /// Ids in insertion order.
    pub fn ids(&self) -> impl Iterator<Item = &NewsId> {
        self.articles.iter().map(|a| &a.id)
    }

    /// Adds an article, rejecting duplicate ids.
    pub fn insert_article(&mut self, article: NewsArticle) -> Result<(), NewsId> {
        if self.index.contains_key(&article.id) {
            return Err(article.id);
        }
        self.index.insert(article.id.clone(), self.articles.len());
        self.articles.push(article);
        Ok(())
    }

    /// Serializes back to the news file format (the four parsed columns).
    pub fn write_news(&self, path: &Path) -> Result<(), CorpusError> {
        let mut out = String::new();
        for a in &self.articles {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                a.id, a.category, a.title, a.abstract_text
            ));
        }
        fs::File::create(path)
            .and_then(|mut f| f.write_all(out.as_bytes()))
            .map_err(|source| CorpusError::Io {
                path: path.display().to_string(),
                source,
            })
    }

    /// Applies a theme sidecar file, setting `theme_topics` on each listed
    /// article. Phrases longer than five words are truncated.
    pub fn apply_theme_sidecar(&mut self, path: &Path) -> Result<usize, CorpusError> {
        let display = path.display().to_string();
        let lines = read_lines(path)?;
        let mut updates = Vec::new();
        for (lineno, line) in lines.iter().enumerate() {
            let line_num = lineno + 1;
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() < 2 {
                return Err(CorpusError::MalformedLine {
                    path: display.clone(),
                    line: line_num,
                    expected: 2,
                    found: cols.len(),
                });
            }
            let id = NewsId::new(cols[0]);
            let slot = *self.index.get(&id).ok_or_else(|| CorpusError::UnknownId {
                path: display.clone(),
                line: line_num,
                id: id.clone(),
            })?;
            let topics: Vec<String> = cols[1]
                .split('|')
                .map(str::trim)
                .filter(|t| !t.is_empty())
                .map(truncate_to_five_words)
                .collect();
            if topics.is_empty() || topics.len() > 3 {
                return Err(CorpusError::BadThemeCount {
                    path: display.clone(),
                    line: line_num,
                    found: topics.len(),
                });
            }
            updates.push((slot, topics));
        }
        let count = updates.len();
        for (slot, topics) in updates {
            self.articles[slot].theme_topics = Some(topics);
        }
        Ok(count)
    }

    /// Writes a theme sidecar for every annotated article, in store order.
    pub fn write_theme_sidecar(&self, path: &Path) -> Result<usize, CorpusError> {
        let mut out = String::new();
        let mut count = 0;
        for a in &self.articles {
            if let Some(topics) = &a.theme_topics {
                out.push_str(&format!("{}\t{}\n", a.id, topics.join("|")));
                count += 1;
            }
        }
        fs::File::create(path)
            .and_then(|mut f| f.write_all(out.as_bytes()))
            .map_err(|source| CorpusError::Io {
                path: path.display().to_string(),
                source,
            })?;
        Ok(count)
    }
}

pub fn truncate_to_five_words(phrase: &str) -> String {
    phrase.split_whitespace().take(5).collect::<Vec<_>>().join(" ")
}

/// Loads a news file into a fresh store. Lines with fewer than four columns,
/// duplicate ids, or empty id/title are hard errors; columns beyond the
/// fourth are ignored so real-world exports with extra annotation columns
/// stay loadable.
pub fn load_news(path: &Path) -> Result<CorpusStore, CorpusError> {
    let display = path.display().to_string();
    let lines = read_lines(path)?;
    let mut store = CorpusStore::new();
    for (lineno, line) in lines.iter().enumerate() {
        let line_num = lineno + 1;
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 4 {
            return Err(CorpusError::MalformedLine {
                path: display.clone(),
                line: line_num,
                expected: 4,
                found: cols.len(),
            });
        }
        if cols[0].is_empty() {
            return Err(CorpusError::EmptyField {
                path: display.clone(),
                line: line_num,
                field: "id",
            });
        }
        if cols[2].is_empty() {
            return Err(CorpusError::EmptyField {
                path: display.clone(),
                line: line_num,
                field: "title",
            });
        }
        let article = NewsArticle {
            id: NewsId::new(cols[0]),
            category: cols[1].to_string(),
            title: cols[2].to_string(),
            abstract_text: cols[3].to_string(),
            theme_topics: None,
        };
        store.insert_article(article).map_err(|id| CorpusError::DuplicateId {
            path: display.clone(),
            line: line_num,
            id,
        })?;
    }
    Ok(store)
}

/// Loads a behaviors file, resolving every referenced id against `store`.
pub fn load_behaviors(path: &Path, store: &CorpusStore) -> Result<Vec<Impression>, CorpusError> {
    let display = path.display().to_string();
    let lines = read_lines(path)?;
    let mut impressions = Vec::new();
    for (lineno, line) in lines.iter().enumerate() {
        let line_num = lineno + 1;
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 5 {
            return Err(CorpusError::MalformedLine {
                path: display.clone(),
                line: line_num,
                expected: 5,
                found: cols.len(),
            });
        }
        let mut history = Vec::new();
        for token in cols[3].split_whitespace() {
            let id = NewsId::new(token);
            if !store.contains(&id) {
                return Err(CorpusError::UnknownId {
                    path: display.clone(),
                    line: line_num,
                    id,
                });
            }
            history.push(id);
        }
        let mut candidates = Vec::new();
        for token in cols[4].split_whitespace() {
            let (id_part, clicked) = match token.rsplit_once('-') {
                Some((id_part, "1")) => (id_part, true),
                Some((id_part, "0")) => (id_part, false),
                _ => {
                    return Err(CorpusError::MissingClickLabel {
                        path: display.clone(),
                        line: line_num,
                        token: token.to_string(),
                    })
                }
            };
            let id = NewsId::new(id_part);
            if !store.contains(&id) {
                return Err(CorpusError::UnknownId {
                    path: display.clone(),
                    line: line_num,
                    id,
                });
            }
            candidates.push(Candidate { id, clicked });
        }
        if candidates.is_empty() {
            return Err(CorpusError::NoCandidates {
                path: display.clone(),
                line: line_num,
            });
        }
        impressions.push(Impression {
            impression_id: cols[0].to_string(),
            user_id: cols[1].to_string(),
            timestamp: cols[2].to_string(),
            history,
            candidates,
        });
    }
    Ok(impressions)
}

/// Keeps impressions whose history length lies in `[min_h, max_h]` and whose
/// history and candidate articles all carry `category`. Order is preserved;
/// pass `usize::MAX` for an unbounded upper limit.
pub fn filter_impressions(
    impressions: &[Impression],
    min_h: usize,
    max_h: usize,
    category: &str,
    store: &CorpusStore,
) -> Vec<Impression> {
    assert!(min_h <= max_h, "min_h must not exceed max_h");
    let in_category = |id: &NewsId| store.get(id).map(|a| a.category == category).unwrap_or(false);
    impressions
        .iter()
        .filter(|imp| {
            imp.history.len() >= min_h
                && imp.history.len() <= max_h
                && imp.history.iter().all(in_category)
                && imp.candidates.iter().all(|c| in_category(&c.id))
        })
        .cloned()
        .collect()
}

/// Loads positive relation pairs, rejecting self-pairs and unknown ids.
pub fn load_relation_pairs(path: &Path, store: &CorpusStore) -> Result<RelationPairSet, CorpusError> {
    let display = path.display().to_string();
    let lines = read_lines(path)?;
    let mut pairs = Vec::new();
    for (lineno, line) in lines.iter().enumerate() {
        let line_num = lineno + 1;
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 2 {
            return Err(CorpusError::MalformedLine {
                path: display.clone(),
                line: line_num,
                expected: 2,
                found: cols.len(),
            });
        }
        let anchor = NewsId::new(cols[0]);
        let related = NewsId::new(cols[1]);
        if anchor == related {
            return Err(CorpusError::SelfPair {
                path: display.clone(),
                line: line_num,
                id: anchor,
            });
        }
        for id in [&anchor, &related] {
            if !store.contains(id) {
                return Err(CorpusError::UnknownId {
                    path: display.clone(),
                    line: line_num,
                    id: id.clone(),
                });
            }
        }
        pairs.push((anchor, related));
    }
    Ok(RelationPairSet {
        pairs,
        source: display,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_file(dir: &tempfile::TempDir, name: &str, content: &str) -> std::path::PathBuf {
        let path = dir.path().join(name);
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        path
    }

    fn politics_store(dir: &tempfile::TempDir) -> CorpusStore {
        let news = write_file(
            dir,
            "news.tsv",
            "N1\tpolitics\tSenate passes the budget\tThe vote closed late.\n\
             N2\tpolitics\tCourt hears a new case\t\n\
             N3\tsports\tCup final recap\tA famous win.\n\
             N4\tpolitics\tGovernor signs the bill\tSigned at noon. More follows.\n",
        );
        load_news(&news).unwrap()
    }

    #[test]
    fn loads_articles_with_extra_columns_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let news = write_file(
            &dir,
            "news.tsv",
            "N1\tpolitics\tTrump says the Kurds 'are no angels'\tPresident Trump defended his decision.\turl\textra\n",
        );
        let store = load_news(&news).unwrap();
        assert_eq!(store.len(), 1);
        let a = store.get(&NewsId::new("N1")).unwrap();
        assert_eq!(a.category, "politics");
        assert_eq!(a.title, "Trump says the Kurds 'are no angels'");
        assert!(a.theme_topics.is_none());
    }

    #[test]
    fn empty_file_is_an_empty_store() {
        let dir = tempfile::tempdir().unwrap();
        let news = write_file(&dir, "news.tsv", "");
        let store = load_news(&news).unwrap();
        assert!(store.is_empty());
    }

    #[test]
    fn duplicate_id_errors_with_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let news = write_file(
            &dir,
            "news.tsv",
            "N1\tpolitics\tA\t\nN1\tpolitics\tB\t\n",
        );
        match load_news(&news).unwrap_err() {
            CorpusError::DuplicateId { line, id, .. } => {
                assert_eq!(line, 2);
                assert_eq!(id.as_str(), "N1");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_line_errors_with_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let news = write_file(&dir, "news.tsv", "N1\tpolitics\tT\t\nN2\tonly-two\n");
        match load_news(&news).unwrap_err() {
            CorpusError::MalformedLine { line, found, .. } => {
                assert_eq!(line, 2);
                assert_eq!(found, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_utf8_is_a_hard_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("news.tsv");
        fs::write(&path, [0x4e, 0x31, 0x09, 0xff, 0xfe]).unwrap();
        assert!(matches!(load_news(&path), Err(CorpusError::Io { .. })));
    }

    #[test]
    fn behaviors_parse_click_suffixes() {
        let dir = tempfile::tempdir().unwrap();
        let store = politics_store(&dir);
        let behaviors = write_file(
            &dir,
            "behaviors.tsv",
            "I1\tU1\t11/11/2019 10:30:00 AM\tN1 N2\tN4-1 N3-0\n",
        );
        let imps = load_behaviors(&behaviors, &store).unwrap();
        assert_eq!(imps.len(), 1);
        assert_eq!(imps[0].history, vec![NewsId::new("N1"), NewsId::new("N2")]);
        assert_eq!(
            imps[0].candidates,
            vec![
                Candidate { id: NewsId::new("N4"), clicked: true },
                Candidate { id: NewsId::new("N3"), clicked: false },
            ]
        );
    }

    #[test]
    fn behaviors_accept_empty_history() {
        let dir = tempfile::tempdir().unwrap();
        let store = politics_store(&dir);
        let behaviors = write_file(&dir, "behaviors.tsv", "I1\tU1\tts\t\tN1-1\n");
        let imps = load_behaviors(&behaviors, &store).unwrap();
        assert!(imps[0].history.is_empty());
    }

    #[test]
    fn candidate_without_suffix_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let store = politics_store(&dir);
        let behaviors = write_file(&dir, "behaviors.tsv", "I1\tU1\tts\tN1\tN2\n");
        assert!(matches!(
            load_behaviors(&behaviors, &store),
            Err(CorpusError::MissingClickLabel { .. })
        ));
    }

    #[test]
    fn unknown_history_id_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let store = politics_store(&dir);
        let behaviors = write_file(&dir, "behaviors.tsv", "I1\tU1\tts\tN9\tN1-1\n");
        assert!(matches!(
            load_behaviors(&behaviors, &store),
            Err(CorpusError::UnknownId { .. })
        ));
    }

    #[test]
    fn filter_drops_short_history_and_wrong_category() {
        let dir = tempfile::tempdir().unwrap();
        let store = politics_store(&dir);
        let behaviors = write_file(
            &dir,
            "behaviors.tsv",
            "I1\tU1\tts\tN1 N2\tN4-1\n\
             I2\tU2\tts\tN1\tN4-1\n\
             I3\tU3\tts\tN1 N2\tN3-1\n",
        );
        let imps = load_behaviors(&behaviors, &store).unwrap();
        let kept = filter_impressions(&imps, 2, 15, "politics", &store);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].impression_id, "I1");
    }

    #[test]
    fn identity_filter_keeps_everything() {
        let dir = tempfile::tempdir().unwrap();
        let store = politics_store(&dir);
        let behaviors = write_file(
            &dir,
            "behaviors.tsv",
            "I1\tU1\tts\tN1 N2\tN4-1\nI2\tU2\tts\t\tN1-0\n",
        );
        let imps = load_behaviors(&behaviors, &store).unwrap();
        // Wide-open bounds and a category all referenced articles share.
        let only_politics: Vec<Impression> = imps
            .iter()
            .filter(|i| {
                i.history.iter().chain(i.candidates.iter().map(|c| &c.id)).all(|id| {
                    store.get(id).unwrap().category == "politics"
                })
            })
            .cloned()
            .collect();
        let kept = filter_impressions(&only_politics, 0, usize::MAX, "politics", &store);
        assert_eq!(kept, only_politics);
    }

    #[test]
    fn relation_pairs_load_and_reject_self_pairs() {
        let dir = tempfile::tempdir().unwrap();
        let store = politics_store(&dir);
        let good = write_file(&dir, "pairs.tsv", "N1\tN2\nN2\tN4\n");
        let set = load_relation_pairs(&good, &store).unwrap();
        assert_eq!(set.pairs.len(), 2);
        assert_eq!(set.pairs[0], (NewsId::new("N1"), NewsId::new("N2")));

        let bad = write_file(&dir, "self.tsv", "N1\tN1\n");
        assert!(matches!(
            load_relation_pairs(&bad, &store),
            Err(CorpusError::SelfPair { .. })
        ));

        let empty = write_file(&dir, "empty.tsv", "");
        assert!(load_relation_pairs(&empty, &store).unwrap().pairs.is_empty());
    }

    #[test]
    fn theme_sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = politics_store(&dir);
        let sidecar = write_file(
            &dir,
            "themes.tsv",
            "N1\tbudget vote|fiscal policy\nN2\tcourt case with far too many words in it\n",
        );
        let n = store.apply_theme_sidecar(&sidecar).unwrap();
        assert_eq!(n, 2);
        assert_eq!(
            store.get(&NewsId::new("N1")).unwrap().theme_topics,
            Some(vec!["budget vote".to_string(), "fiscal policy".to_string()])
        );
        // Over-long phrases are truncated to five words.
        assert_eq!(
            store.get(&NewsId::new("N2")).unwrap().theme_topics,
            Some(vec!["court case with far too".to_string()])
        );

        let out = dir.path().join("themes_out.tsv");
        let written = store.write_theme_sidecar(&out).unwrap();
        assert_eq!(written, 2);
        let mut reloaded = politics_store(&dir);
        reloaded.apply_theme_sidecar(&out).unwrap();
        assert_eq!(
            reloaded.get(&NewsId::new("N1")).unwrap().theme_topics,
            store.get(&NewsId::new("N1")).unwrap().theme_topics
        );
    }

    #[test]
    fn sidecar_with_too_many_topics_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = politics_store(&dir);
        let sidecar = write_file(&dir, "themes.tsv", "N1\ta|b|c|d\n");
        assert!(matches!(
            store.apply_theme_sidecar(&sidecar),
            Err(CorpusError::BadThemeCount { found: 4, .. })
        ));
    }

    #[test]
    fn news_round_trip_preserves_fields() {
        let dir = tempfile::tempdir().unwrap();
        let store = politics_store(&dir);
        let out = dir.path().join("rewritten.tsv");
        store.write_news(&out).unwrap();
        let reloaded = load_news(&out).unwrap();
        assert_eq!(store.len(), reloaded.len());
        for (a, b) in store.iter().zip(reloaded.iter()) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.category, b.category);
            assert_eq!(a.title, b.title);
            assert_eq!(a.abstract_text, b.abstract_text);
        }
    }
}
