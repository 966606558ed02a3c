//! Narrative evaluation: win rate against the focal news and consistency
//! rate against the reference set.

use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusStore, Impression, NewsArticle, NewsId};
use crate::eval::metrics::EvalError;
use crate::explorer::ReferenceNewsSet;
use crate::fusion::Narrative;
use crate::gateway::{Gateway, Prompt};
use crate::ranker::{score_pair, RankerModel, ViewMode};
use crate::text::extractively_consistent;

/// Win-rate counts; the percentage is the exact ratio of wins to cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinRateReport {
    pub percent: f64,
    pub wins: usize,
    pub ties: usize,
    pub losses: usize,
}

impl WinRateReport {
    pub fn total(&self) -> usize {
        self.wins + self.ties + self.losses
    }
}

/// Wraps a narrative as a pseudo-article so the recommender can score it.
pub fn narrative_as_article(narrative: &Narrative) -> NewsArticle {
    NewsArticle {
        id: NewsId::new("narrative"),
        category: narrative.category.clone(),
        title: narrative.title.clone(),
        abstract_text: narrative.abstract_text.clone(),
        theme_topics: if narrative.topics.is_empty() {
            None
        } else {
            Some(narrative.topics.clone())
        },
    }
}

/// Scores each narrative and its focal article through the dual-level path
/// against the impression's user embedding; a win requires the narrative to
/// strictly surpass the focal.
pub fn win_rate(
    narratives: &[Narrative],
    focal_articles: &[&NewsArticle],
    recommender: &RankerModel,
    contexts: &[&Impression],
    store: &CorpusStore,
) -> Result<WinRateReport, EvalError> {
    if narratives.len() != focal_articles.len() {
        return Err(EvalError::Misaligned {
            left: narratives.len(),
            right: focal_articles.len(),
        });
    }
    if narratives.len() != contexts.len() {
        return Err(EvalError::Misaligned {
            left: narratives.len(),
            right: contexts.len(),
        });
    }
    if narratives.is_empty() {
        return Err(EvalError::Empty);
    }

    let mut wins = 0;
    let mut ties = 0;
    let mut losses = 0;
    for ((narrative, focal), imp) in narratives.iter().zip(focal_articles).zip(contexts) {
        let history: Vec<&NewsArticle> = imp
            .history
            .iter()
            .filter_map(|id| store.get(id))
            .collect();
        let user = recommender
            .user_embedding_view(&history, ViewMode::Dual)
            .map_err(|_| EvalError::NoCandidates(0))?;
        let narrative_vec = recommender.dual_embedding(&narrative_as_article(narrative)).dual;
        let focal_vec = recommender.dual_embedding(focal).dual;
        let n_score = score_pair(&user, &narrative_vec);
        let f_score = score_pair(&user, &focal_vec);
        if n_score > f_score {
            wins += 1;
        } else if n_score == f_score {
            ties += 1;
        } else {
            losses += 1;
        }
    }
    Ok(WinRateReport {
        percent: 100.0 * wins as f64 / narratives.len() as f64,
        wins,
        ties,
        losses,
    })
}

/// How each (reference set, narrative) pair was judged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeOutcome {
    Consistent,
    Inconsistent,
    JudgeFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    /// Percent of judged pairs found consistent; judge failures are not
    /// judged pairs.
    pub percent: f64,
    pub consistent: usize,
    pub inconsistent: usize,
    pub judge_failures: usize,
    pub outcomes: Vec<JudgeOutcome>,
}

/// The consistency judge: a deterministic extractive check, or a
/// chat-completion provider answering yes/no at temperature zero.
pub enum Judge<'a> {
    Builtin,
    Llm(&'a Gateway),
}

/// Sentences the judge compares: the title as one sentence plus the
/// abstract's sentences.
fn judged_sentences(title: &str, abstract_text: &str) -> Vec<String> {
    let mut sentences = vec![title.to_string()];
    sentences.extend(crate::text::split_sentences(abstract_text));
    sentences
}

/// Prompt for the LLM judge.
pub fn render_consistency_prompt(sources: &[&NewsArticle], narrative: &Narrative) -> Prompt {
    let mut user = String::from("Source articles:\n");
    for article in sources {
        user.push_str(&format!(
            "{{\"title\": \"{}\", \"abstract\": \"{}\"}}\n",
            crate::gateway::prompt::escape_field(&article.title),
            crate::gateway::prompt::escape_field(&article.abstract_text),
        ));
    }
    user.push_str("Summary:\n");
    user.push_str(&format!(
        "{{\"title\": \"{}\", \"abstract\": \"{}\"}}\n",
        crate::gateway::prompt::escape_field(&narrative.title),
        crate::gateway::prompt::escape_field(&narrative.abstract_text),
    ));
    user.push_str("Is every statement in the summary supported by the source articles? Answer yes or no.");
    Prompt {
        system: "You check whether a news summary is factually consistent with its source \
                 articles. Answer yes or no."
            .to_string(),
        user,
    }
}

/// Judges each aligned (reference set, narrative) pair. Transport failures
/// and unparseable judge replies count as judge failures, never as
/// inconsistent.
pub fn consistency_rate(
    ref_sets: &[ReferenceNewsSet],
    narratives: &[Narrative],
    store: &CorpusStore,
    judge: Judge<'_>,
) -> Result<ConsistencyReport, EvalError> {
    if ref_sets.len() != narratives.len() {
        return Err(EvalError::Misaligned {
            left: ref_sets.len(),
            right: narratives.len(),
        });
    }
    if ref_sets.is_empty() {
        return Err(EvalError::Empty);
    }

    let mut outcomes = Vec::with_capacity(ref_sets.len());
    for (set, narrative) in ref_sets.iter().zip(narratives) {
        let sources: Vec<&NewsArticle> = set.ids().iter().filter_map(|id| store.get(id)).collect();
        let outcome = match &judge {
            Judge::Builtin => {
                let source_sentences: Vec<String> = sources
                    .iter()
                    .flat_map(|a| judged_sentences(&a.title, &a.abstract_text))
                    .collect();
                let narrative_sentences =
                    judged_sentences(&narrative.title, &narrative.abstract_text);
                let ok = narrative_sentences.iter().all(|sentence| {
                    extractively_consistent(&source_sentences, sentence)
                });
                if ok {
                    JudgeOutcome::Consistent
                } else {
                    JudgeOutcome::Inconsistent
                }
            }
            Judge::Llm(gateway) => {
                let prompt = render_consistency_prompt(&sources, narrative);
                match gateway.complete(&prompt) {
                    Ok(exchange) => parse_yes_no(&exchange.response),
                    Err(_) => JudgeOutcome::JudgeFailure,
                }
            }
        };
        outcomes.push(outcome);
    }

    let consistent = outcomes.iter().filter(|o| **o == JudgeOutcome::Consistent).count();
    let inconsistent = outcomes.iter().filter(|o| **o == JudgeOutcome::Inconsistent).count();
    let judge_failures = outcomes.iter().filter(|o| **o == JudgeOutcome::JudgeFailure).count();
    let judged = consistent + inconsistent;
    Ok(ConsistencyReport {
        percent: if judged == 0 {
            0.0
        } else {
            100.0 * consistent as f64 / judged as f64
        },
        consistent,
        inconsistent,
        judge_failures,
        outcomes,
    })
}

fn parse_yes_no(response: &str) -> JudgeOutcome {
    let lower = response.trim().to_lowercase();
    if lower.starts_with("yes") {
        JudgeOutcome::Consistent
    } else if lower.starts_with("no") {
        JudgeOutcome::Inconsistent
    } else {
        JudgeOutcome::JudgeFailure
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explorer::ReferenceItem;
    use crate::fusion::{fuse_narrative, GeneratorTag};
    use crate::gateway::UserInterestProfile;
    use crate::ranker::build_vocabulary;
    use crate::textenc::EncoderConfig;

    fn store_with(articles: &[(&str, &str, &str)]) -> CorpusStore {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("news.tsv");
        let mut text = String::new();
        for (id, title, abstract_text) in articles {
            text.push_str(&format!("{id}\tpolitics\t{title}\t{abstract_text}\n"));
        }
        std::fs::write(&path, text).unwrap();
        crate::corpus::load_news(&path).unwrap()
    }

    fn ref_set(focal: &str, related: &[&str]) -> ReferenceNewsSet {
        ReferenceNewsSet {
            focal: NewsId::new(focal),
            related: related
                .iter()
                .map(|id| ReferenceItem {
                    id: NewsId::new(*id),
                    relation_score: 0.9,
                    personalization_score: 0.1,
                })
                .collect(),
            t_max: 4,
        }
    }

    fn model(store: &CorpusStore) -> RankerModel {
        let vocab = build_vocabulary(store, 1);
        let config = EncoderConfig {
            dim: 16,
            heads: 2,
            max_text_len: 12,
            max_theme_len: 4,
            min_token_freq: 1,
        };
        RankerModel::new(vocab, config, ViewMode::Dual, ViewMode::Dual, 17)
    }

    fn imp(history: &[&str]) -> Impression {
        Impression {
            impression_id: "I".into(),
            user_id: "U".into(),
            timestamp: "t".into(),
            history: history.iter().map(|s| NewsId::new(*s)).collect(),
            candidates: vec![crate::corpus::Candidate {
                id: NewsId::new(history[0]),
                clicked: true,
            }],
        }
    }

    fn narrative_from(article: &NewsArticle) -> Narrative {
        Narrative {
            title: article.title.clone(),
            category: article.category.clone(),
            topics: vec![],
            abstract_text: article.abstract_text.clone(),
            source_ids: vec![article.id.clone()],
            generator: GeneratorTag::Stub,
            prompt_hash: "h".into(),
        }
    }

    #[test]
    fn identical_narrative_and_focal_tie_and_do_not_win() {
        let store = store_with(&[
            ("F", "Senate passes the budget", "The chamber voted late."),
            ("H", "History piece", "Older text."),
        ]);
        let m = model(&store);
        let focal = store.get(&NewsId::new("F")).unwrap();
        let narrative = narrative_from(focal);
        let context = imp(&["H"]);
        let report = win_rate(&[narrative], &[focal], &m, &[&context], &store).unwrap();
        assert_eq!(report.wins, 0);
        assert_eq!(report.ties, 1);
        assert_eq!(report.losses, 0);
        assert_eq!(report.percent, 0.0);
    }

    #[test]
    fn win_rate_percent_is_the_exact_ratio() {
        let store = store_with(&[
            ("F", "Senate passes the budget", "The chamber voted late."),
            ("G", "Court opens a case", "Arguments begin."),
            ("H", "History piece", "Older text."),
        ]);
        let m = model(&store);
        let f = store.get(&NewsId::new("F")).unwrap();
        let g = store.get(&NewsId::new("G")).unwrap();
        let context = imp(&["H"]);
        let narratives = vec![narrative_from(f), narrative_from(g), narrative_from(f)];
        let focals = vec![f, g, f];
        let contexts = vec![&context, &context, &context];
        let report = win_rate(&narratives, &focals, &m, &contexts, &store).unwrap();
        assert_eq!(report.total(), 3);
        assert!((report.percent - 100.0 * report.wins as f64 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn misaligned_inputs_are_rejected() {
        let store = store_with(&[("F", "T", "A."), ("H", "H", "B.")]);
        let m = model(&store);
        let f = store.get(&NewsId::new("F")).unwrap();
        let context = imp(&["H"]);
        assert!(matches!(
            win_rate(&[narrative_from(f)], &[f, f], &m, &[&context], &store),
            Err(EvalError::Misaligned { .. })
        ));
    }

    #[test]
    fn stub_fused_narratives_are_fully_consistent_under_the_builtin_judge() {
        let store = store_with(&[
            ("F", "Senate passes the budget", "The chamber voted late. Leaders cheered."),
            ("R1", "Governor reacts to budget", "The governor praised the deal."),
        ]);
        let set = ref_set("F", &["R1"]);
        let profile = UserInterestProfile {
            user_key: "U".into(),
            categories: vec!["politics".into()],
            topics: vec![],
            supporting: vec![],
        };
        let narrative =
            fuse_narrative(&set, &profile, &Gateway::stub(0), &store).unwrap();
        let report =
            consistency_rate(&[set], &[narrative], &store, Judge::Builtin).unwrap();
        assert_eq!(report.percent, 100.0);
        assert_eq!(report.consistent, 1);
        assert_eq!(report.judge_failures, 0);
    }

    #[test]
    fn injected_foreign_sentence_is_inconsistent() {
        let store = store_with(&[
            ("F", "Senate passes the budget", "The chamber voted late."),
        ]);
        let set = ref_set("F", &[]);
        let mut narrative = narrative_from(store.get(&NewsId::new("F")).unwrap());
        narrative.abstract_text.push_str(" Purple dragons endorsed the amendment overwhelmingly.");
        let report =
            consistency_rate(&[set], &[narrative], &store, Judge::Builtin).unwrap();
        assert_eq!(report.inconsistent, 1);
        assert_eq!(report.percent, 0.0);
    }

    #[test]
    fn llm_judge_through_the_stub_matches_the_builtin() {
        let store = store_with(&[
            ("F", "Senate passes the budget", "The chamber voted late."),
        ]);
        let set = ref_set("F", &[]);
        let good = narrative_from(store.get(&NewsId::new("F")).unwrap());
        let mut bad = good.clone();
        bad.abstract_text = "Purple dragons endorsed the amendment overwhelmingly.".into();

        let gateway = Gateway::stub(0);
        let report = consistency_rate(
            &[set.clone(), set],
            &[good, bad],
            &store,
            Judge::Llm(&gateway),
        )
        .unwrap();
        assert_eq!(report.consistent, 1);
        assert_eq!(report.inconsistent, 1);
        assert_eq!(report.percent, 50.0);
    }

    #[test]
    fn unparseable_judge_reply_counts_as_failure_not_inconsistent() {
        assert_eq!(parse_yes_no("Yes."), JudgeOutcome::Consistent);
        assert_eq!(parse_yes_no("no, it invents facts"), JudgeOutcome::Inconsistent);
        assert_eq!(parse_yes_no("maybe?"), JudgeOutcome::JudgeFailure);
    }
}
