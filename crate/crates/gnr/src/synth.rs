//! Seeded synthetic corpora for offline runs and trend experiments.
//!
//! The generated world has two latent reader factions. Faction markers
//! appear only in theme sidecars, never in titles or abstracts, while event
//! vocabulary appears in both. Clicks follow the reader's faction, so a
//! ranker that uses theme information can separate clicks that a text-only
//! ranker cannot.

use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::align::NarrativeTriple;
use crate::corpus::{Candidate, CorpusStore, Impression, NewsArticle, NewsId, RelationPairSet};

const NEUTRAL_WORDS: &[&str] = &[
    "committee", "session", "measure", "statement", "remarks", "officials", "spokesperson",
    "briefing", "analysts", "capital", "chamber", "delegates", "draft", "proposal", "review",
    "schedule", "agenda", "process", "margin", "support", "opposition", "amendment", "clause",
    "debate", "floor", "motion", "quorum", "record", "roll", "memo", "panel", "staff", "term",
    "week", "plan", "talks", "update", "response", "question", "answer",
];

const EVENT_NAMES: &[(&str, &str)] = &[
    ("tariff", "trade"),
    ("border", "enforcement"),
    ("budget", "vote"),
    ("court", "nominee"),
    ("treaty", "summit"),
    ("election", "recount"),
    ("senate", "hearing"),
    ("census", "count"),
    ("veto", "override"),
    ("ethics", "probe"),
    ("transit", "funding"),
    ("pension", "reform"),
    ("water", "rights"),
    ("energy", "grid"),
    ("farm", "subsidy"),
    ("housing", "bill"),
];

/// Faction marker phrases; these words never enter article text.
const FACTION_PHRASES: [&str; 2] = ["crimson caucus agenda", "azure caucus agenda"];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub events: usize,
    pub articles_per_event: usize,
    pub train_impressions: usize,
    pub eval_impressions: usize,
    pub min_history: usize,
    pub max_history: usize,
    pub clicked_per_impression: usize,
    pub negatives_per_impression: usize,
    pub relation_pairs: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            events: 12,
            articles_per_event: 3,
            train_impressions: 12,
            eval_impressions: 6,
            min_history: 5,
            max_history: 8,
            clicked_per_impression: 1,
            negatives_per_impression: 4,
            relation_pairs: 30,
            seed: 17,
        }
    }
}

/// A generated corpus: annotated store, behavior splits, relation pairs.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub store: CorpusStore,
    pub train: Vec<Impression>,
    pub eval: Vec<Impression>,
    pub pairs: RelationPairSet,
    /// Faction index per article, aligned with store order.
    pub factions: Vec<usize>,
}

struct ArticleSpec {
    id: String,
    event: usize,
    faction: usize,
    title: String,
    abstract_text: String,
    themes: Vec<String>,
}

fn sample_words(rng: &mut ChaCha8Rng, count: usize) -> Vec<&'static str> {
    (0..count)
        .map(|_| NEUTRAL_WORDS[rng.gen_range(0..NEUTRAL_WORDS.len())])
        .collect()
}

fn make_article(rng: &mut ChaCha8Rng, index: usize, event: usize, faction: usize) -> ArticleSpec {
    let (kw1, kw2) = EVENT_NAMES[event % EVENT_NAMES.len()];
    let title_len = rng.gen_range(4..=6);
    let mut title_words = sample_words(rng, title_len);
    let insert_at = rng.gen_range(0..=title_words.len());
    title_words.insert(insert_at, kw2);
    title_words.insert(insert_at, kw1);
    let title = title_words.join(" ");

    let a = sample_words(rng, 3);
    let b = sample_words(rng, 3);
    let abstract_text = format!(
        "The {} {} discussed the {kw1} {kw2} {}. Officials expect further {} on the {} {}.",
        a[0], a[1], a[2], b[0], b[1], b[2]
    );

    ArticleSpec {
        id: format!("S{index:03}"),
        event,
        faction,
        title,
        abstract_text,
        themes: vec![
            format!("{kw1} {kw2} debate"),
            FACTION_PHRASES[faction].to_string(),
        ],
    }
}

/// Generates a faction-structured corpus with the given shape.
pub fn generate(cfg: &SynthConfig) -> SynthCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut specs = Vec::new();
    let mut index = 0;
    for event in 0..cfg.events {
        for _ in 0..cfg.articles_per_event {
            let faction = rng.gen_range(0..2);
            specs.push(make_article(&mut rng, index, event, faction));
            index += 1;
        }
    }
    // Both factions must be populated enough for histories.
    for faction in 0..2 {
        let count = specs.iter().filter(|s| s.faction == faction).count();
        assert!(
            count > cfg.max_history,
            "faction {faction} has only {count} articles; enlarge the corpus"
        );
    }

    let mut store = CorpusStore::new();
    let mut factions = Vec::new();
    for spec in &specs {
        store
            .insert_article(NewsArticle {
                id: NewsId::new(spec.id.clone()),
                category: "politics".into(),
                title: spec.title.clone(),
                abstract_text: spec.abstract_text.clone(),
                theme_topics: Some(spec.themes.clone()),
            })
            .expect("generated ids are unique");
        factions.push(spec.faction);
    }

    let by_faction: [Vec<usize>; 2] = [
        (0..specs.len()).filter(|&i| specs[i].faction == 0).collect(),
        (0..specs.len()).filter(|&i| specs[i].faction == 1).collect(),
    ];

    let make_impression = |rng: &mut ChaCha8Rng, serial: usize| -> Impression {
        let faction = rng.gen_range(0..2usize);
        let own = &by_faction[faction];
        let other = &by_faction[1 - faction];

        let history_len = rng.gen_range(cfg.min_history..=cfg.max_history);
        let mut pool = own.clone();
        shuffle(&mut pool, rng);
        let history: Vec<NewsId> = pool[..history_len]
            .iter()
            .map(|&i| NewsId::new(specs[i].id.clone()))
            .collect();

        let mut candidates = Vec::new();
        for &i in pool[history_len..history_len + cfg.clicked_per_impression].iter() {
            candidates.push(Candidate {
                id: NewsId::new(specs[i].id.clone()),
                clicked: true,
            });
        }
        let mut neg_pool = other.clone();
        shuffle(&mut neg_pool, rng);
        for &i in neg_pool[..cfg.negatives_per_impression].iter() {
            candidates.push(Candidate {
                id: NewsId::new(specs[i].id.clone()),
                clicked: false,
            });
        }
        shuffle(&mut candidates, rng);

        Impression {
            impression_id: format!("I{serial:04}"),
            user_id: format!("U{serial:03}"),
            timestamp: "11/11/2019 00:00:00".into(),
            history,
            candidates,
        }
    };

    let train: Vec<Impression> = (0..cfg.train_impressions)
        .map(|s| make_impression(&mut rng, s))
        .collect();
    let eval: Vec<Impression> = (0..cfg.eval_impressions)
        .map(|s| make_impression(&mut rng, cfg.train_impressions + s))
        .collect();

    // Same-event pairs, shuffled, truncated.
    let mut all_pairs = Vec::new();
    for event in 0..cfg.events {
        let members: Vec<usize> = (0..specs.len()).filter(|&i| specs[i].event == event).collect();
        for (pos, &a) in members.iter().enumerate() {
            for &b in &members[pos + 1..] {
                all_pairs.push((
                    NewsId::new(specs[a].id.clone()),
                    NewsId::new(specs[b].id.clone()),
                ));
            }
        }
    }
    shuffle(&mut all_pairs, &mut rng);
    all_pairs.truncate(cfg.relation_pairs);

    SynthCorpus {
        store,
        train,
        eval,
        pairs: RelationPairSet {
            pairs: all_pairs,
            source: "synthetic".into(),
        },
        factions,
    }
}

fn shuffle<T>(items: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

/// Materializes the corpus as the flat-file formats.
pub fn write_files(corpus: &SynthCorpus, dir: &Path) -> std::io::Result<()> {
    use std::fmt::Write as _;

    let mut news = String::new();
    let mut themes = String::new();
    for article in corpus.store.iter() {
        writeln!(
            news,
            "{}\t{}\t{}\t{}",
            article.id, article.category, article.title, article.abstract_text
        )
        .unwrap();
        if let Some(topics) = &article.theme_topics {
            writeln!(themes, "{}\t{}", article.id, topics.join("|")).unwrap();
        }
    }
    std::fs::write(dir.join("news.tsv"), news)?;
    std::fs::write(dir.join("themes.tsv"), themes)?;

    let behaviors = |imps: &[Impression]| {
        let mut out = String::new();
        for imp in imps {
            let history = imp
                .history
                .iter()
                .map(|id| id.as_str().to_string())
                .collect::<Vec<_>>()
                .join(" ");
            let candidates = imp
                .candidates
                .iter()
                .map(|c| format!("{}-{}", c.id, if c.clicked { 1 } else { 0 }))
                .collect::<Vec<_>>()
                .join(" ");
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                imp.impression_id, imp.user_id, imp.timestamp, history, candidates
            )
            .unwrap();
        }
        out
    };
    std::fs::write(dir.join("behaviors.tsv"), behaviors(&corpus.train))?;
    std::fs::write(dir.join("behaviors_eval.tsv"), behaviors(&corpus.eval))?;

    let mut pairs = String::new();
    for (a, b) in &corpus.pairs.pairs {
        writeln!(pairs, "{a}\t{b}").unwrap();
    }
    std::fs::write(dir.join("relation_pairs.tsv"), pairs)?;
    Ok(())
}

/// Shape of a synthetic preference-triple set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TripleSynthConfig {
    pub train: usize,
    pub held_out: usize,
    pub words_per_text: usize,
    pub seed: u64,
}

impl Default for TripleSynthConfig {
    fn default() -> Self {
        TripleSynthConfig {
            train: 50,
            held_out: 20,
            words_per_text: 8,
            seed: 23,
        }
    }
}

/// Triples whose rank-1 texts share a distinctive token family, with fixed
/// ranks (ours=1, teacher=2, focal=3).
pub fn generate_triples(cfg: &TripleSynthConfig) -> (Vec<NarrativeTriple>, Vec<NarrativeTriple>) {
    const OURS_POOL: &[&str] = &["quartz", "prism", "lattice", "facet", "crystal"];
    const TEACHER_POOL: &[&str] = &["marble", "column", "arch", "plinth", "frieze"];
    const FOCAL_POOL: &[&str] = &["granite", "slab", "ridge", "quarry", "bedrock"];
    const CONDITION_POOL: &[&str] = &["report", "update", "notice", "digest", "brief"];

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sentence = |pool: &[&str], len: usize, rng: &mut ChaCha8Rng| {
        (0..len)
            .map(|_| pool[rng.gen_range(0..pool.len())])
            .collect::<Vec<_>>()
            .join(" ")
    };
    let make = |rng: &mut ChaCha8Rng| NarrativeTriple {
        condition: sentence(CONDITION_POOL, 4, rng),
        ours: sentence(OURS_POOL, cfg.words_per_text, rng),
        teacher: sentence(TEACHER_POOL, cfg.words_per_text, rng),
        focal: sentence(FOCAL_POOL, cfg.words_per_text, rng),
        ranks: Some([1, 2, 3]),
    };
    let train = (0..cfg.train).map(|_| make(&mut rng)).collect();
    let held_out = (0..cfg.held_out).map(|_| make(&mut rng)).collect();
    (train, held_out)
}
