//! Reference-set assembly: focal news plus related news, filtered by user
//! preference and bounded in size.

use std::fs;
use std::io::{BufRead, BufReader, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusStore, Impression, NewsArticle, NewsId};
use crate::ranker::{score_pair, select_focal_for, FocalMode, RankError, RankerModel};
use crate::relation::{
    explore_related, explore_related_cached, EmbeddingCache, RelationError, RelationModel,
};
use crate::textenc::Embedding;

#[derive(Debug, Error)]
pub enum ExploreError {
    #[error("reference-set size bounds invalid: need 2 <= t_min <= t_max, got {t_min}..{t_max}")]
    BadBounds { t_min: usize, t_max: usize },
    #[error("unknown news id {0}")]
    UnknownId(NewsId),
    #[error(transparent)]
    Rank(#[from] RankError),
    #[error(transparent)]
    Relation(#[from] RelationError),
    #[error("reference-set dump i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("reference-set dump parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// One related item with its provenance scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceItem {
    pub id: NewsId,
    pub relation_score: f64,
    pub personalization_score: f64,
}

/// Focal news plus its personalized related news, `1 + related.len()`
/// bounded by `t_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceNewsSet {
    pub focal: NewsId,
    pub related: Vec<ReferenceItem>,
    pub t_max: usize,
}

impl ReferenceNewsSet {
    pub fn size(&self) -> usize {
        1 + self.related.len()
    }

    /// All source ids, focal first.
    pub fn ids(&self) -> Vec<NewsId> {
        let mut ids = Vec::with_capacity(self.size());
        ids.push(self.focal.clone());
        ids.extend(self.related.iter().map(|r| r.id.clone()));
        ids
    }

    /// Structural invariants: focal excluded from related, size within
    /// `t_max`, every relation score at or above `alpha`.
    pub fn check_invariants(&self, alpha: f64) -> Result<(), String> {
        if self.related.iter().any(|r| r.id == self.focal) {
            return Err(format!("focal {} appears in related set", self.focal));
        }
        if self.size() > self.t_max {
            return Err(format!("size {} exceeds t_max {}", self.size(), self.t_max));
        }
        for r in &self.related {
            if r.relation_score < alpha {
                return Err(format!(
                    "related {} has relation score {} below alpha {alpha}",
                    r.id, r.relation_score
                ));
            }
        }
        Ok(())
    }
}

/// Outcome of building: either a valid set or a too-small sample that the
/// caller excludes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum BuildOutcome {
    Built(ReferenceNewsSet),
    Insufficient { focal: NewsId, available: usize },
}

/// Assembly settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExplorerConfig {
    /// Relation threshold for exploration.
    pub alpha: f64,
    /// Minimum acceptable reference-set size (focal included).
    pub t_min: usize,
    /// Maximum reference-set size (focal included).
    pub t_max: usize,
    pub focal_mode: FocalMode,
    /// Drop related items the user has already read.
    pub exclude_history: bool,
}

impl Default for ExplorerConfig {
    fn default() -> Self {
        ExplorerConfig {
            alpha: 0.8,
            t_min: 3,
            t_max: 4,
            focal_mode: FocalMode::Ranked,
            exclude_history: false,
        }
    }
}

/// Top-`keep` related items by dot product with the user embedding,
/// descending, ties broken by ascending id. Relation scores are carried
/// through into the result.
pub fn personalized_filter(
    user: &Embedding,
    related: &[(NewsId, f64)],
    model: &RankerModel,
    store: &CorpusStore,
    keep: usize,
) -> Result<Vec<ReferenceItem>, ExploreError> {
    let mut items = Vec::with_capacity(related.len());
    for (id, relation_score) in related {
        let article: &NewsArticle = store
            .get(id)
            .ok_or_else(|| ExploreError::UnknownId(id.clone()))?;
        let vec = model.news_vector(article);
        items.push(ReferenceItem {
            id: id.clone(),
            relation_score: *relation_score,
            personalization_score: score_pair(user, &vec),
        });
    }
    items.sort_by(|a, b| {
        b.personalization_score
            .total_cmp(&a.personalization_score)
            .then_with(|| a.id.cmp(&b.id))
    });
    items.truncate(keep);
    Ok(items)
}

/// Builds the reference set for one impression: pick the focal news, explore
/// articles related to it, keep the `t_max - 1` best-matching ones for this
/// user, and report `Insufficient` when fewer than `t_min` sources remain.
pub fn build_reference_set(
    imp: &Impression,
    ranker: &RankerModel,
    relation: &RelationModel,
    store: &CorpusStore,
    cfg: &ExplorerConfig,
    relation_cache: Option<&EmbeddingCache>,
) -> Result<BuildOutcome, ExploreError> {
    if cfg.t_min < 2 || cfg.t_min > cfg.t_max {
        return Err(ExploreError::BadBounds {
            t_min: cfg.t_min,
            t_max: cfg.t_max,
        });
    }

    let focal = select_focal_for(ranker, imp, store, cfg.focal_mode)?;

    let mut related = match relation_cache {
        Some(cache) => explore_related_cached(&focal, store, cache, cfg.alpha)?,
        None => explore_related(&focal, store, relation, cfg.alpha)?,
    };
    if cfg.exclude_history {
        related.retain(|(id, _)| !imp.history.contains(id));
    }

    let history: Vec<&NewsArticle> = imp
        .history
        .iter()
        .map(|id| store.get(id).ok_or_else(|| ExploreError::UnknownId(id.clone())))
        .collect::<Result<_, _>>()?;
    let user = ranker.user_embedding(&history)?;

    let kept = personalized_filter(&user, &related, ranker, store, cfg.t_max - 1)?;
    if 1 + kept.len() < cfg.t_min {
        return Ok(BuildOutcome::Insufficient {
            focal,
            available: 1 + kept.len(),
        });
    }
    let set = ReferenceNewsSet {
        focal,
        related: kept,
        t_max: cfg.t_max,
    };
    debug_assert!(set.check_invariants(cfg.alpha).is_ok());
    Ok(BuildOutcome::Built(set))
}

/// One line of the reference-set dump.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferenceSetRecord {
    pub impression_id: String,
    #[serde(flatten)]
    pub outcome: BuildOutcome,
}

/// Writes one JSON record per line.
pub fn write_reference_sets(
    path: &Path,
    records: &[ReferenceSetRecord],
) -> Result<(), ExploreError> {
    let io_err = |source| ExploreError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut file = fs::File::create(path).map_err(io_err)?;
    for record in records {
        let line = serde_json::to_string(record)
            .map_err(|e| ExploreError::Parse { line: 0, message: e.to_string() })?;
        writeln!(file, "{line}").map_err(io_err)?;
    }
    Ok(())
}

pub fn read_reference_sets(path: &Path) -> Result<Vec<ReferenceSetRecord>, ExploreError> {
    let file = fs::File::open(path).map_err(|source| ExploreError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut records = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| ExploreError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| ExploreError::Parse {
            line: lineno + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}
