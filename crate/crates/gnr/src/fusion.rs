//! Narrative fusion: render the reference set and user profile into the
//! fusion prompt, complete it through the gateway, parse the reply, and
//! attach provenance.

use std::fs;
use std::io::{BufRead, BufReader, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusStore, NewsArticle, NewsId};
use crate::explorer::ReferenceNewsSet;
use crate::gateway::{
    parse_narrative_response, render_fusion_prompt, Gateway, GatewayError, Prompt, ProviderTag,
    UserInterestProfile,
};

/// Which engine produced a narrative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorTag {
    ExternalLlm,
    Stub,
    LocalGenerator,
}

impl From<ProviderTag> for GeneratorTag {
    fn from(tag: ProviderTag) -> Self {
        match tag {
            ProviderTag::Real => GeneratorTag::ExternalLlm,
            ProviderTag::Stub => GeneratorTag::Stub,
        }
    }
}

/// A fused multi-news narrative with provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Narrative {
    pub title: String,
    pub category: String,
    pub topics: Vec<String>,
    pub abstract_text: String,
    /// Reference-set ids, focal first.
    pub source_ids: Vec<NewsId>,
    pub generator: GeneratorTag,
    pub prompt_hash: String,
}

#[derive(Debug, Error)]
pub enum FusionError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("unknown news id {0}")]
    UnknownId(NewsId),
    #[error("narrative parse failed twice; first response: {first:?}; retry response: {second:?}")]
    UnparseableNarrative { first: String, second: String },
    #[error("narrative dump i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("narrative dump parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

const FORMAT_REMINDER: &str = "Reminder: answer with exactly one record of the form \
{\"title\": \"...\", \"category\": \"...\", \"topics\": \"...\", \"abstract\": \"...\"} \
with non-empty title and abstract.";

/// Fuses one reference set into a narrative. A response that fails to parse
/// is re-asked once with a format reminder appended; a second failure is an
/// error carrying both raw responses.
pub fn fuse_narrative(
    ref_set: &ReferenceNewsSet,
    profile: &UserInterestProfile,
    gateway: &Gateway,
    store: &CorpusStore,
) -> Result<Narrative, FusionError> {
    let focal = store
        .get(&ref_set.focal)
        .ok_or_else(|| FusionError::UnknownId(ref_set.focal.clone()))?;
    let related: Vec<&NewsArticle> = ref_set
        .related
        .iter()
        .map(|r| store.get(&r.id).ok_or_else(|| FusionError::UnknownId(r.id.clone())))
        .collect::<Result<_, _>>()?;

    let prompt = render_fusion_prompt(focal, &related, profile);
    let exchange = gateway.complete(&prompt)?;

    let (draft, exchange) = match parse_narrative_response(&exchange.response) {
        Ok(draft) => (draft, exchange),
        Err(_) => {
            let retry_prompt = Prompt {
                system: prompt.system.clone(),
                user: format!("{}\n{FORMAT_REMINDER}", prompt.user),
            };
            let retry = gateway.complete(&retry_prompt)?;
            match parse_narrative_response(&retry.response) {
                Ok(draft) => (draft, retry),
                Err(_) => {
                    return Err(FusionError::UnparseableNarrative {
                        first: exchange.response,
                        second: retry.response,
                    })
                }
            }
        }
    };

    let category = if draft.category.is_empty() {
        focal.category.clone()
    } else {
        draft.category
    };
    Ok(Narrative {
        title: draft.title,
        category,
        topics: draft.topics,
        abstract_text: draft.abstract_text,
        source_ids: ref_set.ids(),
        generator: exchange.provider.into(),
        prompt_hash: exchange.prompt_hash,
    })
}

/// One line of the narrative dump.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NarrativeRecord {
    pub impression_id: String,
    #[serde(flatten)]
    pub narrative: Narrative,
}

pub fn write_narratives(path: &Path, records: &[NarrativeRecord]) -> Result<(), FusionError> {
    let io_err = |source| FusionError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut file = fs::File::create(path).map_err(io_err)?;
    for record in records {
        let line = serde_json::to_string(record)
            .map_err(|e| FusionError::Parse { line: 0, message: e.to_string() })?;
        writeln!(file, "{line}").map_err(io_err)?;
    }
    Ok(())
}

pub fn read_narratives(path: &Path) -> Result<Vec<NarrativeRecord>, FusionError> {
    let file = fs::File::open(path).map_err(|source| FusionError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut records = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| FusionError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|e| FusionError::Parse {
            line: lineno + 1,
            message: e.to_string(),
        })?);
    }
    Ok(records)
}
