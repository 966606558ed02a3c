//! Typed checkpoints for the three model kinds. Each file carries a header
//! (model kind, dimensions, view modes, seed, vocabulary) plus the common
//! tensor blob; loading rebuilds the model from the header and then
//! validates every tensor shape.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ranker::{RankerModel, ViewMode};
use crate::relation::RelationModel;
use crate::textenc::{EncoderConfig, Vocabulary};
use crate::textgen::{GeneratorConfig, TinyGenerator};
use crate::weights::{self, WeightsError};

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Weights(#[from] WeightsError),
    #[error("checkpoint is a {found} model, expected {expected}")]
    WrongKind { expected: &'static str, found: String },
}

#[derive(Debug, Deserialize)]
struct KindProbe {
    kind: String,
}

fn check_kind(path: &Path, expected: &'static str) -> Result<(), CheckpointError> {
    let probe: KindProbe = weights::peek_header(path)?;
    if probe.kind != expected {
        return Err(CheckpointError::WrongKind { expected, found: probe.kind });
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct RankerHeader {
    kind: String,
    encoder: EncoderConfig,
    news_view: ViewMode,
    user_view: ViewMode,
    k_neg: usize,
    seed: u64,
    vocab: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RelationHeader {
    kind: String,
    encoder: EncoderConfig,
    seed: u64,
    vocab: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct GeneratorHeader {
    kind: String,
    generator: GeneratorConfig,
    seed: u64,
    /// Full token list including specials, so indices round trip exactly.
    tokens: Vec<String>,
}

pub fn save_ranker(path: &Path, model: &RankerModel) -> Result<(), CheckpointError> {
    let header = RankerHeader {
        kind: "ranker".into(),
        encoder: model.config,
        news_view: model.news_view,
        user_view: model.user_view,
        k_neg: model.k_neg,
        seed: model.seed,
        vocab: model.vocab.content_tokens().to_vec(),
    };
    weights::save(path, &header, model)?;
    Ok(())
}

pub fn load_ranker(path: &Path) -> Result<RankerModel, CheckpointError> {
    check_kind(path, "ranker")?;
    let header: RankerHeader = weights::peek_header(path)?;
    let vocab = Vocabulary::from_tokens(header.vocab.clone());
    let mut model = RankerModel::new(
        vocab,
        header.encoder,
        header.news_view,
        header.user_view,
        header.seed,
    );
    model.k_neg = header.k_neg;
    let _: RankerHeader = weights::load(path, &mut model)?;
    Ok(model)
}

pub fn save_relation(path: &Path, model: &RelationModel) -> Result<(), CheckpointError> {
    let header = RelationHeader {
        kind: "relation".into(),
        encoder: model.config,
        seed: model.seed,
        vocab: model.vocab.content_tokens().to_vec(),
    };
    weights::save(path, &header, model)?;
    Ok(())
}

pub fn load_relation(path: &Path) -> Result<RelationModel, CheckpointError> {
    check_kind(path, "relation")?;
    let header: RelationHeader = weights::peek_header(path)?;
    let vocab = Vocabulary::from_tokens(header.vocab.clone());
    let mut model = RelationModel::new(vocab, header.encoder, header.seed);
    let _: RelationHeader = weights::load(path, &mut model)?;
    Ok(model)
}

pub fn save_generator(path: &Path, model: &TinyGenerator) -> Result<(), CheckpointError> {
    let header = GeneratorHeader {
        kind: "generator".into(),
        generator: model.config,
        seed: model.seed,
        tokens: model.vocab.content_tokens().to_vec(),
    };
    weights::save(path, &header, model)?;
    Ok(())
}

pub fn load_generator(path: &Path) -> Result<TinyGenerator, CheckpointError> {
    check_kind(path, "generator")?;
    let header: GeneratorHeader = weights::peek_header(path)?;
    let vocab = Vocabulary::from_tokens(header.tokens.clone());
    let mut model = TinyGenerator::new(vocab, header.generator, header.seed);
    let _: GeneratorHeader = weights::load(path, &mut model)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::TensorCollection;

    fn bits_of<P: TensorCollection>(p: &P) -> Vec<Vec<u64>> {
        p.tensors()
            .iter()
            .map(|(_, t)| t.iter().map(|x| x.to_bits()).collect())
            .collect()
    }

    #[test]
    fn ranker_checkpoint_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ranker.gnrw");
        let vocab = Vocabulary::from_tokens(vec!["alpha".into(), "beta".into()]);
        let config = EncoderConfig { dim: 8, heads: 2, max_text_len: 6, max_theme_len: 4, min_token_freq: 1 };
        let mut model = RankerModel::new(vocab, config, ViewMode::Dual, ViewMode::Semantic, 9);
        model.k_neg = 7;
        save_ranker(&path, &model).unwrap();

        let loaded = load_ranker(&path).unwrap();
        assert_eq!(bits_of(&model), bits_of(&loaded));
        assert_eq!(loaded.news_view, ViewMode::Dual);
        assert_eq!(loaded.user_view, ViewMode::Semantic);
        assert_eq!(loaded.k_neg, 7);
        assert_eq!(loaded.seed, 9);
        assert_eq!(loaded.vocab.content_tokens(), model.vocab.content_tokens());
    }

    #[test]
    fn relation_checkpoint_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("relation.gnrw");
        let vocab = Vocabulary::from_tokens(vec!["alpha".into()]);
        let config = EncoderConfig { dim: 8, heads: 2, max_text_len: 6, max_theme_len: 4, min_token_freq: 1 };
        let model = RelationModel::new(vocab, config, 4);
        save_relation(&path, &model).unwrap();
        let loaded = load_relation(&path).unwrap();
        assert_eq!(bits_of(&model), bits_of(&loaded));
        assert_eq!(model.fingerprint(), loaded.fingerprint());
    }

    #[test]
    fn generator_checkpoint_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("generator.gnrw");
        let vocab = crate::textgen::build_generator_vocab(["alpha beta gamma"], 1);
        let config = GeneratorConfig { dim: 8, heads: 2, context: 16, min_token_freq: 1 };
        let model = TinyGenerator::new(vocab, config, 3);
        save_generator(&path, &model).unwrap();
        let loaded = load_generator(&path).unwrap();
        assert_eq!(bits_of(&model), bits_of(&loaded));
        let p1 = model.seq_logprob_norm("alpha", "beta gamma").unwrap();
        let p2 = loaded.seq_logprob_norm("alpha", "beta gamma").unwrap();
        assert_eq!(p1.to_bits(), p2.to_bits());
    }

    #[test]
    fn kind_mismatch_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.gnrw");
        let vocab = Vocabulary::from_tokens(vec!["alpha".into()]);
        let config = EncoderConfig { dim: 8, heads: 2, max_text_len: 6, max_theme_len: 4, min_token_freq: 1 };
        let model = RelationModel::new(vocab, config, 4);
        save_relation(&path, &model).unwrap();
        assert!(matches!(
            load_ranker(&path),
            Err(CheckpointError::WrongKind { .. })
        ));
    }

    #[test]
    fn truncated_checkpoint_fails_to_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("relation.gnrw");
        let vocab = Vocabulary::from_tokens(vec!["alpha".into()]);
        let config = EncoderConfig { dim: 8, heads: 2, max_text_len: 6, max_theme_len: 4, min_token_freq: 1 };
        let model = RelationModel::new(vocab, config, 4);
        save_relation(&path, &model).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 40]).unwrap();
        assert!(load_relation(&path).is_err());
    }
}
