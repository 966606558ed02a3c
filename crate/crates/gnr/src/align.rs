//! Preference alignment of the narrative generator: length-normalized
//! sequence log-probabilities are pushed to agree with a per-sample
//! preference ranking through a pairwise hinge.
//!
//! Candidates carry one of three roles: `ours` (this pipeline's narrative),
//! `teacher` (the external-LLM narrative used for supervised fine-tuning),
//! and `focal` (the focal article itself). The better-ranked candidate of a
//! pair is trained to have the higher normalized log-probability.

use std::fs;
use std::io::{BufRead, BufReader, Write as _};
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusStore, Impression, NewsArticle, NewsId};
use crate::optim::{OptimKind, Optimizer};
use crate::ranker::{score_pair, RankError, RankerModel};
use crate::tensor::TensorCollection;
use crate::textgen::{GeneratorError, TinyGenerator};

pub const ROLE_COUNT: usize = 3;

/// Candidate roles in fixed tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Ours,
    Teacher,
    Focal,
}

pub const ROLES: [Role; ROLE_COUNT] = [Role::Ours, Role::Teacher, Role::Focal];

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("ranks {0:?} are not a permutation of 1..=3")]
    BadRanks([usize; ROLE_COUNT]),
    #[error("no triples to train on")]
    NoTriples,
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Rank(#[from] RankError),
    #[error("triple file i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("triple file parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// One preference sample: a condition, three candidate texts in role order,
/// and optionally precomputed ranks (1 = most preferred).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NarrativeTriple {
    pub condition: String,
    pub ours: String,
    pub teacher: String,
    pub focal: String,
    pub ranks: Option<[usize; ROLE_COUNT]>,
}

impl NarrativeTriple {
    pub fn texts(&self) -> [&str; ROLE_COUNT] {
        [&self.ours, &self.teacher, &self.focal]
    }
}

fn validate_ranks(ranks: &[usize; ROLE_COUNT]) -> Result<(), AlignError> {
    let mut seen = [false; ROLE_COUNT];
    for &r in ranks {
        if r < 1 || r > ROLE_COUNT || seen[r - 1] {
            return Err(AlignError::BadRanks(*ranks));
        }
        seen[r - 1] = true;
    }
    Ok(())
}

/// Pairwise hinge over normalized log-probabilities: for every ordered pair
/// with `rank_i < rank_j`, penalize `max(0, p_j - p_i)`.
pub fn rank_hinge_loss(probs: &[f64; ROLE_COUNT], ranks: &[usize; ROLE_COUNT]) -> f64 {
    rank_hinge_with_grad(probs, ranks).0
}

/// Loss plus dLoss/dProbs.
pub fn rank_hinge_with_grad(
    probs: &[f64; ROLE_COUNT],
    ranks: &[usize; ROLE_COUNT],
) -> (f64, [f64; ROLE_COUNT]) {
    let mut loss = 0.0;
    let mut grad = [0.0; ROLE_COUNT];
    for i in 0..ROLE_COUNT {
        for j in 0..ROLE_COUNT {
            if ranks[i] < ranks[j] {
                let violation = probs[j] - probs[i];
                if violation > 0.0 {
                    loss += violation;
                    grad[j] += 1.0;
                    grad[i] -= 1.0;
                }
            }
        }
    }
    (loss, grad)
}

/// Ordered pairs `(i, j)` with `rank_i < rank_j` where `p_j >= p_i`.
pub fn count_violations(probs: &[f64; ROLE_COUNT], ranks: &[usize; ROLE_COUNT]) -> (usize, usize) {
    let mut violated = 0;
    let mut total = 0;
    for i in 0..ROLE_COUNT {
        for j in 0..ROLE_COUNT {
            if ranks[i] < ranks[j] {
                total += 1;
                if probs[j] >= probs[i] {
                    violated += 1;
                }
            }
        }
    }
    (violated, total)
}

/// Scores the three candidate texts against the user embedding of `imp` and
/// assigns ranks 1..=3, ties broken by role order.
pub fn rank_triple(
    recommender: &RankerModel,
    imp: &Impression,
    store: &CorpusStore,
    texts: &[&str; ROLE_COUNT],
) -> Result<[usize; ROLE_COUNT], AlignError> {
    let history: Vec<&NewsArticle> = imp
        .history
        .iter()
        .map(|id| store.get(id).ok_or_else(|| RankError::UnknownId(id.clone())))
        .collect::<Result<_, _>>()?;
    let user = recommender.user_embedding(&history)?;

    let mut scored: Vec<(usize, f64)> = texts
        .iter()
        .enumerate()
        .map(|(role_idx, text)| {
            let article = NewsArticle::from_free_text(
                NewsId::new(format!("candidate-{role_idx}")),
                "",
                text,
                None,
            );
            (role_idx, score_pair(&user, &recommender.news_vector(&article)))
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let mut ranks = [0usize; ROLE_COUNT];
    for (rank0, (role_idx, _)) in scored.into_iter().enumerate() {
        ranks[role_idx] = rank0 + 1;
    }
    Ok(ranks)
}

/// Normalized log-probability of each candidate given the condition.
pub fn triple_logprobs(
    model: &TinyGenerator,
    triple: &NarrativeTriple,
) -> Result<[f64; ROLE_COUNT], AlignError> {
    let mut probs = [0.0; ROLE_COUNT];
    for (i, text) in triple.texts().iter().enumerate() {
        probs[i] = model.seq_logprob_norm(&triple.condition, text)?;
    }
    Ok(probs)
}

/// Alignment-training settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlignConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: OptimKind,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            learning_rate: 1e-5,
            epochs: 5,
            seed: 0,
            optimizer: OptimKind::Adam,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AlignReport {
    pub epoch_losses: Vec<f64>,
    /// Pairwise violation rate over the training triples, per epoch.
    pub epoch_violation_rates: Vec<f64>,
}

/// Mean pairwise violation rate over `triples`. Triples without precomputed
/// ranks are an error here; rank them first.
pub fn violation_rate(
    model: &TinyGenerator,
    triples: &[NarrativeTriple],
) -> Result<f64, AlignError> {
    if triples.is_empty() {
        return Err(AlignError::NoTriples);
    }
    let mut violated = 0usize;
    let mut total = 0usize;
    for triple in triples {
        let ranks = triple.ranks.ok_or(AlignError::BadRanks([0; ROLE_COUNT]))?;
        validate_ranks(&ranks)?;
        let probs = triple_logprobs(model, triple)?;
        let (v, t) = count_violations(&probs, &ranks);
        violated += v;
        total += t;
    }
    Ok(violated as f64 / total as f64)
}

/// Minimizes the mean pairwise hinge over the triples by gradient descent.
/// The model is expected to be SFT-trained already.
pub fn train_alignment(
    model: &mut TinyGenerator,
    triples: &[NarrativeTriple],
    cfg: &AlignConfig,
) -> Result<AlignReport, AlignError> {
    if triples.is_empty() {
        return Err(AlignError::NoTriples);
    }
    for triple in triples {
        let ranks = triple.ranks.ok_or(AlignError::BadRanks([0; ROLE_COUNT]))?;
        validate_ranks(&ranks)?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate);
    let mut grads = model.zeroed_like();
    let mut report = AlignReport::default();

    for _epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..triples.len()).collect();
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }

        let mut epoch_loss = 0.0;
        let mut violated = 0usize;
        let mut total = 0usize;
        for &idx in &order {
            let triple = &triples[idx];
            let ranks = triple.ranks.expect("validated above");
            let condition = model.text_tokens(&triple.condition);

            let mut caches = Vec::with_capacity(ROLE_COUNT);
            let mut probs = [0.0; ROLE_COUNT];
            let mut lens = [0usize; ROLE_COUNT];
            for (i, text) in triple.texts().iter().enumerate() {
                let seq = model.text_tokens(text);
                let (cache, logprobs) = model.forward_scored(&condition, &seq)?;
                lens[i] = logprobs.len();
                probs[i] = logprobs.iter().sum::<f64>() / lens[i] as f64;
                caches.push(cache);
            }

            let (loss, d_probs) = rank_hinge_with_grad(&probs, &ranks);
            let (v, t) = count_violations(&probs, &ranks);
            violated += v;
            total += t;
            epoch_loss += loss;

            if loss > 0.0 {
                grads.zero_all();
                for (i, cache) in caches.iter().enumerate() {
                    if d_probs[i] != 0.0 {
                        let w = d_probs[i] / lens[i] as f64;
                        let d: Vec<f64> = vec![w; lens[i]];
                        model.backward_scored(cache, &d, &mut grads);
                    }
                }
                optimizer.step(model, &grads);
            }
        }
        report.epoch_losses.push(epoch_loss / triples.len() as f64);
        report
            .epoch_violation_rates
            .push(violated as f64 / total as f64);
    }
    Ok(report)
}

/// Writes triples as JSON lines.
pub fn write_triples(path: &Path, triples: &[NarrativeTriple]) -> Result<(), AlignError> {
    let io_err = |source| AlignError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut file = fs::File::create(path).map_err(io_err)?;
    for triple in triples {
        let line = serde_json::to_string(triple)
            .map_err(|e| AlignError::Parse { line: 0, message: e.to_string() })?;
        writeln!(file, "{line}").map_err(io_err)?;
    }
    Ok(())
}

pub fn read_triples(path: &Path) -> Result<Vec<NarrativeTriple>, AlignError> {
    let file = fs::File::open(path).map_err(|source| AlignError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut triples = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| AlignError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.is_empty() {
            continue;
        }
        triples.push(serde_json::from_str(&line).map_err(|e| AlignError::Parse {
            line: lineno + 1,
            message: e.to_string(),
        })?);
    }
    Ok(triples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textgen::{build_generator_vocab, GeneratorConfig};

    #[test]
    fn satisfied_order_has_zero_loss() {
        let loss = rank_hinge_loss(&[-0.5, -1.0, -2.0], &[1, 2, 3]);
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn reversed_order_sums_each_pair_violation() {
        // pairs (1,2): 1.0, (1,3): 1.5, (2,3): 0.5 -> 3.0
        let loss = rank_hinge_loss(&[-2.0, -1.0, -0.5], &[1, 2, 3]);
        assert!((loss - 3.0).abs() < 1e-12);
    }

    #[test]
    fn all_equal_probs_have_zero_loss_but_count_as_violations() {
        let probs = [-1.0, -1.0, -1.0];
        assert_eq!(rank_hinge_loss(&probs, &[1, 2, 3]), 0.0);
        let (violated, total) = count_violations(&probs, &[1, 2, 3]);
        assert_eq!((violated, total), (3, 3));
    }

    #[test]
    fn loss_is_invariant_to_a_constant_shift() {
        let probs = [-2.0, -1.0, -0.5];
        let shifted = [-1.0, 0.0, 0.5];
        let ranks = [1, 2, 3];
        assert!((rank_hinge_loss(&probs, &ranks) - rank_hinge_loss(&shifted, &ranks)).abs() < 1e-12);
    }

    #[test]
    fn loss_is_zero_iff_probs_are_compatible_with_ranks() {
        let ranks = [2, 1, 3];
        let compatible = [-1.0, -0.5, -2.0];
        assert_eq!(rank_hinge_loss(&compatible, &ranks), 0.0);
        let incompatible = [-0.4, -0.5, -2.0];
        assert!(rank_hinge_loss(&incompatible, &ranks) > 0.0);
    }

    #[test]
    fn bad_ranks_are_rejected() {
        assert!(validate_ranks(&[1, 2, 3]).is_ok());
        assert!(validate_ranks(&[1, 1, 3]).is_err());
        assert!(validate_ranks(&[0, 1, 2]).is_err());
    }

    fn tiny_trained_setup() -> (TinyGenerator, Vec<NarrativeTriple>, Vec<NarrativeTriple>) {
        // Rank-1 texts share the `quartz` word family; teacher texts use
        // `marble`; focal texts use `granite`.
        let words_a = ["quartz", "prism", "lattice"];
        let words_b = ["marble", "column", "arch"];
        let words_c = ["granite", "slab", "ridge"];
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        let mut sentence = |pool: &[&str], len: usize, rng: &mut ChaCha8Rng| {
            (0..len)
                .map(|_| pool[rng.gen_range(0..pool.len())])
                .collect::<Vec<_>>()
                .join(" ")
        };
        let make = |rng: &mut ChaCha8Rng, sentence: &mut dyn FnMut(&[&str], usize, &mut ChaCha8Rng) -> String| {
            NarrativeTriple {
                condition: sentence(&["report", "update", "notice"], 3, rng),
                ours: sentence(&words_a, 6, rng),
                teacher: sentence(&words_b, 6, rng),
                focal: sentence(&words_c, 6, rng),
                ranks: Some([1, 2, 3]),
            }
        };
        let train: Vec<NarrativeTriple> = (0..30).map(|_| make(&mut rng, &mut sentence)).collect();
        let held_out: Vec<NarrativeTriple> = (0..10).map(|_| make(&mut rng, &mut sentence)).collect();

        let mut texts: Vec<String> = Vec::new();
        for t in train.iter().chain(&held_out) {
            texts.push(t.condition.clone());
            texts.push(t.ours.clone());
            texts.push(t.teacher.clone());
            texts.push(t.focal.clone());
        }
        let vocab = build_generator_vocab(texts.iter().map(String::as_str), 1);
        let config = GeneratorConfig { dim: 12, heads: 2, context: 32, min_token_freq: 1 };
        let mut model = TinyGenerator::new(vocab, config, 8);

        // SFT on the teacher narratives first.
        let sft_examples: Vec<(String, String)> = train
            .iter()
            .map(|t| (t.condition.clone(), t.teacher.clone()))
            .collect();
        crate::textgen::train_sft(
            &mut model,
            &sft_examples,
            &crate::textgen::SftConfig {
                learning_rate: 0.01,
                epochs: 4,
                seed: 3,
                optimizer: OptimKind::Adam,
            },
        )
        .unwrap();
        (model, train, held_out)
    }

    #[test]
    fn alignment_training_reduces_held_out_violations() {
        let (mut model, train, held_out) = tiny_trained_setup();
        let before = violation_rate(&model, &held_out).unwrap();
        let cfg = AlignConfig {
            learning_rate: 0.005,
            epochs: 6,
            seed: 21,
            optimizer: OptimKind::Adam,
        };
        let report = train_alignment(&mut model, &train, &cfg).unwrap();
        let after = violation_rate(&model, &held_out).unwrap();
        assert!(
            after < before,
            "violations should fall: before {before}, after {after}, trace {:?}",
            report.epoch_violation_rates
        );
    }

    #[test]
    fn zero_learning_rate_keeps_the_violation_trace_flat() {
        let (mut model, train, _) = tiny_trained_setup();
        let cfg = AlignConfig {
            learning_rate: 0.0,
            epochs: 3,
            seed: 21,
            optimizer: OptimKind::Sgd,
        };
        let report = train_alignment(&mut model, &train, &cfg).unwrap();
        let first = report.epoch_violation_rates[0];
        assert!(report
            .epoch_violation_rates
            .iter()
            .all(|&r| (r - first).abs() < 1e-15));
    }

    #[test]
    fn alignment_gradients_match_finite_differences() {
        use crate::gradcheck::check_gradients;

        let (mut model, train, _) = tiny_trained_setup();
        let triple = train[0].clone();
        let ranks = triple.ranks.unwrap();

        // Keep away from hinge kinks: check the current point is active.
        let probs = triple_logprobs(&model, &triple).unwrap();
        let (loss, d_probs) = rank_hinge_with_grad(&probs, &ranks);
        assert!(loss > 1e-3, "fixture should start with active hinges");
        for i in 0..ROLE_COUNT {
            for j in 0..ROLE_COUNT {
                if ranks[i] < ranks[j] {
                    assert!(
                        (probs[j] - probs[i]).abs() > 1e-4,
                        "pair ({i},{j}) sits on the hinge kink"
                    );
                }
            }
        }

        let condition = model.text_tokens(&triple.condition);
        let mut grads = model.zeroed_like();
        for (i, text) in triple.texts().iter().enumerate() {
            if d_probs[i] != 0.0 {
                let seq = model.text_tokens(text);
                let (cache, logprobs) = model.forward_scored(&condition, &seq).unwrap();
                let w = d_probs[i] / logprobs.len() as f64;
                let d: Vec<f64> = vec![w; logprobs.len()];
                model.backward_scored(&cache, &d, &mut grads);
            }
        }

        let loss_fn = |m: &TinyGenerator| {
            let probs = triple_logprobs(m, &triple).unwrap();
            rank_hinge_loss(&probs, &ranks)
        };
        let report = check_gradients(&mut model, &grads, loss_fn, 15, 1e-6, 13).unwrap();
        assert!(report.within(1e-4), "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn empty_triples_error() {
        let vocab = build_generator_vocab(["alpha"], 1);
        let config = GeneratorConfig { dim: 8, heads: 2, context: 16, min_token_freq: 1 };
        let mut model = TinyGenerator::new(vocab, config, 1);
        assert!(matches!(
            train_alignment(&mut model, &[], &AlignConfig::default()),
            Err(AlignError::NoTriples)
        ));
    }

    #[test]
    fn triple_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("triples.jsonl");
        let triples = vec![NarrativeTriple {
            condition: "context words".into(),
            ours: "ours text".into(),
            teacher: "teacher text".into(),
            focal: "focal text".into(),
            ranks: Some([1, 2, 3]),
        }];
        write_triples(&path, &triples).unwrap();
        let loaded = read_triples(&path).unwrap();
        assert_eq!(loaded.len(), 1);
        assert_eq!(loaded[0].ours, "ours text");
        assert_eq!(loaded[0].ranks, Some([1, 2, 3]));
    }
}
