//! A small word-level autoregressive generator: token plus dense positional
//! embeddings, one causal self-attention layer, and a projection to
//! vocabulary logits. Big enough to score sequence probabilities and be
//! fine-tuned, small enough for CPU training and finite-difference checks.

use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optim::{OptimKind, Optimizer};
use crate::tensor::{with_prefix, with_prefix_mut, TensorCollection};
use crate::textenc::{init_uniform, split_tokens, SelfAttention, Vocabulary, PAD_INDEX};

/// Index of the beginning-of-text marker in generator vocabularies.
pub const BOS_INDEX: usize = 2;
const BOS_TOKEN: &str = "<bos>";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub dim: usize,
    pub heads: usize,
    /// Maximum non-PAD tokens per scored pass, the BOS marker included.
    pub context: usize,
    pub min_token_freq: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            dim: 32,
            heads: 2,
            context: 64,
            min_token_freq: 1,
        }
    }
}

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("sequence is empty after tokenization")]
    EmptySequence,
    #[error("condition plus sequence needs {needed} positions, context is {context}")]
    ContextOverflow { needed: usize, context: usize },
    #[error("no training examples")]
    NoExamples,
}

/// Builds a generator vocabulary with the BOS marker at index 2.
pub fn build_generator_vocab<'a>(
    texts: impl IntoIterator<Item = &'a str>,
    min_freq: usize,
) -> Vocabulary {
    let mut counts = std::collections::HashMap::new();
    for text in texts {
        for token in split_tokens(text) {
            *counts.entry(token).or_insert(0usize) += 1;
        }
    }
    let mut kept: Vec<String> = counts
        .into_iter()
        .filter(|(_, c)| *c >= min_freq)
        .map(|(t, _)| t)
        .collect();
    kept.sort_unstable();
    let mut tokens = vec![BOS_TOKEN.to_string()];
    tokens.extend(kept);
    Vocabulary::from_tokens(tokens)
}

#[derive(Debug, Clone)]
pub struct TinyGenerator {
    pub config: GeneratorConfig,
    pub vocab: Vocabulary,
    pub embedding: Array2<f64>,
    pub positions: Array2<f64>,
    pub attn: SelfAttention,
    pub out_proj: Array2<f64>,
    pub out_bias: Array1<f64>,
    pub seed: u64,
}

impl TinyGenerator {
    pub fn new(vocab: Vocabulary, config: GeneratorConfig, seed: u64) -> Self {
        assert_eq!(vocab.token(BOS_INDEX), Some(BOS_TOKEN), "vocab lacks the BOS marker");
        let mut model = TinyGenerator {
            embedding: Array2::zeros((vocab.len(), config.dim)),
            positions: Array2::zeros((config.context, config.dim)),
            attn: SelfAttention::zeros(config.dim, config.heads),
            out_proj: Array2::zeros((config.dim, vocab.len())),
            out_bias: Array1::zeros(vocab.len()),
            config,
            vocab,
            seed,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        init_uniform(&mut model, -0.1, 0.1, &mut rng);
        model
    }

    pub fn zeroed_like(&self) -> TinyGenerator {
        let mut g = self.clone();
        g.zero_all();
        g
    }

    /// Unpadded token ids for free text.
    pub fn text_tokens(&self, text: &str) -> Vec<usize> {
        split_tokens(text).map(|t| self.vocab.lookup(&t)).collect()
    }

    /// Length-normalized conditional log-probability of `sequence` given
    /// `condition`: the mean per-token log-probability under the model.
    pub fn seq_logprob_norm(&self, condition: &str, sequence: &str) -> Result<f64, GeneratorError> {
        self.seq_logprob_norm_tokens(&self.text_tokens(condition), &self.text_tokens(sequence))
    }

    /// Token-level variant. PAD entries inside the condition are masked out
    /// of attention and position numbering, so padding never shifts scores.
    pub fn seq_logprob_norm_tokens(
        &self,
        condition: &[usize],
        sequence: &[usize],
    ) -> Result<f64, GeneratorError> {
        let (_, logprobs) = self.forward_scored(condition, sequence)?;
        Ok(logprobs.iter().sum::<f64>() / logprobs.len() as f64)
    }

    /// Distribution over the next token given a raw prefix (BOS is
    /// prepended internally).
    pub fn next_token_distribution(&self, prefix: &[usize]) -> Result<Array1<f64>, GeneratorError> {
        let mut tokens = vec![BOS_INDEX];
        tokens.extend(prefix.iter().copied().filter(|&t| t != PAD_INDEX));
        if tokens.len() > self.config.context {
            return Err(GeneratorError::ContextOverflow {
                needed: tokens.len(),
                context: self.config.context,
            });
        }
        let x = self.input_rows(&tokens, &vec![true; tokens.len()]);
        let valid = vec![true; tokens.len()];
        let (ctx, _) = self.attn.forward(&x, &valid, true);
        let logits = ctx.row(tokens.len() - 1).dot(&self.out_proj) + &self.out_bias;
        Ok(softmax(&logits))
    }

    fn input_rows(&self, tokens: &[usize], valid: &[bool]) -> Array2<f64> {
        let mut x = Array2::zeros((tokens.len(), self.config.dim));
        let mut dense = 0usize;
        for (t, &id) in tokens.iter().enumerate() {
            let mut row = self.embedding.row(id).to_owned();
            if valid[t] {
                row += &self.positions.row(dense);
                dense += 1;
            }
            x.row_mut(t).assign(&row);
        }
        x
    }

    /// Scores every sequence token; returns the cache for a backward pass
    /// and one log-probability per sequence token.
    pub fn forward_scored(
        &self,
        condition: &[usize],
        sequence: &[usize],
    ) -> Result<(ScoreCache, Vec<f64>), GeneratorError> {
        let seq: Vec<usize> = sequence.iter().copied().filter(|&t| t != PAD_INDEX).collect();
        if seq.is_empty() {
            return Err(GeneratorError::EmptySequence);
        }
        let mut tokens = vec![BOS_INDEX];
        tokens.extend_from_slice(condition);
        let seq_start = tokens.len();
        tokens.extend_from_slice(&seq);

        let valid: Vec<bool> = tokens.iter().map(|&t| t != PAD_INDEX).collect();
        let dense_count = valid.iter().filter(|&&v| v).count();
        if dense_count > self.config.context {
            return Err(GeneratorError::ContextOverflow {
                needed: dense_count,
                context: self.config.context,
            });
        }

        let mut dense_pos = vec![usize::MAX; tokens.len()];
        let mut dense = 0usize;
        for (t, &ok) in valid.iter().enumerate() {
            if ok {
                dense_pos[t] = dense;
                dense += 1;
            }
        }

        let x = self.input_rows(&tokens, &valid);
        let (ctx, attn_cache) = self.attn.forward(&x, &valid, true);

        // Each sequence token is predicted from the nearest earlier valid
        // position.
        let mut steps = Vec::with_capacity(seq.len());
        let mut logprobs = Vec::with_capacity(seq.len());
        for t in seq_start..tokens.len() {
            let predictor = (0..t).rev().find(|&j| valid[j]).expect("BOS is always valid");
            let logits = ctx.row(predictor).dot(&self.out_proj) + &self.out_bias;
            let probs = softmax(&logits);
            logprobs.push(probs[tokens[t]].max(f64::MIN_POSITIVE).ln());
            steps.push(ScoreStep {
                predictor,
                target: tokens[t],
                probs,
            });
        }

        Ok((
            ScoreCache {
                tokens,
                valid,
                dense_pos,
                ctx,
                attn_cache,
                steps,
            },
            logprobs,
        ))
    }

    /// Backward for [`forward_scored`]. `d_logprobs[k]` is
    /// dLoss/d(log-probability of sequence token k).
    pub fn backward_scored(
        &self,
        cache: &ScoreCache,
        d_logprobs: &[f64],
        grads: &mut TinyGenerator,
    ) {
        assert_eq!(d_logprobs.len(), cache.steps.len());
        let len = cache.tokens.len();
        let mut d_ctx = Array2::zeros((len, self.config.dim));

        for (step, &w) in cache.steps.iter().zip(d_logprobs) {
            if w == 0.0 {
                continue;
            }
            // d(logprob)/d(logits) = onehot(target) - probs
            let mut d_logits = step.probs.mapv(|p| -p * w);
            d_logits[step.target] += w;

            grads.out_bias += &d_logits;
            let ctx_row = cache.ctx.row(step.predictor);
            for (col, &dl) in d_logits.iter().enumerate() {
                if dl != 0.0 {
                    grads
                        .out_proj
                        .column_mut(col)
                        .zip_mut_with(&ctx_row, |g, c| *g += dl * c);
                }
            }
            let d_row = self.out_proj.dot(&d_logits);
            d_ctx.row_mut(step.predictor).zip_mut_with(&d_row, |a, b| *a += b);
        }

        let mut d_x = Array2::zeros((len, self.config.dim));
        self.attn.backward(&cache.attn_cache, &d_ctx, &mut grads.attn, &mut d_x);
        for (t, &id) in cache.tokens.iter().enumerate() {
            if !cache.valid[t] {
                continue;
            }
            grads.embedding.row_mut(id).zip_mut_with(&d_x.row(t), |g, v| *g += v);
            grads
                .positions
                .row_mut(cache.dense_pos[t])
                .zip_mut_with(&d_x.row(t), |g, v| *g += v);
        }
    }
}

/// One prediction step kept for the backward pass.
struct ScoreStep {
    predictor: usize,
    target: usize,
    probs: Array1<f64>,
}

pub struct ScoreCache {
    tokens: Vec<usize>,
    valid: Vec<bool>,
    dense_pos: Vec<usize>,
    ctx: Array2<f64>,
    attn_cache: crate::textenc::AttentionCache,
    steps: Vec<ScoreStep>,
}

fn softmax(logits: &Array1<f64>) -> Array1<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps = logits.mapv(|l| (l - max).exp());
    let denom = exps.sum();
    exps / denom
}

impl TensorCollection for TinyGenerator {
    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out = vec![
            ("embedding".into(), self.embedding.view().into_dyn()),
            ("positions".into(), self.positions.view().into_dyn()),
        ];
        out.extend(with_prefix("attn", self.attn.tensors()));
        out.push(("out_proj".into(), self.out_proj.view().into_dyn()));
        out.push(("out_bias".into(), self.out_bias.view().into_dyn()));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let mut out = vec![
            ("embedding".into(), self.embedding.view_mut().into_dyn()),
            ("positions".into(), self.positions.view_mut().into_dyn()),
        ];
        out.extend(with_prefix_mut("attn", self.attn.tensors_mut()));
        out.push(("out_proj".into(), self.out_proj.view_mut().into_dyn()));
        out.push(("out_bias".into(), self.out_bias.view_mut().into_dyn()));
        out
    }
}

/// Supervised fine-tuning settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SftConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: OptimKind,
}

impl Default for SftConfig {
    fn default() -> Self {
        SftConfig {
            learning_rate: 5e-5,
            epochs: 10,
            seed: 0,
            optimizer: OptimKind::Adam,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SftReport {
    /// Mean per-token cross-entropy per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Teacher-forced next-token training on (condition, target) pairs.
pub fn train_sft(
    model: &mut TinyGenerator,
    examples: &[(String, String)],
    cfg: &SftConfig,
) -> Result<SftReport, GeneratorError> {
    if examples.is_empty() {
        return Err(GeneratorError::NoExamples);
    }
    let tokenized: Vec<(Vec<usize>, Vec<usize>)> = examples
        .iter()
        .map(|(c, t)| (model.text_tokens(c), model.text_tokens(t)))
        .collect();
    if tokenized.iter().any(|(_, t)| t.is_empty()) {
        return Err(GeneratorError::EmptySequence);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate);
    let mut grads = model.zeroed_like();
    let mut report = SftReport::default();

    for _epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..tokenized.len()).collect();
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        for &i in &order {
            let (condition, target) = &tokenized[i];
            let (cache, logprobs) = model.forward_scored(condition, target)?;
            let n = logprobs.len() as f64;
            epoch_loss += -logprobs.iter().sum::<f64>() / n;
            let d: Vec<f64> = vec![-1.0 / n; logprobs.len()];
            grads.zero_all();
            model.backward_scored(&cache, &d, &mut grads);
            optimizer.step(model, &grads);
        }
        report.epoch_losses.push(epoch_loss / tokenized.len() as f64);
    }
    Ok(report)
}
