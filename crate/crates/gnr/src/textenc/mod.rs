//! Trainable text encoders: token embeddings, one self-attention layer,
//! additive pooling, and the two-view attention combiner that fuses a
//! semantic embedding with a theme embedding into a dual-level vector.
//!
//! All forward passes have hand-derived backward counterparts; training
//! runs entirely in `f64` so finite-difference checks stay tight.

pub mod attention;
pub mod pooling;
pub mod vocab;

use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{with_prefix, with_prefix_mut, TensorCollection};

pub use attention::{AttentionCache, SelfAttention};
pub use pooling::{AdditivePool, PoolCache};
pub use vocab::{split_tokens, tokenize, Vocabulary, PAD_INDEX, UNK_INDEX};

/// A dense representation vector.
pub type Embedding = Array1<f64>;

/// Dimensions and tokenization limits shared by the encoder stacks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Embedding width `d`.
    pub dim: usize,
    /// Self-attention heads; must divide `dim`.
    pub heads: usize,
    /// Token budget for title-plus-abstract text.
    pub max_text_len: usize,
    /// Token budget for theme phrases.
    pub max_theme_len: usize,
    /// Minimum corpus frequency for a token to enter the vocabulary.
    pub min_token_freq: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            dim: 64,
            heads: 4,
            max_text_len: 32,
            max_theme_len: 16,
            min_token_freq: 2,
        }
    }
}

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("history is empty; filter impressions before encoding users")]
    EmptyHistory,
}

/// Fills every tensor with `uniform(lo, hi)` draws from `rng`, in the fixed
/// tensor order, so a seed pins the whole initialization.
pub fn init_uniform<P: TensorCollection, R: Rng>(params: &mut P, lo: f64, hi: f64, rng: &mut R) {
    for (_, mut t) in params.tensors_mut() {
        for cell in t.iter_mut() {
            *cell = rng.gen_range(lo..hi);
        }
    }
}

/// Embedding lookup, self-attention, additive pooling.
#[derive(Debug, Clone)]
pub struct TextEncoder {
    pub embedding: Array2<f64>,
    pub attn: SelfAttention,
    pub pool: AdditivePool,
}

/// Forward intermediates for [`TextEncoder::backward`].
pub struct EncodeCache {
    tokens: Vec<usize>,
    valid: Vec<bool>,
    attn_cache: Option<AttentionCache>,
    pool_cache: Option<PoolCache>,
    ctx: Option<Array2<f64>>,
}

impl TextEncoder {
    pub fn zeros(vocab_size: usize, dim: usize, heads: usize) -> Self {
        TextEncoder {
            embedding: Array2::zeros((vocab_size, dim)),
            attn: SelfAttention::zeros(dim, heads),
            pool: AdditivePool::zeros(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.attn.dim()
    }

    /// Encodes a padded token sequence into a `dim` vector. An all-PAD
    /// sequence yields the zero vector.
    pub fn encode(&self, tokens: &[usize]) -> Embedding {
        self.encode_with_cache(tokens).0
    }

    pub fn encode_with_cache(&self, tokens: &[usize]) -> (Embedding, EncodeCache) {
        let valid: Vec<bool> = tokens.iter().map(|&t| t != PAD_INDEX).collect();
        if !valid.iter().any(|&v| v) {
            return (
                Array1::zeros(self.dim()),
                EncodeCache {
                    tokens: tokens.to_vec(),
                    valid,
                    attn_cache: None,
                    pool_cache: None,
                    ctx: None,
                },
            );
        }
        let x = self.lookup(tokens);
        let (ctx, attn_cache) = self.attn.forward(&x, &valid, false);
        let (out, pool_cache) = self.pool.forward(&ctx, &valid);
        (
            out,
            EncodeCache {
                tokens: tokens.to_vec(),
                valid,
                attn_cache: Some(attn_cache),
                pool_cache: Some(pool_cache),
                ctx: Some(ctx),
            },
        )
    }

    fn lookup(&self, tokens: &[usize]) -> Array2<f64> {
        let mut x = Array2::zeros((tokens.len(), self.dim()));
        for (t, &id) in tokens.iter().enumerate() {
            x.row_mut(t).assign(&self.embedding.row(id));
        }
        x
    }

    /// Accumulates gradients of a scalar loss into `grads`, given
    /// `d_out` = dLoss/dEncoding. No-op for degenerate (all-PAD) caches.
    pub fn backward(&self, cache: &EncodeCache, d_out: &Embedding, grads: &mut TextEncoder) {
        let (Some(attn_cache), Some(pool_cache), Some(ctx)) =
            (&cache.attn_cache, &cache.pool_cache, &cache.ctx)
        else {
            return;
        };
        let mut d_ctx = Array2::zeros(ctx.raw_dim());
        self.pool
            .backward(pool_cache, d_out, &mut grads.pool, &mut d_ctx);
        let mut d_x = Array2::zeros((cache.tokens.len(), self.dim()));
        self.attn
            .backward(attn_cache, &d_ctx, &mut grads.attn, &mut d_x);
        for (t, &id) in cache.tokens.iter().enumerate() {
            if cache.valid[t] {
                grads
                    .embedding
                    .row_mut(id)
                    .zip_mut_with(&d_x.row(t), |g, v| *g += v);
            }
        }
    }
}

impl TensorCollection for TextEncoder {
    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out = vec![("embedding".into(), self.embedding.view().into_dyn())];
        out.extend(self.attn.prefixed_tensors("attn"));
        out.extend(self.pool.prefixed_tensors("pool"));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let mut out = vec![("embedding".into(), self.embedding.view_mut().into_dyn())];
        out.extend(self.attn.prefixed_tensors_mut("attn"));
        out.extend(self.pool.prefixed_tensors_mut("pool"));
        out
    }
}

/// Semantic/theme fusion weights and the fused vector.
#[derive(Debug, Clone)]
pub struct DualEmbedding {
    pub semantic: Embedding,
    pub theme: Embedding,
    pub dual: Embedding,
    pub weight_semantic: f64,
    pub weight_theme: f64,
}

/// Two-view attention combiner: each view is scored through its own affine
/// tanh bottleneck and query vector, the two scores softmax into convex
/// weights, and the fused vector is the weighted sum of the views.
#[derive(Debug, Clone)]
pub struct ViewCombiner {
    pub q1: Array1<f64>,
    pub q2: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

pub struct CombineCache {
    e_s: Array1<f64>,
    e_t: Array1<f64>,
    u1: Array1<f64>,
    u2: Array1<f64>,
    weight_s: f64,
    weight_t: f64,
}

impl ViewCombiner {
    pub fn zeros(dim: usize) -> Self {
        ViewCombiner {
            q1: Array1::zeros(dim),
            q2: Array1::zeros(dim),
            w1: Array2::zeros((dim, dim)),
            b1: Array1::zeros(dim),
            w2: Array2::zeros((dim, dim)),
            b2: Array1::zeros(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.q1.len()
    }

    pub fn combine(&self, e_s: &Embedding, e_t: &Embedding) -> DualEmbedding {
        self.combine_with_cache(e_s, e_t).0
    }

    pub fn combine_with_cache(&self, e_s: &Embedding, e_t: &Embedding) -> (DualEmbedding, CombineCache) {
        assert_eq!(e_s.len(), self.dim(), "semantic embedding width mismatch");
        assert_eq!(e_t.len(), self.dim(), "theme embedding width mismatch");

        let u1 = (self.w1.dot(e_s) + &self.b1).mapv(f64::tanh);
        let u2 = (self.w2.dot(e_t) + &self.b2).mapv(f64::tanh);
        let score_s = self.q1.dot(&u1);
        let score_t = self.q2.dot(&u2);

        let m = score_s.max(score_t);
        let exp_s = (score_s - m).exp();
        let exp_t = (score_t - m).exp();
        let weight_s = exp_s / (exp_s + exp_t);
        let weight_t = exp_t / (exp_s + exp_t);

        let dual = e_s * weight_s + &(e_t * weight_t);
        (
            DualEmbedding {
                semantic: e_s.clone(),
                theme: e_t.clone(),
                dual,
                weight_semantic: weight_s,
                weight_theme: weight_t,
            },
            CombineCache {
                e_s: e_s.clone(),
                e_t: e_t.clone(),
                u1,
                u2,
                weight_s,
                weight_t,
            },
        )
    }

    /// Returns (dLoss/dSemantic, dLoss/dTheme) and accumulates parameter
    /// gradients, given `d_dual` = dLoss/dFused.
    pub fn backward(
        &self,
        cache: &CombineCache,
        d_dual: &Array1<f64>,
        grads: &mut ViewCombiner,
    ) -> (Array1<f64>, Array1<f64>) {
        let d_weight_s = d_dual.dot(&cache.e_s);
        let d_weight_t = d_dual.dot(&cache.e_t);
        let mut d_es = d_dual * cache.weight_s;
        let mut d_et = d_dual * cache.weight_t;

        let mix = d_weight_s * cache.weight_s + d_weight_t * cache.weight_t;
        let d_score_s = cache.weight_s * (d_weight_s - mix);
        let d_score_t = cache.weight_t * (d_weight_t - mix);

        grads.q1.zip_mut_with(&cache.u1, |g, u| *g += d_score_s * u);
        grads.q2.zip_mut_with(&cache.u2, |g, u| *g += d_score_t * u);

        let d_z1 = (&self.q1 * d_score_s) * &cache.u1.mapv(|u| 1.0 - u * u);
        let d_z2 = (&self.q2 * d_score_t) * &cache.u2.mapv(|u| 1.0 - u * u);

        for i in 0..self.dim() {
            grads.w1.row_mut(i).zip_mut_with(&cache.e_s, |g, e| *g += d_z1[i] * e);
            grads.w2.row_mut(i).zip_mut_with(&cache.e_t, |g, e| *g += d_z2[i] * e);
        }
        grads.b1 += &d_z1;
        grads.b2 += &d_z2;

        d_es += &self.w1.t().dot(&d_z1);
        d_et += &self.w2.t().dot(&d_z2);
        (d_es, d_et)
    }
}

impl TensorCollection for ViewCombiner {
    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        vec![
            ("q1".into(), self.q1.view().into_dyn()),
            ("q2".into(), self.q2.view().into_dyn()),
            ("w1".into(), self.w1.view().into_dyn()),
            ("b1".into(), self.b1.view().into_dyn()),
            ("w2".into(), self.w2.view().into_dyn()),
            ("b2".into(), self.b2.view().into_dyn()),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        vec![
            ("q1".into(), self.q1.view_mut().into_dyn()),
            ("q2".into(), self.q2.view_mut().into_dyn()),
            ("w1".into(), self.w1.view_mut().into_dyn()),
            ("b1".into(), self.b1.view_mut().into_dyn()),
            ("w2".into(), self.w2.view_mut().into_dyn()),
            ("b2".into(), self.b2.view_mut().into_dyn()),
        ]
    }
}

impl ViewCombiner {
    pub fn prefixed_tensors(&self, prefix: &str) -> Vec<(String, ArrayViewD<'_, f64>)> {
        with_prefix(prefix, self.tensors())
    }

    pub fn prefixed_tensors_mut(&mut self, prefix: &str) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        with_prefix_mut(prefix, self.tensors_mut())
    }
}

/// Pools a non-empty list of item vectors into a user embedding using
/// `pool`'s separate parameters.
pub fn encode_user(
    pool: &AdditivePool,
    history: &[Embedding],
) -> Result<(Embedding, PoolCache), EncodeError> {
    if history.is_empty() {
        return Err(EncodeError::EmptyHistory);
    }
    let mut xs = Array2::zeros((history.len(), pool.dim()));
    for (i, h) in history.iter().enumerate() {
        xs.row_mut(i).assign(h);
    }
    let valid = vec![true; history.len()];
    Ok(pool.forward(&xs, &valid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seeded_encoder(vocab_size: usize, dim: usize, heads: usize, seed: u64) -> TextEncoder {
        let mut enc = TextEncoder::zeros(vocab_size, dim, heads);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        init_uniform(&mut enc, -0.1, 0.1, &mut rng);
        enc
    }

    #[test]
    fn all_pad_sequence_encodes_to_zero() {
        let enc = seeded_encoder(10, 8, 2, 1);
        let out = enc.encode(&[PAD_INDEX; 5]);
        assert!(out.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_token_equals_pooled_value_projection() {
        // With one valid position, attention reduces to that token's value
        // projection and pooling passes it through.
        let enc = seeded_encoder(10, 8, 2, 2);
        let out = enc.encode(&[4, PAD_INDEX, PAD_INDEX]);
        let x = enc.embedding.row(4).to_owned();
        let expected = x.dot(&enc.attn.wv);
        for (a, b) in out.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pad_placement_does_not_change_the_encoding() {
        let enc = seeded_encoder(12, 8, 4, 3);
        let a = enc.encode(&[5, PAD_INDEX, 7, PAD_INDEX]);
        let b = enc.encode(&[PAD_INDEX, 5, PAD_INDEX, 7]);
        assert!(a
            .iter()
            .zip(b.iter())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn relabeling_vocab_with_permuted_rows_is_invariant() {
        let enc = seeded_encoder(6, 4, 2, 4);
        let out = enc.encode(&[2, 3, 5]);

        // Swap rows 2 and 4 of the embedding table and relabel tokens.
        let mut permuted = enc.clone();
        let row2 = enc.embedding.row(2).to_owned();
        let row4 = enc.embedding.row(4).to_owned();
        permuted.embedding.row_mut(2).assign(&row4);
        permuted.embedding.row_mut(4).assign(&row2);
        let out_permuted = permuted.encode(&[4, 3, 5]);
        assert!(out
            .iter()
            .zip(out_permuted.iter())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        use crate::gradcheck::check_gradients;

        let mut enc = seeded_encoder(10, 8, 2, 5);
        let tokens = vec![3, 7, PAD_INDEX, 2];
        let probe = Array1::from_shape_fn(8, |i| 0.5 - 0.13 * i as f64);

        let loss = |p: &TextEncoder| p.encode(&tokens).dot(&probe);

        let (_, cache) = enc.encode_with_cache(&tokens);
        let mut grads = TextEncoder::zeros(10, 8, 2);
        enc.backward(&cache, &probe, &mut grads);

        let report = check_gradients(&mut enc, &grads, loss, 20, 1e-5, 17).unwrap();
        assert!(report.within(1e-4), "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn zero_parameter_combiner_averages_the_views() {
        let comb = ViewCombiner::zeros(3);
        let e_s = Array1::from_vec(vec![1.0, 2.0, 3.0]);
        let e_t = Array1::from_vec(vec![3.0, 0.0, -1.0]);
        let dual = comb.combine(&e_s, &e_t);
        assert!((dual.weight_semantic - 0.5).abs() < 1e-15);
        assert!((dual.weight_theme - 0.5).abs() < 1e-15);
        for i in 0..3 {
            assert!((dual.dual[i] - (e_s[i] + e_t[i]) / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn equal_views_pass_through_any_combiner() {
        let mut comb = ViewCombiner::zeros(4);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        init_uniform(&mut comb, -0.5, 0.5, &mut rng);
        let v = Array1::from_vec(vec![0.2, -0.7, 1.5, 0.0]);
        let dual = comb.combine(&v, &v);
        for i in 0..4 {
            assert!((dual.dual[i] - v[i]).abs() < 1e-12);
        }
        assert!((dual.weight_semantic + dual.weight_theme - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_two_dim_example() {
        // q1 = q2 = [1, 0], identity affines, e_s = [1, 0], e_t = [0, 1]:
        // scores are tanh(1) and 0, so the weights are softmax(0.76159, 0).
        let mut comb = ViewCombiner::zeros(2);
        comb.q1 = Array1::from_vec(vec![1.0, 0.0]);
        comb.q2 = Array1::from_vec(vec![1.0, 0.0]);
        comb.w1 = Array2::eye(2);
        comb.w2 = Array2::eye(2);
        let e_s = Array1::from_vec(vec![1.0, 0.0]);
        let e_t = Array1::from_vec(vec![0.0, 1.0]);
        let dual = comb.combine(&e_s, &e_t);
        assert!((dual.weight_semantic - 0.6816997421945262).abs() < 1e-12);
        assert!((dual.weight_theme - 0.3183002578054738).abs() < 1e-12);
        assert!((dual.dual[0] - 0.6816997421945262).abs() < 1e-12);
        assert!((dual.dual[1] - 0.3183002578054738).abs() < 1e-12);
    }

    #[test]
    fn fused_coordinates_stay_between_the_views() {
        let mut comb = ViewCombiner::zeros(5);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        init_uniform(&mut comb, -0.3, 0.3, &mut rng);
        for trial in 0..50 {
            let e_s = Array1::from_shape_fn(5, |i| ((trial * 5 + i) as f64 * 0.7).sin());
            let e_t = Array1::from_shape_fn(5, |i| ((trial * 5 + i) as f64 * 1.3).cos());
            let dual = comb.combine(&e_s, &e_t);
            assert!((dual.weight_semantic + dual.weight_theme - 1.0).abs() < 1e-9);
            assert!(dual.weight_semantic > 0.0 && dual.weight_semantic < 1.0);
            for i in 0..5 {
                let lo = e_s[i].min(e_t[i]) - 1e-12;
                let hi = e_s[i].max(e_t[i]) + 1e-12;
                assert!(dual.dual[i] >= lo && dual.dual[i] <= hi);
            }
        }
    }

    #[test]
    fn combiner_gradients_match_finite_differences() {
        use crate::gradcheck::check_gradients;

        let mut comb = ViewCombiner::zeros(6);
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        init_uniform(&mut comb, -0.4, 0.4, &mut rng);
        let e_s = Array1::from_shape_fn(6, |i| (i as f64 * 0.9).sin());
        let e_t = Array1::from_shape_fn(6, |i| (i as f64 * 0.4).cos());

        // Loss: sum of fused coordinates.
        let loss = |p: &ViewCombiner| p.combine(&e_s, &e_t).dual.sum();

        let (_, cache) = comb.combine_with_cache(&e_s, &e_t);
        let mut grads = ViewCombiner::zeros(6);
        comb.backward(&cache, &Array1::ones(6), &mut grads);

        let report = check_gradients(&mut comb, &grads, loss, 20, 1e-5, 41).unwrap();
        assert!(report.within(1e-4), "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn user_encoding_of_single_item_is_that_item() {
        let mut pool = AdditivePool::zeros(4);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        init_uniform(&mut pool, -0.2, 0.2, &mut rng);
        let item = Array1::from_vec(vec![0.4, -0.1, 0.9, 0.0]);
        let (user, _) = encode_user(&pool, &[item.clone()]).unwrap();
        for (a, b) in user.iter().zip(item.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        let (two, _) = encode_user(&pool, &[item.clone(), item.clone()]).unwrap();
        for (a, b) in two.iter().zip(item.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn user_encoding_is_order_free_and_rejects_empty() {
        let mut pool = AdditivePool::zeros(3);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        init_uniform(&mut pool, -0.2, 0.2, &mut rng);
        let a = Array1::from_vec(vec![0.1, 0.2, 0.3]);
        let b = Array1::from_vec(vec![-0.4, 0.5, 0.6]);
        let (u1, _) = encode_user(&pool, &[a.clone(), b.clone()]).unwrap();
        let (u2, _) = encode_user(&pool, &[b, a]).unwrap();
        assert!(u1
            .iter()
            .zip(u2.iter())
            .all(|(x, y)| (x - y).abs() < 1e-12));
        assert!(matches!(encode_user(&pool, &[]), Err(EncodeError::EmptyHistory)));
    }

    #[test]
    fn seeded_initialization_is_reproducible() {
        let a = seeded_encoder(20, 16, 4, 99);
        let b = seeded_encoder(20, 16, 4, 99);
        for ((_, x), (_, y)) in a.tensors().iter().zip(b.tensors().iter()) {
            assert!(x.iter().zip(y.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }
}
