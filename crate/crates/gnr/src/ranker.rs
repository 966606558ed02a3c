//! Click ranking: dot-product scoring of user and candidate embeddings,
//! negative-sampled softmax training, and focal-news selection.

use ndarray::{Array1, ArrayViewD, ArrayViewMutD};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusStore, Impression, NewsArticle, NewsId};
use crate::optim::{OptimKind, Optimizer};
use crate::tensor::TensorCollection;
use crate::textenc::{
    encode_user, init_uniform, tokenize, AdditivePool, CombineCache, DualEmbedding, Embedding,
    EncodeCache, EncoderConfig, PoolCache, TextEncoder, ViewCombiner, Vocabulary,
};

/// Which representation feeds the scorer on each side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewMode {
    Semantic,
    Theme,
    Dual,
}

impl Default for ViewMode {
    fn default() -> Self {
        ViewMode::Dual
    }
}

#[derive(Debug, Error)]
pub enum RankError {
    #[error("impression {0} has an empty history")]
    EmptyHistory(String),
    #[error("no impression usable for training (need >=1 clicked and >=1 non-clicked candidate)")]
    NoUsableImpressions,
    #[error("unknown news id {0}")]
    UnknownId(NewsId),
    #[error("ranked candidate list is empty")]
    EmptyRanking,
    #[error("impression {0} has no clicked candidate to use as ground truth")]
    NoClickedCandidate(String),
}

/// Training hyperparameters for the ranker.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Negatives sampled per clicked candidate.
    pub k_neg: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k_neg: 4,
            learning_rate: 1e-4,
            epochs: 5,
            batch_size: 8,
            seed: 0,
            optimizer: OptimKind::Sgd,
        }
    }
}

/// One scored candidate news item.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCandidate {
    pub id: NewsId,
    pub score: f64,
}

/// How the focal news is chosen from an impression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FocalMode {
    /// Top-1 of the model ranking.
    Ranked,
    /// The impression's clicked candidate (evaluation protocol).
    GroundTruth,
}

/// The dual-level ranking model: a text encoder shared by the semantic and
/// theme views, the view combiner, and a separate pooling stage that turns
/// history item vectors into the user embedding.
#[derive(Debug, Clone)]
pub struct RankerModel {
    pub config: EncoderConfig,
    pub vocab: Vocabulary,
    pub encoder: TextEncoder,
    pub combiner: ViewCombiner,
    pub user_pool: AdditivePool,
    pub news_view: ViewMode,
    pub user_view: ViewMode,
    pub seed: u64,
    pub k_neg: usize,
}

impl RankerModel {
    pub fn new(
        vocab: Vocabulary,
        config: EncoderConfig,
        news_view: ViewMode,
        user_view: ViewMode,
        seed: u64,
    ) -> Self {
        let mut model = RankerModel {
            encoder: TextEncoder::zeros(vocab.len(), config.dim, config.heads),
            combiner: ViewCombiner::zeros(config.dim),
            user_pool: AdditivePool::zeros(config.dim),
            config,
            vocab,
            news_view,
            user_view,
            seed,
            k_neg: 4,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        init_uniform(&mut model, -0.1, 0.1, &mut rng);
        model
    }

    /// A zeroed clone usable as a gradient accumulator.
    pub fn zeroed_like(&self) -> RankerModel {
        let mut g = self.clone();
        g.zero_all();
        g
    }

    fn text_tokens(&self, article: &NewsArticle) -> Vec<usize> {
        tokenize(&article.full_text(), &self.vocab, self.config.max_text_len)
    }

    fn theme_tokens(&self, article: &NewsArticle) -> Vec<usize> {
        tokenize(&article.theme_text(), &self.vocab, self.config.max_theme_len)
    }

    /// Dual-level embedding of an article (semantic, theme, fused).
    pub fn dual_embedding(&self, article: &NewsArticle) -> DualEmbedding {
        let e_s = self.encoder.encode(&self.text_tokens(article));
        let e_t = self.encoder.encode(&self.theme_tokens(article));
        self.combiner.combine(&e_s, &e_t)
    }

    /// The article vector the scorer sees on the news side.
    pub fn news_vector(&self, article: &NewsArticle) -> Embedding {
        self.view_vector(article, self.news_view)
    }

    fn view_vector(&self, article: &NewsArticle, view: ViewMode) -> Embedding {
        match view {
            ViewMode::Semantic => self.encoder.encode(&self.text_tokens(article)),
            ViewMode::Theme => self.encoder.encode(&self.theme_tokens(article)),
            ViewMode::Dual => self.dual_embedding(article).dual,
        }
    }

    /// Pools the user-side view of every history article.
    pub fn user_embedding(
        &self,
        history: &[&NewsArticle],
    ) -> Result<Embedding, RankError> {
        self.user_embedding_view(history, self.user_view)
    }

    /// User embedding with an explicit view, regardless of the configured
    /// user-side mode (evaluation protocols pin the dual view).
    pub fn user_embedding_view(
        &self,
        history: &[&NewsArticle],
        view: ViewMode,
    ) -> Result<Embedding, RankError> {
        if history.is_empty() {
            return Err(RankError::EmptyHistory(String::new()));
        }
        let items: Vec<Embedding> = history
            .iter()
            .map(|a| self.view_vector(a, view))
            .collect();
        let (user, _) = encode_user(&self.user_pool, &items).expect("history checked non-empty");
        Ok(user)
    }

    fn forward_news(&self, article: &NewsArticle, view: ViewMode) -> NewsForward {
        match view {
            ViewMode::Semantic => {
                let tokens = self.text_tokens(article);
                let (out, cache) = self.encoder.encode_with_cache(&tokens);
                NewsForward { out, sem: Some(cache), theme: None, comb: None }
            }
            ViewMode::Theme => {
                let tokens = self.theme_tokens(article);
                let (out, cache) = self.encoder.encode_with_cache(&tokens);
                NewsForward { out, sem: None, theme: Some(cache), comb: None }
            }
            ViewMode::Dual => {
                let (e_s, sem) = self.encoder.encode_with_cache(&self.text_tokens(article));
                let (e_t, theme) = self.encoder.encode_with_cache(&self.theme_tokens(article));
                let (dual, comb) = self.combiner.combine_with_cache(&e_s, &e_t);
                NewsForward {
                    out: dual.dual,
                    sem: Some(sem),
                    theme: Some(theme),
                    comb: Some(comb),
                }
            }
        }
    }

    fn backward_news(&self, fwd: &NewsForward, d_out: &Embedding, grads: &mut RankerModel) {
        match (&fwd.sem, &fwd.theme, &fwd.comb) {
            (Some(sem), Some(theme), Some(comb)) => {
                let (d_es, d_et) = self.combiner.backward(comb, d_out, &mut grads.combiner);
                self.encoder.backward(sem, &d_es, &mut grads.encoder);
                self.encoder.backward(theme, &d_et, &mut grads.encoder);
            }
            (Some(sem), None, None) => self.encoder.backward(sem, d_out, &mut grads.encoder),
            (None, Some(theme), None) => self.encoder.backward(theme, d_out, &mut grads.encoder),
            _ => unreachable!("inconsistent forward cache"),
        }
    }
}

struct NewsForward {
    out: Embedding,
    sem: Option<EncodeCache>,
    theme: Option<EncodeCache>,
    comb: Option<CombineCache>,
}

impl TensorCollection for RankerModel {
    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out = crate::tensor::with_prefix("news", self.encoder.tensors());
        out.extend(self.combiner.prefixed_tensors("combiner"));
        out.extend(self.user_pool.prefixed_tensors("user_pool"));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        let mut out = crate::tensor::with_prefix_mut("news", self.encoder.tensors_mut());
        out.extend(self.combiner.prefixed_tensors_mut("combiner"));
        out.extend(self.user_pool.prefixed_tensors_mut("user_pool"));
        out
    }
}

/// Builds the shared vocabulary from every article's text and theme phrases.
pub fn build_vocabulary(store: &CorpusStore, min_freq: usize) -> Vocabulary {
    let mut texts = Vec::with_capacity(store.len() * 2);
    for article in store.iter() {
        texts.push(article.full_text());
        let theme = article.theme_text();
        if !theme.is_empty() {
            texts.push(theme);
        }
    }
    Vocabulary::build(texts.iter().map(String::as_str), min_freq)
}

/// Inner-product ranking score.
pub fn score_pair(user: &Embedding, news: &Embedding) -> f64 {
    assert_eq!(user.len(), news.len(), "embedding dimension mismatch");
    user.dot(news)
}

/// Softmax probability of the positive among its sampled negatives,
/// computed with max-subtraction.
pub fn click_probability(pos_score: f64, neg_scores: &[f64]) -> f64 {
    let max = neg_scores.iter().fold(pos_score, |m, &s| m.max(s));
    let pos = (pos_score - max).exp();
    let denom: f64 = pos + neg_scores.iter().map(|s| (s - max).exp()).sum::<f64>();
    pos / denom
}

/// Per-epoch training summary.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    /// Impressions without a clicked candidate, without any negative, or
    /// with an empty history.
    pub skipped_impressions: usize,
    /// Samples whose negatives were drawn with replacement because the
    /// impression had fewer than `k_neg` non-clicked candidates.
    pub replacement_sampled: usize,
    pub samples_per_epoch: usize,
}

/// One training sample: an impression index plus one clicked candidate.
struct Sample {
    imp: usize,
    positive: usize,
    negatives_pool: Vec<usize>,
}

/// Trains in place, minimizing the negative log of [`click_probability`]
/// over every (impression, clicked candidate) pair.
pub fn train_ranker(
    model: &mut RankerModel,
    impressions: &[Impression],
    store: &CorpusStore,
    cfg: &TrainConfig,
) -> Result<TrainReport, RankError> {
    assert!(cfg.k_neg >= 1, "k_neg must be at least 1");
    assert!(cfg.learning_rate >= 0.0, "learning rate must be non-negative");
    model.k_neg = cfg.k_neg;

    let mut report = TrainReport::default();
    let mut samples = Vec::new();
    for (imp_idx, imp) in impressions.iter().enumerate() {
        let clicked: Vec<usize> = (0..imp.candidates.len())
            .filter(|&i| imp.candidates[i].clicked)
            .collect();
        let unclicked: Vec<usize> = (0..imp.candidates.len())
            .filter(|&i| !imp.candidates[i].clicked)
            .collect();
        if clicked.is_empty() || unclicked.is_empty() || imp.history.is_empty() {
            report.skipped_impressions += 1;
            continue;
        }
        for &pos in &clicked {
            samples.push(Sample {
                imp: imp_idx,
                positive: pos,
                negatives_pool: unclicked.clone(),
            });
        }
    }
    if samples.is_empty() {
        return Err(RankError::NoUsableImpressions);
    }
    report.samples_per_epoch = samples.len();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate);
    let mut grads = model.zeroed_like();

    for _epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        shuffle(&mut order, &mut rng);

        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            grads.zero_all();
            for &s_idx in chunk {
                let sample = &samples[s_idx];
                let imp = &impressions[sample.imp];
                let negatives = draw_negatives(
                    &sample.negatives_pool,
                    cfg.k_neg,
                    &mut rng,
                    &mut report.replacement_sampled,
                );
                epoch_loss +=
                    click_loss_backward(model, imp, sample.positive, &negatives, store, &mut grads)?;
            }
            // Mean gradient over the batch.
            let scale = 1.0 / chunk.len() as f64;
            for (_, mut t) in grads.tensors_mut() {
                t.mapv_inplace(|g| g * scale);
            }
            optimizer.step(model, &grads);
        }
        report.epoch_losses.push(epoch_loss / samples.len() as f64);
    }
    Ok(report)
}

/// Loss of one (impression, clicked candidate, sampled negatives) example:
/// the negative log of [`click_probability`]. Parameter gradients accumulate
/// into `grads`; `positive` and `negatives` index into `imp.candidates`.
pub fn click_loss_backward(
    model: &RankerModel,
    imp: &Impression,
    positive: usize,
    negatives: &[usize],
    store: &CorpusStore,
    grads: &mut RankerModel,
) -> Result<f64, RankError> {
    let article = |id: &NewsId| store.get(id).ok_or_else(|| RankError::UnknownId(id.clone()));

    let history_fwd: Vec<NewsForward> = imp
        .history
        .iter()
        .map(|id| Ok(model.forward_news(article(id)?, model.user_view)))
        .collect::<Result<_, RankError>>()?;
    let items: Vec<Embedding> = history_fwd.iter().map(|f| f.out.clone()).collect();
    let (user, user_cache): (Embedding, PoolCache) =
        encode_user(&model.user_pool, &items).expect("history checked non-empty");

    let mut cand_fwd = Vec::with_capacity(1 + negatives.len());
    cand_fwd.push(model.forward_news(article(&imp.candidates[positive].id)?, model.news_view));
    for &n in negatives {
        cand_fwd.push(model.forward_news(article(&imp.candidates[n].id)?, model.news_view));
    }

    let scores: Vec<f64> = cand_fwd.iter().map(|f| score_pair(&user, &f.out)).collect();
    let prob = click_probability(scores[0], &scores[1..]);
    let loss = -prob.ln();

    // dLoss/dScore_i = softmax_i - [i == positive]
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let denom: f64 = exps.iter().sum();
    let mut d_user: Embedding = Array1::zeros(user.len());
    for (i, fwd) in cand_fwd.iter().enumerate() {
        let mut d_score = exps[i] / denom;
        if i == 0 {
            d_score -= 1.0;
        }
        d_user.zip_mut_with(&fwd.out, |a, b| *a += d_score * b);
        let d_cand = &user * d_score;
        model.backward_news(fwd, &d_cand, grads);
    }

    let mut d_items = ndarray::Array2::zeros((items.len(), user.len()));
    model
        .user_pool
        .backward(&user_cache, &d_user, &mut grads.user_pool, &mut d_items);
    for (t, fwd) in history_fwd.iter().enumerate() {
        let d_item = d_items.row(t).to_owned();
        model.backward_news(fwd, &d_item, grads);
    }

    Ok(loss)
}

fn shuffle(order: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
}

/// `k` uniform draws from `pool`: without replacement when the pool is big
/// enough, with replacement otherwise (counted).
fn draw_negatives(
    pool: &[usize],
    k: usize,
    rng: &mut ChaCha8Rng,
    replacement_count: &mut usize,
) -> Vec<usize> {
    if pool.len() >= k {
        let mut indices: Vec<usize> = (0..pool.len()).collect();
        for i in 0..k {
            let j = rng.gen_range(i..indices.len());
            indices.swap(i, j);
        }
        indices[..k].iter().map(|&i| pool[i]).collect()
    } else {
        *replacement_count += 1;
        (0..k).map(|_| pool[rng.gen_range(0..pool.len())]).collect()
    }
}

/// Scores every candidate of `imp` and sorts descending, ties broken by
/// ascending news id.
pub fn rank_candidates(
    model: &RankerModel,
    imp: &Impression,
    store: &CorpusStore,
) -> Result<Vec<ScoredCandidate>, RankError> {
    if imp.history.is_empty() {
        return Err(RankError::EmptyHistory(imp.impression_id.clone()));
    }
    let history: Vec<&NewsArticle> = imp
        .history
        .iter()
        .map(|id| store.get(id).ok_or_else(|| RankError::UnknownId(id.clone())))
        .collect::<Result<_, _>>()?;
    let user = model.user_embedding(&history)?;

    let mut scored = Vec::with_capacity(imp.candidates.len());
    for cand in &imp.candidates {
        let article = store
            .get(&cand.id)
            .ok_or_else(|| RankError::UnknownId(cand.id.clone()))?;
        let vec = model.news_vector(article);
        scored.push(ScoredCandidate {
            id: cand.id.clone(),
            score: score_pair(&user, &vec),
        });
    }
    scored.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
    Ok(scored)
}

/// Head of a non-empty ranking.
pub fn select_focal(ranked: &[ScoredCandidate]) -> Result<NewsId, RankError> {
    ranked
        .first()
        .map(|c| c.id.clone())
        .ok_or(RankError::EmptyRanking)
}

/// Focal selection honoring the configured mode.
pub fn select_focal_for(
    model: &RankerModel,
    imp: &Impression,
    store: &CorpusStore,
    mode: FocalMode,
) -> Result<NewsId, RankError> {
    match mode {
        FocalMode::Ranked => {
            let ranked = rank_candidates(model, imp, store)?;
            select_focal(&ranked)
        }
        FocalMode::GroundTruth => imp
            .clicked_candidates()
            .next()
            .map(|c| c.id.clone())
            .ok_or_else(|| RankError::NoClickedCandidate(imp.impression_id.clone())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Candidate;

    fn article(id: &str, title: &str, themes: Option<Vec<&str>>) -> NewsArticle {
        NewsArticle {
            id: NewsId::new(id),
            category: "politics".into(),
            title: title.into(),
            abstract_text: String::new(),
            theme_topics: themes.map(|t| t.into_iter().map(str::to_string).collect()),
        }
    }

    fn tiny_store() -> CorpusStore {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("news.tsv");
        let mut lines = String::new();
        for (id, title) in [
            ("N1", "budget vote passes senate floor"),
            ("N2", "court case opens with debate"),
            ("N3", "border bill stalls in committee"),
            ("N4", "budget deal reached after vote"),
            ("N5", "storm hits the coast hard"),
        ] {
            lines.push_str(&format!("{id}\tpolitics\t{title}\t\n"));
        }
        std::fs::write(&path, lines).unwrap();
        crate::corpus::load_news(&path).unwrap()
    }

    fn tiny_model(seed: u64) -> RankerModel {
        let store = tiny_store();
        let vocab = build_vocabulary(&store, 1);
        let config = EncoderConfig {
            dim: 16,
            heads: 2,
            max_text_len: 8,
            max_theme_len: 4,
            min_token_freq: 1,
        };
        RankerModel::new(vocab, config, ViewMode::Dual, ViewMode::Dual, seed)
    }

    fn impression(history: &[&str], cands: &[(&str, bool)]) -> Impression {
        Impression {
            impression_id: "I1".into(),
            user_id: "U1".into(),
            timestamp: "t".into(),
            history: history.iter().map(|s| NewsId::new(*s)).collect(),
            candidates: cands
                .iter()
                .map(|(id, clicked)| Candidate { id: NewsId::new(*id), clicked: *clicked })
                .collect(),
        }
    }

    #[test]
    fn score_pair_is_the_inner_product() {
        let u = Array1::from_vec(vec![1.0, 2.0]);
        let n = Array1::from_vec(vec![3.0, 4.0]);
        assert_eq!(score_pair(&u, &n), 11.0);
        let e1 = Array1::from_vec(vec![1.0, 0.0]);
        let e2 = Array1::from_vec(vec![0.0, 1.0]);
        assert_eq!(score_pair(&e1, &e2), 0.0);
        // bilinearity in the user argument
        let scaled = &u * 2.5;
        assert!((score_pair(&scaled, &n) - 2.5 * score_pair(&u, &n)).abs() < 1e-12);
    }

    #[test]
    fn click_probability_matches_softmax() {
        assert!((click_probability(1.0, &[0.0, 0.0]) - 0.5761168847658291).abs() < 1e-12);
        assert_eq!(click_probability(3.7, &[]), 1.0);
        assert!((click_probability(0.0, &[0.0, 0.0, 0.0]) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn click_probability_is_stable_for_huge_scores() {
        let p = click_probability(1000.0, &[999.0, 998.0]);
        assert!(p.is_finite() && p > 0.5 && p <= 1.0);
        let total = p
            + (999.0f64 - 1000.0).exp() * p
            + (998.0f64 - 1000.0).exp() * p;
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ranking_sorts_descending_with_id_tie_break() {
        let model = tiny_model(5);
        let store = tiny_store();
        let imp = impression(&["N1", "N2"], &[("N3", false), ("N4", true), ("N5", false)]);
        let ranked = rank_candidates(&model, &imp, &store).unwrap();
        assert_eq!(ranked.len(), 3);
        for w in ranked.windows(2) {
            assert!(
                w[0].score > w[1].score
                    || (w[0].score == w[1].score && w[0].id < w[1].id)
            );
        }
        assert_eq!(select_focal(&ranked).unwrap(), ranked[0].id);
    }

    #[test]
    fn equal_scores_order_by_ascending_id() {
        let mut ranked = vec![
            ScoredCandidate { id: NewsId::new("N2"), score: 0.5 },
            ScoredCandidate { id: NewsId::new("N1"), score: 0.5 },
        ];
        ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
        assert_eq!(ranked[0].id, NewsId::new("N1"));
    }

    #[test]
    fn scaling_the_user_embedding_keeps_the_order() {
        let model = tiny_model(6);
        let store = tiny_store();
        let imp = impression(&["N1", "N2"], &[("N3", false), ("N4", true), ("N5", false)]);
        let history: Vec<&NewsArticle> =
            imp.history.iter().map(|id| store.get(id).unwrap()).collect();
        let user = model.user_embedding(&history).unwrap();
        let mut base: Vec<(NewsId, f64)> = imp
            .candidates
            .iter()
            .map(|c| {
                let v = model.news_vector(store.get(&c.id).unwrap());
                (c.id.clone(), score_pair(&user, &v))
            })
            .collect();
        let scaled_user = &user * 3.0;
        let mut scaled: Vec<(NewsId, f64)> = imp
            .candidates
            .iter()
            .map(|c| {
                let v = model.news_vector(store.get(&c.id).unwrap());
                (c.id.clone(), score_pair(&scaled_user, &v))
            })
            .collect();
        base.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        scaled.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let base_order: Vec<&NewsId> = base.iter().map(|(id, _)| id).collect();
        let scaled_order: Vec<&NewsId> = scaled.iter().map(|(id, _)| id).collect();
        assert_eq!(base_order, scaled_order);
    }

    #[test]
    fn empty_history_is_a_hard_error() {
        let model = tiny_model(7);
        let store = tiny_store();
        let imp = impression(&[], &[("N3", true)]);
        assert!(matches!(
            rank_candidates(&model, &imp, &store),
            Err(RankError::EmptyHistory(_))
        ));
    }

    #[test]
    fn ground_truth_focal_is_the_clicked_candidate() {
        let model = tiny_model(8);
        let store = tiny_store();
        let imp = impression(&["N1"], &[("N3", false), ("N4", true)]);
        let focal = select_focal_for(&model, &imp, &store, FocalMode::GroundTruth).unwrap();
        assert_eq!(focal, NewsId::new("N4"));
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_bit_identical() {
        let mut model = tiny_model(9);
        let store = tiny_store();
        let imps = vec![impression(&["N1", "N2"], &[("N4", true), ("N5", false), ("N3", false)])];
        let before: Vec<Vec<u64>> = model
            .tensors()
            .iter()
            .map(|(_, t)| t.iter().map(|x| x.to_bits()).collect())
            .collect();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 3,
            k_neg: 2,
            ..TrainConfig::default()
        };
        train_ranker(&mut model, &imps, &store, &cfg).unwrap();
        let after: Vec<Vec<u64>> = model
            .tensors()
            .iter()
            .map(|(_, t)| t.iter().map(|x| x.to_bits()).collect())
            .collect();
        assert_eq!(before, after);
    }

    #[test]
    fn training_is_seed_reproducible() {
        let store = tiny_store();
        let imps = vec![
            impression(&["N1", "N2"], &[("N4", true), ("N5", false), ("N3", false)]),
            impression(&["N4"], &[("N1", true), ("N5", false)]),
        ];
        let cfg = TrainConfig {
            learning_rate: 0.05,
            epochs: 4,
            k_neg: 1,
            seed: 77,
            ..TrainConfig::default()
        };
        let mut a = tiny_model(42);
        let ra = train_ranker(&mut a, &imps, &store, &cfg).unwrap();
        let mut b = tiny_model(42);
        let rb = train_ranker(&mut b, &imps, &store, &cfg).unwrap();
        assert_eq!(ra.epoch_losses, rb.epoch_losses);
        for ((_, x), (_, y)) in a.tensors().iter().zip(b.tensors().iter()) {
            assert!(x.iter().zip(y.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }

    #[test]
    fn unusable_impressions_are_skipped_and_counted() {
        let mut model = tiny_model(10);
        let store = tiny_store();
        let imps = vec![
            impression(&["N1"], &[("N4", true)]),              // no negatives
            impression(&["N1"], &[("N4", false), ("N5", false)]), // no positive
            impression(&[], &[("N4", true), ("N5", false)]),   // empty history
            impression(&["N1"], &[("N4", true), ("N5", false)]),
        ];
        let cfg = TrainConfig { epochs: 1, k_neg: 1, learning_rate: 0.01, ..Default::default() };
        let report = train_ranker(&mut model, &imps, &store, &cfg).unwrap();
        assert_eq!(report.skipped_impressions, 3);
        assert_eq!(report.samples_per_epoch, 1);
    }

    #[test]
    fn training_with_no_usable_impression_errors() {
        let mut model = tiny_model(11);
        let store = tiny_store();
        let imps = vec![impression(&["N1"], &[("N4", true)])];
        let cfg = TrainConfig { epochs: 1, ..Default::default() };
        assert!(matches!(
            train_ranker(&mut model, &imps, &store, &cfg),
            Err(RankError::NoUsableImpressions)
        ));
    }

    #[test]
    fn fewer_negatives_than_k_neg_samples_with_replacement() {
        let mut model = tiny_model(12);
        let store = tiny_store();
        let imps = vec![impression(&["N1"], &[("N4", true), ("N5", false)])];
        let cfg = TrainConfig { epochs: 2, k_neg: 4, learning_rate: 0.01, ..Default::default() };
        let report = train_ranker(&mut model, &imps, &store, &cfg).unwrap();
        assert_eq!(report.replacement_sampled, 2); // once per epoch
    }

    #[test]
    fn ranking_loss_gradients_match_finite_differences() {
        use crate::gradcheck::check_gradients;

        let store = tiny_store();
        let mut model = tiny_model(13);
        let imp = impression(&["N1", "N2"], &[("N4", true), ("N5", false), ("N3", false)]);

        let loss_fn = |m: &RankerModel| {
            click_loss_backward(m, &imp, 0, &[1, 2], &store, &mut m.zeroed_like()).unwrap()
        };

        let mut grads = model.zeroed_like();
        let loss = click_loss_backward(&model, &imp, 0, &[1, 2], &store, &mut grads).unwrap();
        assert!(loss.is_finite() && loss > 0.0);

        let report = check_gradients(&mut model, &grads, loss_fn, 20, 1e-5, 55).unwrap();
        assert!(
            report.within(1e-4),
            "max rel err {} at {:?}",
            report.max_rel_err,
            report.worst()
        );
    }

    #[test]
    fn separable_fixture_reaches_high_click_probability() {
        // Clicked candidates share a token with the history; non-clicked
        // never do. After training, the mean positive probability is high.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("news.tsv");
        let mut lines = String::new();
        for i in 0..6 {
            lines.push_str(&format!("H{i}\tpolitics\tglacier summit accord draft\t\n"));
            lines.push_str(&format!("P{i}\tpolitics\tglacier treaty progress report\t\n"));
            lines.push_str(&format!("Q{i}\tpolitics\tharbor strike delays cargo\t\n"));
        }
        std::fs::write(&path, lines).unwrap();
        let store = crate::corpus::load_news(&path).unwrap();
        let vocab = build_vocabulary(&store, 1);
        let config = EncoderConfig {
            dim: 16,
            heads: 2,
            max_text_len: 8,
            max_theme_len: 4,
            min_token_freq: 1,
        };
        let mut model = RankerModel::new(vocab, config, ViewMode::Semantic, ViewMode::Semantic, 3);

        let imps: Vec<Impression> = (0..6)
            .map(|i| {
                impression(
                    &[&format!("H{i}"), &format!("H{}", (i + 1) % 6)],
                    &[
                        (&format!("P{i}"), true),
                        (&format!("Q{i}"), false),
                        (&format!("Q{}", (i + 1) % 6), false),
                    ],
                )
            })
            .collect();

        let cfg = TrainConfig {
            k_neg: 2,
            learning_rate: 0.3,
            epochs: 50,
            batch_size: 4,
            seed: 7,
            optimizer: OptimKind::Sgd,
        };
        train_ranker(&mut model, &imps, &store, &cfg).unwrap();

        let mut mean_p = 0.0;
        for imp in &imps {
            let history: Vec<&NewsArticle> =
                imp.history.iter().map(|id| store.get(id).unwrap()).collect();
            let user = model.user_embedding(&history).unwrap();
            let pos = imp.candidates.iter().find(|c| c.clicked).unwrap();
            let negs: Vec<f64> = imp
                .candidates
                .iter()
                .filter(|c| !c.clicked)
                .map(|c| score_pair(&user, &model.news_vector(store.get(&c.id).unwrap())))
                .collect();
            let pos_score = score_pair(&user, &model.news_vector(store.get(&pos.id).unwrap()));
            mean_p += click_probability(pos_score, &negs);
        }
        mean_p /= imps.len() as f64;
        assert!(mean_p > 0.9, "mean positive probability {mean_p}");
    }
}
