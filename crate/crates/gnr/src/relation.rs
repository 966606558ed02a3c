//! Siamese news-relation model: one shared encoder embeds both articles,
//! embeddings are unit-normalized, and relatedness is the cosine mapped to
//! `[0, 1]`. Training minimizes a Euclidean triplet hinge; on the unit
//! sphere distance and cosine are monotonically linked, so the trained
//! geometry and the thresholded score agree.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write as _;
use std::path::Path;

use ndarray::{Array1, ArrayViewD, ArrayViewMutD};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{CorpusStore, NewsArticle, NewsId, RelationPairSet};
use crate::optim::{OptimKind, Optimizer};
use crate::tensor::TensorCollection;
use crate::textenc::{init_uniform, tokenize, Embedding, EncoderConfig, TextEncoder, Vocabulary};

#[derive(Debug, Error)]
pub enum RelationError {
    #[error("need at least one positive pair to train")]
    NoPairs,
    #[error("corpus must hold at least 3 articles, found {0}")]
    CorpusTooSmall(usize),
    #[error("anchor {0} has no valid negative candidate in the corpus")]
    NoNegativePool(NewsId),
    #[error("unknown news id {0}")]
    UnknownId(NewsId),
    #[error("embedding cache i/o error on {path}: {source}")]
    CacheIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("embedding cache parse error: {0}")]
    CacheFormat(String),
    #[error("embedding cache was built by a different model (fingerprint mismatch)")]
    CacheStale,
}

/// Margin, threshold, and optimization settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelationConfig {
    /// Triplet margin; must be positive.
    pub margin: f64,
    /// Relatedness threshold in `[0, 1]` used during exploration.
    pub threshold: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: OptimKind,
}

impl Default for RelationConfig {
    fn default() -> Self {
        RelationConfig {
            margin: 0.5,
            threshold: 0.8,
            learning_rate: 1e-5,
            epochs: 5,
            seed: 0,
            optimizer: OptimKind::Adam,
        }
    }
}

/// Shared-encoder relation model.
#[derive(Debug, Clone)]
pub struct RelationModel {
    pub config: EncoderConfig,
    pub vocab: Vocabulary,
    pub encoder: TextEncoder,
    pub seed: u64,
}

impl RelationModel {
    pub fn new(vocab: Vocabulary, config: EncoderConfig, seed: u64) -> Self {
        let mut model = RelationModel {
            encoder: TextEncoder::zeros(vocab.len(), config.dim, config.heads),
            config,
            vocab,
            seed,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        init_uniform(&mut model, -0.1, 0.1, &mut rng);
        model
    }

    pub fn zeroed_like(&self) -> RelationModel {
        let mut g = self.clone();
        g.zero_all();
        g
    }

    fn tokens(&self, article: &NewsArticle) -> Vec<usize> {
        tokenize(&article.full_text(), &self.vocab, self.config.max_text_len)
    }

    /// Unit-normalized embedding; the zero vector for all-PAD text.
    pub fn embed(&self, article: &NewsArticle) -> Embedding {
        let raw = self.encoder.encode(&self.tokens(article));
        normalize(&raw)
    }

    /// SHA-256 over all parameter bytes, used to key embedding caches.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for (name, view) in self.tensors() {
            hasher.update(name.as_bytes());
            for v in view.iter() {
                hasher.update(v.to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }
}

impl TensorCollection for RelationModel {
    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        crate::tensor::with_prefix("relation", self.encoder.tensors())
    }

    fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        crate::tensor::with_prefix_mut("relation", self.encoder.tensors_mut())
    }
}

fn normalize(v: &Embedding) -> Embedding {
    let norm = v.dot(v).sqrt();
    if norm < 1e-12 {
        v.clone()
    } else {
        v / norm
    }
}

/// Relatedness in `[0, 1]`: `(cos + 1) / 2` on the shared-encoder
/// embeddings. Returns `(score, degenerate)`; a zero-vector side yields the
/// defined score 0.5 with the degenerate flag raised.
pub fn relation_score_checked(
    a: &NewsArticle,
    b: &NewsArticle,
    model: &RelationModel,
) -> (f64, bool) {
    let ea = model.embed(a);
    let eb = model.embed(b);
    score_from_embeddings(&ea, &eb)
}

fn score_from_embeddings(ea: &Embedding, eb: &Embedding) -> (f64, bool) {
    let na = ea.dot(ea).sqrt();
    let nb = eb.dot(eb).sqrt();
    if na < 1e-12 || nb < 1e-12 {
        return (0.5, true);
    }
    let cos = (ea.dot(eb) / (na * nb)).clamp(-1.0, 1.0);
    ((cos + 1.0) / 2.0, false)
}

/// [`relation_score_checked`] without the degenerate flag.
pub fn relation_score(a: &NewsArticle, b: &NewsArticle, model: &RelationModel) -> f64 {
    relation_score_checked(a, b, model).0
}

/// Per-epoch mean triplet loss.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RelationTrainReport {
    pub epoch_losses: Vec<f64>,
    pub triplets_per_epoch: usize,
}

/// Trains the shared encoder on a Euclidean triplet hinge. For every
/// positive pair, one negative is drawn per epoch, uniformly from articles
/// that are neither the anchor nor a known positive of it.
pub fn train_relation(
    model: &mut RelationModel,
    pairs: &RelationPairSet,
    store: &CorpusStore,
    cfg: &RelationConfig,
) -> Result<RelationTrainReport, RelationError> {
    assert!(cfg.margin > 0.0, "margin must be positive");
    assert!(
        (0.0..=1.0).contains(&cfg.threshold),
        "threshold must lie in [0, 1]"
    );
    if pairs.pairs.is_empty() {
        return Err(RelationError::NoPairs);
    }
    if store.len() < 3 {
        return Err(RelationError::CorpusTooSmall(store.len()));
    }

    let mut positives_of: HashMap<&NewsId, HashSet<&NewsId>> = HashMap::new();
    for (a, b) in &pairs.pairs {
        positives_of.entry(a).or_default().insert(b);
        positives_of.entry(b).or_default().insert(a);
    }
    let all_ids: Vec<&NewsId> = store.ids().collect();

    // Precompute each anchor's negative pool; error out before training if
    // any anchor has none.
    let mut negative_pools = Vec::with_capacity(pairs.pairs.len());
    for (anchor, related) in &pairs.pairs {
        for id in [anchor, related] {
            if !store.contains(id) {
                return Err(RelationError::UnknownId(id.clone()));
            }
        }
        let known = positives_of.get(anchor);
        let pool: Vec<&NewsId> = all_ids
            .iter()
            .copied()
            .filter(|id| *id != anchor && known.map_or(true, |s| !s.contains(*id)))
            .collect();
        if pool.is_empty() {
            return Err(RelationError::NoNegativePool(anchor.clone()));
        }
        negative_pools.push(pool);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate);
    let mut grads = model.zeroed_like();
    let mut report = RelationTrainReport {
        triplets_per_epoch: pairs.pairs.len(),
        ..Default::default()
    };

    for _epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        for (i, (anchor, related)) in pairs.pairs.iter().enumerate() {
            let pool = &negative_pools[i];
            let negative = pool[rng.gen_range(0..pool.len())];

            grads.zero_all();
            let loss = triplet_loss_backward(
                model,
                store.get(anchor).expect("checked above"),
                store.get(related).expect("checked above"),
                store.get(negative).expect("drawn from store"),
                cfg.margin,
                Some(&mut grads),
            );
            epoch_loss += loss;
            if loss > 0.0 {
                optimizer.step(model, &grads);
            }
        }
        report.epoch_losses.push(epoch_loss / pairs.pairs.len() as f64);
    }
    Ok(report)
}

/// Euclidean-distance triplet hinge on unit-normalized embeddings:
/// `max(0, |e_a - e_p| - |e_a - e_n| + margin)`. With `grads` given,
/// accumulates dLoss/dParams (zero inside the inactive hinge region).
pub fn triplet_loss_backward(
    model: &RelationModel,
    anchor: &NewsArticle,
    positive: &NewsArticle,
    negative: &NewsArticle,
    margin: f64,
    grads: Option<&mut RelationModel>,
) -> f64 {
    let (raw_a, cache_a) = model.encoder.encode_with_cache(&model.tokens(anchor));
    let (raw_p, cache_p) = model.encoder.encode_with_cache(&model.tokens(positive));
    let (raw_n, cache_n) = model.encoder.encode_with_cache(&model.tokens(negative));
    let e_a = normalize(&raw_a);
    let e_p = normalize(&raw_p);
    let e_n = normalize(&raw_n);

    let diff_ap = &e_a - &e_p;
    let diff_an = &e_a - &e_n;
    let d_ap = diff_ap.dot(&diff_ap).sqrt();
    let d_an = diff_an.dot(&diff_an).sqrt();
    let loss = (d_ap - d_an + margin).max(0.0);

    if let Some(grads) = grads {
        if loss > 0.0 && d_ap > 1e-9 && d_an > 1e-9 {
            let d_ea_p = &diff_ap / d_ap;
            let d_ea_n = &diff_an / d_an;
            let d_ea = &d_ea_p - &d_ea_n;
            let d_ep = -&d_ea_p;
            let d_en = d_ea_n;

            for (raw, unit, upstream, cache) in [
                (&raw_a, &e_a, d_ea, &cache_a),
                (&raw_p, &e_p, d_ep, &cache_p),
                (&raw_n, &e_n, d_en, &cache_n),
            ] {
                let norm = raw.dot(raw).sqrt();
                if norm < 1e-12 {
                    continue;
                }
                // d(raw) = (d(unit) - unit * (unit . d(unit))) / |raw|
                let proj = unit.dot(&upstream);
                let d_raw = (&upstream - &(unit * proj)) / norm;
                model.encoder.backward(cache, &d_raw, &mut grads.encoder);
            }
        }
    }
    loss
}

/// All articles other than `focal` whose relation score clears `alpha`,
/// ordered by descending score then ascending id.
pub fn explore_related(
    focal: &NewsId,
    store: &CorpusStore,
    model: &RelationModel,
    alpha: f64,
) -> Result<Vec<(NewsId, f64)>, RelationError> {
    let cache = EmbeddingCache::build(model, store);
    explore_related_cached(focal, store, &cache, alpha)
}

/// [`explore_related`] against a prebuilt embedding cache.
pub fn explore_related_cached(
    focal: &NewsId,
    store: &CorpusStore,
    cache: &EmbeddingCache,
    alpha: f64,
) -> Result<Vec<(NewsId, f64)>, RelationError> {
    let focal_embedding = cache
        .get(focal)
        .ok_or_else(|| RelationError::UnknownId(focal.clone()))?;
    let mut related: Vec<(NewsId, f64)> = Vec::new();
    for article in store.iter() {
        if &article.id == focal {
            continue;
        }
        let other = cache
            .get(&article.id)
            .ok_or_else(|| RelationError::UnknownId(article.id.clone()))?;
        let (score, _) = score_from_embeddings(focal_embedding, other);
        if score >= alpha {
            related.push((article.id.clone(), score));
        }
    }
    related.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(related)
}

/// Unit embeddings for a whole store, keyed by the model fingerprint.
#[derive(Debug, Clone)]
pub struct EmbeddingCache {
    fingerprint: String,
    dim: usize,
    entries: HashMap<NewsId, Embedding>,
}

impl EmbeddingCache {
    pub fn build(model: &RelationModel, store: &CorpusStore) -> Self {
        let entries = store
            .iter()
            .map(|a| (a.id.clone(), model.embed(a)))
            .collect();
        EmbeddingCache {
            fingerprint: model.fingerprint(),
            dim: model.config.dim,
            entries,
        }
    }

    pub fn get(&self, id: &NewsId) -> Option<&Embedding> {
        self.entries.get(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Errors when the cache was built by a different model.
    pub fn verify(&self, model: &RelationModel) -> Result<(), RelationError> {
        if self.fingerprint == model.fingerprint() {
            Ok(())
        } else {
            Err(RelationError::CacheStale)
        }
    }

    /// File layout: `GNRC`, u32 manifest length, JSON manifest
    /// (fingerprint, dim, ids in blob order), then an f64 LE blob.
    pub fn save(&self, path: &Path) -> Result<(), RelationError> {
        let mut ids: Vec<&NewsId> = self.entries.keys().collect();
        ids.sort();
        #[derive(Serialize)]
        struct Manifest<'a> {
            fingerprint: &'a str,
            dim: usize,
            ids: Vec<&'a str>,
        }
        let manifest = serde_json::to_vec(&Manifest {
            fingerprint: &self.fingerprint,
            dim: self.dim,
            ids: ids.iter().map(|id| id.as_str()).collect(),
        })
        .map_err(|e| RelationError::CacheFormat(e.to_string()))?;

        let io_err = |source| RelationError::CacheIo {
            path: path.display().to_string(),
            source,
        };
        let mut file = fs::File::create(path).map_err(io_err)?;
        file.write_all(b"GNRC").map_err(io_err)?;
        file.write_all(&(manifest.len() as u32).to_le_bytes()).map_err(io_err)?;
        file.write_all(&manifest).map_err(io_err)?;
        for id in ids {
            for v in self.entries[id].iter() {
                file.write_all(&v.to_le_bytes()).map_err(io_err)?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, RelationError> {
        let bytes = fs::read(path).map_err(|source| RelationError::CacheIo {
            path: path.display().to_string(),
            source,
        })?;
        if bytes.len() < 8 || &bytes[0..4] != b"GNRC" {
            return Err(RelationError::CacheFormat("bad magic".into()));
        }
        let mlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        if bytes.len() < 8 + mlen {
            return Err(RelationError::CacheFormat("truncated manifest".into()));
        }
        #[derive(Deserialize)]
        struct Manifest {
            fingerprint: String,
            dim: usize,
            ids: Vec<String>,
        }
        let manifest: Manifest = serde_json::from_slice(&bytes[8..8 + mlen])
            .map_err(|e| RelationError::CacheFormat(e.to_string()))?;
        let blob = &bytes[8 + mlen..];
        let need = manifest.ids.len() * manifest.dim * 8;
        if blob.len() < need {
            return Err(RelationError::CacheFormat(format!(
                "blob truncated: need {need} bytes, found {}",
                blob.len()
            )));
        }
        let mut entries = HashMap::with_capacity(manifest.ids.len());
        for (i, id) in manifest.ids.iter().enumerate() {
            let start = i * manifest.dim * 8;
            let values: Vec<f64> = blob[start..start + manifest.dim * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            entries.insert(NewsId::new(id.clone()), Array1::from_vec(values));
        }
        Ok(EmbeddingCache {
            fingerprint: manifest.fingerprint,
            dim: manifest.dim,
            entries,
        })
    }
}
