//! Subcommand implementations. Every command reads inputs named by the
//! config, writes its artifacts under `out_dir`, and echoes the resolved
//! config in its report.

use std::collections::{BTreeMap, HashMap};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use gnr::align::{read_triples, train_alignment, violation_rate, AlignConfig};
use gnr::checkpoint::{
    load_ranker, load_relation, save_generator, save_ranker, save_relation,
};
use gnr::corpus::{
    filter_impressions, load_behaviors, load_news, load_relation_pairs, CorpusStore, Impression,
    NewsArticle,
};
use gnr::eval::{
    consistency_rate, ranking_metrics, win_rate, Judge, LabeledScores, WinRateReport,
};
use gnr::explorer::{
    build_reference_set, BuildOutcome, ExplorerConfig, ReferenceNewsSet, ReferenceSetRecord,
};
use gnr::fusion::{fuse_narrative, FusionError, Narrative, NarrativeRecord};
use gnr::gateway::{
    parse_profile_response, parse_theme_response, render_profile_prompt, render_theme_prompt,
    Gateway, ProviderTag, ThemeAnnotation, UserInterestProfile,
};
use gnr::ranker::{
    build_vocabulary, score_pair, RankerModel, TrainConfig as RankerTrainConfig,
};
use gnr::relation::{EmbeddingCache, RelationConfig, RelationModel};
use gnr::textgen::{build_generator_vocab, train_sft, GeneratorConfig, SftConfig, TinyGenerator};

use crate::config::{InputPath, JudgeKind, ProviderKind, RunConfig};
use crate::report::Report;
use crate::AppError;

const RANKER_FILE: &str = "ranker.gnrw";
const RELATION_FILE: &str = "relation.gnrw";
const RELATION_CACHE_FILE: &str = "relation_cache.gnrc";
const GENERATOR_FILE: &str = "generator.gnrw";
const REFSETS_FILE: &str = "refsets.jsonl";
const NARRATIVES_FILE: &str = "narratives.jsonl";
const PROFILES_FILE: &str = "profiles.jsonl";
const THEMES_FILE: &str = "themes_annotated.tsv";

// Stage offsets applied to the global seed so each component draws from an
// independent stream.
const SEED_RANKER_INIT: u64 = 0;
const SEED_RANKER_TRAIN: u64 = 1;
const SEED_RELATION_INIT: u64 = 2;
const SEED_RELATION_TRAIN: u64 = 3;
const SEED_GENERATOR_INIT: u64 = 4;
const SEED_SFT: u64 = 5;
const SEED_ALIGN: u64 = 6;
const SEED_STUB: u64 = 7;

fn stage_seed(config: &RunConfig, offset: u64) -> u64 {
    config.seed.wrapping_add(offset)
}

fn ensure_out_dir(config: &RunConfig) -> Result<PathBuf, AppError> {
    std::fs::create_dir_all(&config.out_dir).map_err(|e| {
        AppError::Internal(format!(
            "cannot create out dir {}: {e}",
            config.out_dir.display()
        ))
    })?;
    Ok(config.out_dir.clone())
}

/// Builds the configured gateway. Each command logs to its own exchange
/// file, recreated per run so repeated runs stay byte-identical.
fn make_gateway(config: &RunConfig, log_name: &str) -> Result<Gateway, AppError> {
    let mut gateway = match config.provider.kind {
        ProviderKind::Stub => Gateway::stub(stage_seed(config, SEED_STUB)),
        ProviderKind::Http => Gateway::http(config.provider.provider_config())?,
    };
    if config.provider.exchange_log {
        let path = config.out_dir.join(log_name);
        let _ = std::fs::remove_file(&path);
        gateway = gateway.with_exchange_log(&path)?;
    }
    if let Some(replay) = &config.provider.replay_log {
        gateway = gateway.with_replay_from(replay)?;
    }
    Ok(gateway)
}

/// Loads the news store, applies the theme sidecar when configured, and
/// returns the store plus filtered impressions from `behaviors_path`.
fn load_filtered(
    config: &RunConfig,
    behaviors_path: &Path,
) -> Result<(CorpusStore, Vec<Impression>, usize), AppError> {
    let mut store = load_news(&config.paths.news)?;
    if let Some(themes) = &config.paths.themes {
        store.apply_theme_sidecar(themes)?;
    }
    let raw = load_behaviors(behaviors_path, &store)?;
    let kept = filter_impressions(
        &raw,
        config.filter.min_history,
        config.filter.max_history,
        &config.filter.category,
        &store,
    );
    let dropped = raw.len() - kept.len();
    Ok((store, kept, dropped))
}

/// Runs `f` over items with at most `workers` concurrent calls, preserving
/// item order in the result.
fn parallel_map<T: Sync, R: Send>(
    items: &[T],
    workers: usize,
    f: impl Fn(&T) -> R + Sync,
) -> Vec<R> {
    if workers <= 1 || items.len() <= 1 {
        return items.iter().map(&f).collect();
    }
    let cursor = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers.min(items.len()) {
            scope.spawn(|| loop {
                let i = cursor.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let result = f(&items[i]);
                slots.lock().expect("slot lock")[i] = Some(result);
            });
        }
    });
    slots
        .into_inner()
        .expect("slot lock")
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

pub fn ingest(config: &RunConfig) -> Result<(), AppError> {
    config.validate(&[InputPath::News, InputPath::Behaviors, InputPath::RelationPairs])?;
    let out = ensure_out_dir(config)?;
    let (store, kept, dropped) = load_filtered(config, &config.paths.behaviors)?;
    let pairs = load_relation_pairs(&config.paths.relation_pairs, &store)?;

    let mut categories: BTreeMap<&str, usize> = BTreeMap::new();
    let mut themed = 0usize;
    for article in store.iter() {
        *categories.entry(article.category.as_str()).or_insert(0) += 1;
        if article.theme_topics.is_some() {
            themed += 1;
        }
    }

    let mut report = Report::new("ingest", config);
    report.section("corpus");
    report.kv("articles", store.len());
    report.kv("theme_annotated", themed);
    for (category, count) in &categories {
        report.kv(&format!("category.{category}"), count);
    }
    report.section("behaviors");
    report.kv("impressions_kept", kept.len());
    report.kv("impressions_dropped_by_filter", dropped);
    report.section("relation_pairs");
    report.kv("pairs", pairs.pairs.len());
    report.write(&out.join("ingest_report.txt"))?;
    Ok(())
}

pub fn annotate_themes(config: &RunConfig) -> Result<(), AppError> {
    config.validate(&[InputPath::News])?;
    let out = ensure_out_dir(config)?;
    let store = load_news(&config.paths.news)?;
    let gateway = make_gateway(config, "exchanges_annotate.jsonl")?;

    let articles: Vec<&NewsArticle> = store.iter().collect();
    let workers = if gateway.provider_tag() == ProviderTag::Real {
        config.provider.max_parallel
    } else {
        1
    };
    let results = parallel_map(&articles, workers, |article| {
        let prompt = render_theme_prompt(article);
        gateway
            .complete(&prompt)
            .and_then(|exchange| parse_theme_response(&exchange.response))
            .and_then(|topics| ThemeAnnotation::new(article.id.clone(), topics))
    });

    let mut annotated = store.clone();
    let mut failures = Vec::new();
    for (article, result) in articles.iter().zip(results) {
        match result {
            Ok(annotation) => {
                let mut updated = (*article).clone();
                updated.theme_topics = Some(annotation.topics);
                replace_article(&mut annotated, updated);
            }
            Err(e) => failures.push(format!("{}: {e}", article.id)),
        }
    }
    let sidecar = out.join(THEMES_FILE);
    let written = annotated.write_theme_sidecar(&sidecar)?;

    let mut report = Report::new("annotate-themes", config);
    report.section("annotation");
    report.kv("articles", store.len());
    report.kv("annotated", written);
    report.kv("failures", failures.len());
    for failure in &failures {
        report.line(format!("failed {failure}"));
    }
    if !failures.is_empty() {
        report.line("artifacts are partial");
    }
    report.write(&out.join("annotate_report.txt"))?;

    if failures.is_empty() {
        Ok(())
    } else {
        Err(AppError::Provider(format!(
            "{} of {} theme annotations failed; partial sidecar at {}",
            failures.len(),
            store.len(),
            sidecar.display()
        )))
    }
}

fn replace_article(store: &mut CorpusStore, updated: NewsArticle) {
    // Stores are append-only; rebuild with the one article swapped.
    let mut rebuilt = CorpusStore::new();
    for article in store.iter() {
        let next = if article.id == updated.id {
            updated.clone()
        } else {
            article.clone()
        };
        rebuilt.insert_article(next).expect("ids unchanged");
    }
    *store = rebuilt;
}

/// Majority category plus the first five distinct theme topics; the offline
/// fallback when a user has no provider-generated profile.
fn derived_profile(user_key: &str, history: &[&NewsArticle]) -> UserInterestProfile {
    let mut categories: Vec<String> = Vec::new();
    let mut counts: HashMap<String, usize> = HashMap::new();
    let mut topics: Vec<String> = Vec::new();
    for article in history {
        if !counts.contains_key(&article.category) {
            categories.push(article.category.clone());
        }
        *counts.entry(article.category.clone()).or_insert(0) += 1;
        if let Some(themes) = &article.theme_topics {
            for topic in themes {
                if !topics.contains(topic) {
                    topics.push(topic.clone());
                }
            }
        }
    }
    topics.truncate(5);
    let majority = categories
        .iter()
        .max_by_key(|c| counts[*c])
        .cloned()
        .unwrap_or_else(|| "news".into());
    UserInterestProfile {
        user_key: user_key.to_string(),
        categories: vec![majority],
        topics,
        supporting: vec![],
    }
}

pub fn profile_users(config: &RunConfig) -> Result<(), AppError> {
    config.validate(&[InputPath::News, InputPath::Behaviors, InputPath::Themes])?;
    let out = ensure_out_dir(config)?;
    let (store, impressions, _) = load_filtered(config, &config.paths.behaviors)?;
    let gateway = make_gateway(config, "exchanges_profile.jsonl")?;

    // One profile per user, from their first impression's history.
    let mut users: Vec<(&str, &Impression)> = Vec::new();
    for imp in &impressions {
        if !users.iter().any(|(u, _)| *u == imp.user_id) {
            users.push((&imp.user_id, imp));
        }
    }

    let workers = if gateway.provider_tag() == ProviderTag::Real {
        config.provider.max_parallel
    } else {
        1
    };
    let results = parallel_map(&users, workers, |(user_id, imp)| {
        let history: Vec<&NewsArticle> =
            imp.history.iter().filter_map(|id| store.get(id)).collect();
        render_profile_prompt(&history)
            .and_then(|prompt| gateway.complete(&prompt))
            .and_then(|exchange| parse_profile_response(&exchange.response))
            .map(|mut profile| {
                profile.user_key = user_id.to_string();
                profile
            })
    });

    let mut profiles = Vec::new();
    let mut failures = Vec::new();
    for ((user_id, _), result) in users.iter().zip(results) {
        match result {
            Ok(profile) => profiles.push(profile),
            Err(e) => failures.push(format!("{user_id}: {e}")),
        }
    }

    let path = out.join(PROFILES_FILE);
    let mut file = std::fs::File::create(&path)?;
    for profile in &profiles {
        let line = serde_json::to_string(profile)
            .map_err(|e| AppError::Internal(e.to_string()))?;
        writeln!(file, "{line}")?;
    }

    let mut report = Report::new("profile-users", config);
    report.section("profiles");
    report.kv("users", users.len());
    report.kv("profiled", profiles.len());
    report.kv("failures", failures.len());
    for failure in &failures {
        report.line(format!("failed {failure}"));
    }
    report.write(&out.join("profile_report.txt"))?;

    if failures.is_empty() {
        Ok(())
    } else {
        Err(AppError::Provider(format!(
            "{} of {} profiles failed; partial file at {}",
            failures.len(),
            users.len(),
            path.display()
        )))
    }
}

fn read_profiles(path: &Path) -> Result<HashMap<String, UserInterestProfile>, AppError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| AppError::Data(format!("cannot read profiles {}: {e}", path.display())))?;
    let mut map = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let profile: UserInterestProfile = serde_json::from_str(line).map_err(|e| {
            AppError::Data(format!("profiles {}:{}: {e}", path.display(), lineno + 1))
        })?;
        map.insert(profile.user_key.clone(), profile);
    }
    Ok(map)
}

pub fn train_ranker(config: &RunConfig) -> Result<(), AppError> {
    config.validate(&[InputPath::News, InputPath::Behaviors])?;
    let out = ensure_out_dir(config)?;
    let (store, impressions, dropped) = load_filtered(config, &config.paths.behaviors)?;

    let vocab = build_vocabulary(&store, config.encoder.min_token_freq);
    let mut model = RankerModel::new(
        vocab,
        config.encoder,
        config.ranker.news_view,
        config.ranker.user_view,
        stage_seed(config, SEED_RANKER_INIT),
    );
    let train_config = RankerTrainConfig {
        k_neg: config.ranker.k_neg,
        learning_rate: config.ranker.learning_rate,
        epochs: config.ranker.epochs,
        batch_size: config.ranker.batch_size,
        seed: stage_seed(config, SEED_RANKER_TRAIN),
        optimizer: config.ranker.optimizer,
    };
    let summary = gnr::ranker::train_ranker(&mut model, &impressions, &store, &train_config)?;
    save_ranker(&out.join(RANKER_FILE), &model)?;

    let mut report = Report::new("train-ranker", config);
    report.section("training");
    report.kv("impressions", impressions.len());
    report.kv("impressions_dropped_by_filter", dropped);
    report.kv("samples_per_epoch", summary.samples_per_epoch);
    report.kv("skipped_impressions", summary.skipped_impressions);
    report.kv("replacement_sampled", summary.replacement_sampled);
    report.kv("vocabulary", model.vocab.len());
    report.section("loss trace");
    for (epoch, loss) in summary.epoch_losses.iter().enumerate() {
        report.line(format!("epoch {epoch}: {loss:.6}"));
    }
    report.write(&out.join("train_ranker_report.txt"))?;
    Ok(())
}

pub fn train_relation(config: &RunConfig) -> Result<(), AppError> {
    config.validate(&[InputPath::News, InputPath::RelationPairs])?;
    let out = ensure_out_dir(config)?;
    let mut store = load_news(&config.paths.news)?;
    if let Some(themes) = &config.paths.themes {
        if themes.exists() {
            store.apply_theme_sidecar(themes)?;
        }
    }
    let pairs = load_relation_pairs(&config.paths.relation_pairs, &store)?;

    let vocab = build_vocabulary(&store, config.encoder.min_token_freq);
    let mut model = RelationModel::new(
        vocab,
        config.encoder,
        stage_seed(config, SEED_RELATION_INIT),
    );
    let relation_config = RelationConfig {
        margin: config.relation.margin,
        threshold: config.relation.threshold,
        learning_rate: config.relation.learning_rate,
        epochs: config.relation.epochs,
        seed: stage_seed(config, SEED_RELATION_TRAIN),
        optimizer: config.relation.optimizer,
    };
    let summary = gnr::relation::train_relation(&mut model, &pairs, &store, &relation_config)?;
    save_relation(&out.join(RELATION_FILE), &model)?;
    let cache = EmbeddingCache::build(&model, &store);
    cache.save(&out.join(RELATION_CACHE_FILE))?;

    let mut report = Report::new("train-relation", config);
    report.section("training");
    report.kv("pairs", pairs.pairs.len());
    report.kv("triplets_per_epoch", summary.triplets_per_epoch);
    report.kv("cached_embeddings", cache.len());
    report.section("loss trace");
    for (epoch, loss) in summary.epoch_losses.iter().enumerate() {
        report.line(format!("epoch {epoch}: {loss:.6}"));
    }
    report.write(&out.join("train_relation_report.txt"))?;
    Ok(())
}

fn load_models(out: &Path) -> Result<(RankerModel, RelationModel, Option<EmbeddingCache>), AppError> {
    let ranker = load_ranker(&out.join(RANKER_FILE))?;
    let relation = load_relation(&out.join(RELATION_FILE))?;
    let cache_path = out.join(RELATION_CACHE_FILE);
    let cache = if cache_path.exists() {
        let cache = EmbeddingCache::load(&cache_path)?;
        cache.verify(&relation)?;
        Some(cache)
    } else {
        None
    };
    Ok((ranker, relation, cache))
}

pub fn build_refsets(config: &RunConfig) -> Result<(), AppError> {
    config.validate(&[InputPath::News, InputPath::Behaviors])?;
    let out = ensure_out_dir(config)?;
    let (store, impressions, _) = load_filtered(config, &config.paths.behaviors)?;
    let (ranker, relation, cache) = load_models(&out)?;
    let cache = match cache {
        Some(cache) => cache,
        None => EmbeddingCache::build(&relation, &store),
    };

    let explorer_config = ExplorerConfig {
        alpha: config.relation.threshold,
        t_min: config.explorer.t_min,
        t_max: config.explorer.t_max,
        focal_mode: config.explorer.focal_mode,
        exclude_history: config.explorer.exclude_history,
    };

    let mut records = Vec::with_capacity(impressions.len());
    let mut built = 0usize;
    let mut insufficient = 0usize;
    for imp in &impressions {
        let outcome =
            build_reference_set(imp, &ranker, &relation, &store, &explorer_config, Some(&cache))?;
        match &outcome {
            BuildOutcome::Built(_) => built += 1,
            BuildOutcome::Insufficient { .. } => insufficient += 1,
        }
        records.push(ReferenceSetRecord {
            impression_id: imp.impression_id.clone(),
            outcome,
        });
    }
    gnr::explorer::write_reference_sets(&out.join(REFSETS_FILE), &records)?;

    let mut report = Report::new("build-refsets", config);
    report.section("reference sets");
    report.kv("impressions", impressions.len());
    report.kv("built", built);
    report.kv("insufficient", insufficient);
    report.kv("alpha", explorer_config.alpha);
    report.kv("t_min", explorer_config.t_min);
    report.kv("t_max", explorer_config.t_max);
    report.write(&out.join("build_refsets_report.txt"))?;
    Ok(())
}

pub fn fuse(config: &RunConfig) -> Result<(), AppError> {
    config.validate(&[InputPath::News, InputPath::Behaviors])?;
    let out = ensure_out_dir(config)?;
    let (store, impressions, _) = load_filtered(config, &config.paths.behaviors)?;
    let records = gnr::explorer::read_reference_sets(&out.join(REFSETS_FILE))?;
    let gateway = make_gateway(config, "exchanges_fuse.jsonl")?;

    let profiles = {
        let path = out.join(PROFILES_FILE);
        if path.exists() {
            read_profiles(&path)?
        } else {
            HashMap::new()
        }
    };
    let by_impression: HashMap<&str, &Impression> = impressions
        .iter()
        .map(|imp| (imp.impression_id.as_str(), imp))
        .collect();

    struct FuseItem<'a> {
        impression_id: String,
        set: ReferenceNewsSet,
        profile: UserInterestProfile,
        _imp: &'a Impression,
    }

    let mut items = Vec::new();
    let mut skipped_insufficient = 0usize;
    let mut fallback_profiles = 0usize;
    for record in records {
        let BuildOutcome::Built(set) = record.outcome else {
            skipped_insufficient += 1;
            continue;
        };
        let imp = by_impression
            .get(record.impression_id.as_str())
            .copied()
            .ok_or_else(|| {
                AppError::Data(format!(
                    "reference set {} has no matching impression in {}",
                    record.impression_id,
                    config.paths.behaviors.display()
                ))
            })?;
        let profile = match profiles.get(&imp.user_id) {
            Some(profile) => profile.clone(),
            None => {
                fallback_profiles += 1;
                let history: Vec<&NewsArticle> =
                    imp.history.iter().filter_map(|id| store.get(id)).collect();
                derived_profile(&imp.user_id, &history)
            }
        };
        items.push(FuseItem {
            impression_id: record.impression_id,
            set,
            profile,
            _imp: imp,
        });
    }

    let workers = if gateway.provider_tag() == ProviderTag::Real {
        config.provider.max_parallel
    } else {
        1
    };
    let results = parallel_map(&items, workers, |item| {
        fuse_narrative(&item.set, &item.profile, &gateway, &store)
    });

    let mut narratives = Vec::new();
    let mut failures = Vec::new();
    for (item, result) in items.iter().zip(results) {
        match result {
            Ok(narrative) => narratives.push(NarrativeRecord {
                impression_id: item.impression_id.clone(),
                narrative,
            }),
            Err(FusionError::Gateway(e)) => return Err(e.into()),
            Err(e) => failures.push(format!("{}: {e}", item.impression_id)),
        }
    }
    gnr::fusion::write_narratives(&out.join(NARRATIVES_FILE), &narratives)?;

    let mut report = Report::new("fuse", config);
    report.section("fusion");
    report.kv("reference_sets", items.len() + skipped_insufficient);
    report.kv("skipped_insufficient", skipped_insufficient);
    report.kv("fused", narratives.len());
    report.kv("fallback_profiles", fallback_profiles);
    report.kv("failures", failures.len());
    for failure in &failures {
        report.line(format!("failed {failure}"));
    }
    if !failures.is_empty() {
        report.line("artifacts are partial");
    }
    report.write(&out.join("fuse_report.txt"))?;

    if failures.is_empty() {
        Ok(())
    } else {
        Err(AppError::Provider(format!(
            "{} of {} narratives failed to fuse",
            failures.len(),
            items.len()
        )))
    }
}

pub fn train_uift(config: &RunConfig) -> Result<(), AppError> {
    config.validate(&[InputPath::Triples])?;
    let out = ensure_out_dir(config)?;
    let triples_path = config.paths.triples.as_ref().expect("validated");
    let mut triples = read_triples(triples_path)?;

    // Triples without precomputed ranks fall back to the fixed preference
    // order (ours, teacher, focal).
    let mut fixed_rank_fallbacks = 0usize;
    for triple in &mut triples {
        if triple.ranks.is_none() {
            triple.ranks = Some([1, 2, 3]);
            fixed_rank_fallbacks += 1;
        }
    }

    let mut texts = Vec::new();
    for t in &triples {
        texts.push(t.condition.clone());
        texts.push(t.ours.clone());
        texts.push(t.teacher.clone());
        texts.push(t.focal.clone());
    }
    let vocab = build_generator_vocab(texts.iter().map(String::as_str), 1);
    let generator_config = GeneratorConfig {
        dim: config.generator.dim,
        heads: config.generator.heads,
        context: config.generator.context,
        min_token_freq: 1,
    };
    let mut model = TinyGenerator::new(
        vocab,
        generator_config,
        stage_seed(config, SEED_GENERATOR_INIT),
    );

    // Supervised pass on the teacher narratives, then preference alignment.
    let sft_examples: Vec<(String, String)> = triples
        .iter()
        .map(|t| (t.condition.clone(), t.teacher.clone()))
        .collect();
    let sft_report = train_sft(
        &mut model,
        &sft_examples,
        &SftConfig {
            learning_rate: config.generator.sft_learning_rate,
            epochs: config.generator.sft_epochs,
            seed: stage_seed(config, SEED_SFT),
            optimizer: config.generator.optimizer,
        },
    )?;
    let violation_after_sft = violation_rate(&model, &triples)?;

    let align_report = train_alignment(
        &mut model,
        &triples,
        &AlignConfig {
            learning_rate: config.generator.align_learning_rate,
            epochs: config.generator.align_epochs,
            seed: stage_seed(config, SEED_ALIGN),
            optimizer: config.generator.optimizer,
        },
    )?;
    let violation_final = violation_rate(&model, &triples)?;
    save_generator(&out.join(GENERATOR_FILE), &model)?;

    let mut report = Report::new("train-uift", config);
    report.section("data");
    report.kv("triples", triples.len());
    report.kv("fixed_rank_fallbacks", fixed_rank_fallbacks);
    report.section("supervised pass");
    for (epoch, loss) in sft_report.epoch_losses.iter().enumerate() {
        report.line(format!("epoch {epoch}: cross_entropy {loss:.6}"));
    }
    report.section("alignment pass");
    report.kv("violation_rate_after_sft", format!("{violation_after_sft:.4}"));
    for (epoch, (loss, rate)) in align_report
        .epoch_losses
        .iter()
        .zip(&align_report.epoch_violation_rates)
        .enumerate()
    {
        report.line(format!("epoch {epoch}: hinge {loss:.6} violation_rate {rate:.4}"));
    }
    report.kv("violation_rate_final", format!("{violation_final:.4}"));
    report.write(&out.join("train_uift_report.txt"))?;
    Ok(())
}

pub fn eval_rank(config: &RunConfig) -> Result<(), AppError> {
    config.validate(&[InputPath::News, InputPath::EvalBehaviors])?;
    let out = ensure_out_dir(config)?;
    let (store, impressions, _) = load_filtered(config, &config.eval_behaviors_path())?;
    let ranker = load_ranker(&out.join(RANKER_FILE))?;

    let mut labeled = Vec::new();
    let mut skipped_empty_history = 0usize;
    for imp in &impressions {
        if imp.history.is_empty() {
            skipped_empty_history += 1;
            continue;
        }
        let history: Vec<&NewsArticle> =
            imp.history.iter().filter_map(|id| store.get(id)).collect();
        let user = ranker.user_embedding(&history)?;
        let mut scores = Vec::with_capacity(imp.candidates.len());
        let mut labels = Vec::with_capacity(imp.candidates.len());
        for candidate in &imp.candidates {
            let article = store.get(&candidate.id).expect("resolved at load");
            scores.push(score_pair(&user, &ranker.news_vector(article)));
            labels.push(candidate.clicked);
        }
        labeled.push(LabeledScores::new(scores, labels));
    }
    let metrics = ranking_metrics(&labeled, config.eval.ndcg_k)?;

    let mut report = Report::new("eval-rank", config);
    report.section("ranking metrics");
    report.kv("impressions", labeled.len());
    report.kv("skipped_empty_history", skipped_empty_history);
    report.kv("auc_impressions", metrics.auc_sample_count);
    report.kv("auc", format!("{:.4}", metrics.auc));
    report.kv("mrr", format!("{:.4}", metrics.mrr));
    report.kv(
        &format!("ndcg_at_{}", metrics.k),
        format!("{:.4}", metrics.ndcg_at_k),
    );
    report.write(&out.join("eval_rank_report.txt"))?;
    Ok(())
}

/// Joined evaluation inputs for one fused impression.
struct GenCase<'a> {
    set: ReferenceNewsSet,
    narrative: Narrative,
    focal: &'a NewsArticle,
    imp: &'a Impression,
}

fn gen_cases<'a>(
    store: &'a CorpusStore,
    impressions: &'a [Impression],
    out: &Path,
) -> Result<Vec<GenCase<'a>>, AppError> {
    let refsets = gnr::explorer::read_reference_sets(&out.join(REFSETS_FILE))?;
    let narratives = gnr::fusion::read_narratives(&out.join(NARRATIVES_FILE))?;
    let by_impression: HashMap<&str, &Impression> = impressions
        .iter()
        .map(|imp| (imp.impression_id.as_str(), imp))
        .collect();
    let sets: HashMap<&str, &ReferenceNewsSet> = refsets
        .iter()
        .filter_map(|r| match &r.outcome {
            BuildOutcome::Built(set) => Some((r.impression_id.as_str(), set)),
            BuildOutcome::Insufficient { .. } => None,
        })
        .collect();

    let mut cases = Vec::new();
    for record in &narratives {
        let set = sets.get(record.impression_id.as_str()).ok_or_else(|| {
            AppError::Data(format!(
                "narrative {} has no built reference set",
                record.impression_id
            ))
        })?;
        let imp = by_impression
            .get(record.impression_id.as_str())
            .ok_or_else(|| {
                AppError::Data(format!(
                    "narrative {} has no matching impression",
                    record.impression_id
                ))
            })?;
        let focal = store.get(&set.focal).ok_or_else(|| {
            AppError::Data(format!("focal {} missing from the store", set.focal))
        })?;
        cases.push(GenCase {
            set: (*set).clone(),
            narrative: record.narrative.clone(),
            focal,
            imp,
        });
    }
    Ok(cases)
}

fn run_gen_eval(
    config: &RunConfig,
    store: &CorpusStore,
    cases: &[GenCase<'_>],
    ranker: &RankerModel,
) -> Result<(WinRateReport, gnr::eval::ConsistencyReport), AppError> {
    let narratives: Vec<Narrative> = cases.iter().map(|c| c.narrative.clone()).collect();
    let focals: Vec<&NewsArticle> = cases.iter().map(|c| c.focal).collect();
    let contexts: Vec<&Impression> = cases.iter().map(|c| c.imp).collect();
    let sets: Vec<ReferenceNewsSet> = cases.iter().map(|c| c.set.clone()).collect();

    let wins = win_rate(&narratives, &focals, ranker, &contexts, store)?;
    let gateway_holder;
    let judge = match config.eval.judge {
        JudgeKind::Builtin => Judge::Builtin,
        JudgeKind::Llm => {
            gateway_holder = make_gateway(config, "exchanges_judge.jsonl")?;
            Judge::Llm(&gateway_holder)
        }
    };
    let consistency = consistency_rate(&sets, &narratives, store, judge)?;
    Ok((wins, consistency))
}

pub fn eval_gen(config: &RunConfig) -> Result<(), AppError> {
    config.validate(&[InputPath::News, InputPath::Behaviors])?;
    let out = ensure_out_dir(config)?;
    let (store, impressions, _) = load_filtered(config, &config.paths.behaviors)?;
    let ranker = load_ranker(&out.join(RANKER_FILE))?;
    let cases = gen_cases(&store, &impressions, &out)?;
    if cases.is_empty() {
        return Err(AppError::Data(
            "no fused narratives to evaluate; run build-refsets and fuse first".into(),
        ));
    }
    let (wins, consistency) = run_gen_eval(config, &store, &cases, &ranker)?;

    let mut report = Report::new("eval-gen", config);
    report.section("win rate");
    report.kv("cases", cases.len());
    report.kv("wins", wins.wins);
    report.kv("ties", wins.ties);
    report.kv("losses", wins.losses);
    report.kv("win_rate_percent", format!("{:.2}", wins.percent));
    report.section("consistency rate");
    report.kv("consistent", consistency.consistent);
    report.kv("inconsistent", consistency.inconsistent);
    report.kv("judge_failures", consistency.judge_failures);
    report.kv("consistency_percent", format!("{:.2}", consistency.percent));
    report.write(&out.join("eval_gen_report.txt"))?;
    Ok(())
}

pub fn sweep(config: &RunConfig) -> Result<(), AppError> {
    config.validate(&[InputPath::News, InputPath::Behaviors])?;
    let out = ensure_out_dir(config)?;
    let (store, impressions, _) = load_filtered(config, &config.paths.behaviors)?;
    let (ranker, relation, cache) = load_models(&out)?;
    let cache = match cache {
        Some(cache) => cache,
        None => EmbeddingCache::build(&relation, &store),
    };
    let gateway = make_gateway(config, "exchanges_sweep.jsonl")?;
    let profiles = {
        let path = out.join(PROFILES_FILE);
        if path.exists() {
            read_profiles(&path)?
        } else {
            HashMap::new()
        }
    };

    let fuse_for = |explorer_config: &ExplorerConfig| -> Result<
        (usize, usize, Vec<(ReferenceNewsSet, Narrative, &NewsArticle, &Impression)>),
        AppError,
    > {
        let mut built = Vec::new();
        let mut insufficient = 0usize;
        for imp in &impressions {
            match build_reference_set(imp, &ranker, &relation, &store, explorer_config, Some(&cache))? {
                BuildOutcome::Built(set) => built.push((imp, set)),
                BuildOutcome::Insufficient { .. } => insufficient += 1,
            }
        }
        let mut rows = Vec::new();
        for (imp, set) in built {
            let profile = profiles.get(&imp.user_id).cloned().unwrap_or_else(|| {
                let history: Vec<&NewsArticle> =
                    imp.history.iter().filter_map(|id| store.get(id)).collect();
                derived_profile(&imp.user_id, &history)
            });
            let narrative = fuse_narrative(&set, &profile, &gateway, &store)?;
            let focal = store.get(&set.focal).expect("resolved");
            rows.push((set, narrative, focal, imp));
        }
        Ok((rows.len(), insufficient, rows))
    };

    let mut report = Report::new("sweep", config);

    report.section("consistency by relation threshold");
    report.line(format!("t_max fixed at {}", config.explorer.t_max));
    for alpha in [0.6, 0.7, 0.8] {
        let explorer_config = ExplorerConfig {
            alpha,
            t_min: config.explorer.t_min,
            t_max: config.explorer.t_max,
            focal_mode: config.explorer.focal_mode,
            exclude_history: config.explorer.exclude_history,
        };
        let (fused, insufficient, rows) = fuse_for(&explorer_config)?;
        if rows.is_empty() {
            report.line(format!(
                "alpha {alpha:.1}: fused 0 (insufficient {insufficient}), consistency n/a"
            ));
            continue;
        }
        let sets: Vec<ReferenceNewsSet> = rows.iter().map(|r| r.0.clone()).collect();
        let narratives: Vec<Narrative> = rows.iter().map(|r| r.1.clone()).collect();
        let consistency = consistency_rate(&sets, &narratives, &store, Judge::Builtin)?;
        report.line(format!(
            "alpha {alpha:.1}: fused {fused} (insufficient {insufficient}), consistency {:.2}%",
            consistency.percent
        ));
    }

    report.section("win rate by reference-set size");
    report.line(format!("alpha fixed at {}", config.relation.threshold));
    for t_max in 2..=6usize {
        let explorer_config = ExplorerConfig {
            alpha: config.relation.threshold,
            t_min: 2.min(t_max),
            t_max,
            focal_mode: config.explorer.focal_mode,
            exclude_history: config.explorer.exclude_history,
        };
        let (fused, insufficient, rows) = fuse_for(&explorer_config)?;
        if rows.is_empty() {
            report.line(format!(
                "t_max {t_max}: fused 0 (insufficient {insufficient}), win rate n/a"
            ));
            continue;
        }
        let narratives: Vec<Narrative> = rows.iter().map(|r| r.1.clone()).collect();
        let focals: Vec<&NewsArticle> = rows.iter().map(|r| r.2).collect();
        let contexts: Vec<&Impression> = rows.iter().map(|r| r.3).collect();
        let wins = win_rate(&narratives, &focals, &ranker, &contexts, &store)?;
        report.line(format!(
            "t_max {t_max}: fused {fused} (insufficient {insufficient}), win rate {:.2}%",
            wins.percent
        ));
    }

    report.write(&out.join("sweep_report.txt"))?;
    Ok(())
}

const FIXTURE_NEWS: &str = include_str!("../../../fixtures/news.tsv");
const FIXTURE_THEMES: &str = include_str!("../../../fixtures/themes.tsv");
const FIXTURE_BEHAVIORS: &str = include_str!("../../../fixtures/behaviors.tsv");
const FIXTURE_BEHAVIORS_EVAL: &str = include_str!("../../../fixtures/behaviors_eval.tsv");
const FIXTURE_PAIRS: &str = include_str!("../../../fixtures/relation_pairs.tsv");
const FIXTURE_TRIPLES: &str = include_str!("../../../fixtures/triples.jsonl");

/// Demo settings: the bundled fixture, the stub provider, and dimensions
/// small enough to finish the whole pipeline in seconds on a CPU.
pub fn demo_config(base: &RunConfig) -> RunConfig {
    let mut config = base.clone();
    let data = config.out_dir.join("data");
    config.paths.news = data.join("news.tsv");
    config.paths.behaviors = data.join("behaviors.tsv");
    config.paths.eval_behaviors = Some(data.join("behaviors_eval.tsv"));
    config.paths.relation_pairs = data.join("relation_pairs.tsv");
    config.paths.themes = Some(data.join("themes.tsv"));
    config.paths.triples = Some(data.join("triples.jsonl"));

    config.provider.kind = ProviderKind::Stub;
    config.provider.replay_log = None;

    config.filter.min_history = 3;
    config.filter.max_history = 15;
    config.filter.category = "politics".into();

    config.encoder.dim = 32;
    config.encoder.heads = 4;
    config.encoder.max_text_len = 24;
    config.encoder.max_theme_len = 8;
    config.encoder.min_token_freq = 1;

    config.ranker.k_neg = 3;
    config.ranker.learning_rate = 0.05;
    config.ranker.epochs = 6;
    config.ranker.batch_size = 4;

    config.relation.margin = 0.5;
    config.relation.threshold = 0.7;
    config.relation.learning_rate = 0.01;
    config.relation.epochs = 30;

    config.explorer.t_min = 3;
    config.explorer.t_max = 4;

    config.generator.dim = 16;
    config.generator.heads = 2;
    config.generator.context = 48;
    config.generator.sft_learning_rate = 0.01;
    config.generator.sft_epochs = 6;
    config.generator.align_learning_rate = 0.005;
    config.generator.align_epochs = 4;

    config
}

pub fn demo(base: &RunConfig) -> Result<(), AppError> {
    let out = ensure_out_dir(base)?;
    let data = out.join("data");
    std::fs::create_dir_all(&data)?;
    for (name, content) in [
        ("news.tsv", FIXTURE_NEWS),
        ("themes.tsv", FIXTURE_THEMES),
        ("behaviors.tsv", FIXTURE_BEHAVIORS),
        ("behaviors_eval.tsv", FIXTURE_BEHAVIORS_EVAL),
        ("relation_pairs.tsv", FIXTURE_PAIRS),
        ("triples.jsonl", FIXTURE_TRIPLES),
    ] {
        std::fs::write(data.join(name), content)?;
    }

    let config = demo_config(base);
    ingest(&config)?;
    annotate_themes(&config)?;
    profile_users(&config)?;
    train_ranker(&config)?;
    train_relation(&config)?;
    build_refsets(&config)?;
    fuse(&config)?;
    train_uift(&config)?;
    eval_rank(&config)?;
    eval_gen(&config)?;

    let mut report = Report::new("demo", &config);
    report.section("artifacts");
    for name in [
        "ingest_report.txt",
        "annotate_report.txt",
        THEMES_FILE,
        "profile_report.txt",
        PROFILES_FILE,
        "train_ranker_report.txt",
        RANKER_FILE,
        "train_relation_report.txt",
        RELATION_FILE,
        RELATION_CACHE_FILE,
        "build_refsets_report.txt",
        REFSETS_FILE,
        "fuse_report.txt",
        NARRATIVES_FILE,
        "train_uift_report.txt",
        GENERATOR_FILE,
        "eval_rank_report.txt",
        "eval_gen_report.txt",
        "exchanges_annotate.jsonl",
        "exchanges_profile.jsonl",
        "exchanges_fuse.jsonl",
    ] {
        let path = out.join(name);
        let status = if path.exists() { "ok" } else { "missing" };
        report.line(format!("{name}: {status}"));
    }
    report.write(&out.join("run_report.txt"))?;
    Ok(())
}
