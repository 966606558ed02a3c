//! Run configuration: one TOML file drives every subcommand. All fields
//! have defaults; `--print-defaults` prints the effective default tree.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use gnr::gateway::ProviderConfig;
use gnr::optim::OptimKind;
use gnr::ranker::{FocalMode, ViewMode};
use gnr::textenc::EncoderConfig;

use crate::AppError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub paths: Paths,
    pub filter: FilterConfig,
    pub provider: ProviderSection,
    pub encoder: EncoderConfig,
    pub ranker: RankerSection,
    pub relation: RelationSection,
    pub explorer: ExplorerSection,
    pub generator: GeneratorSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 17,
            out_dir: PathBuf::from("out"),
            paths: Paths::default(),
            filter: FilterConfig::default(),
            provider: ProviderSection::default(),
            encoder: EncoderConfig::default(),
            ranker: RankerSection::default(),
            relation: RelationSection::default(),
            explorer: ExplorerSection::default(),
            generator: GeneratorSection::default(),
            eval: EvalSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub news: PathBuf,
    pub behaviors: PathBuf,
    /// Held-out behaviors for ranking evaluation; falls back to `behaviors`.
    pub eval_behaviors: Option<PathBuf>,
    pub relation_pairs: PathBuf,
    /// Theme sidecar applied after loading the news file, when present.
    pub themes: Option<PathBuf>,
    /// Preference triples for generator training.
    pub triples: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            news: PathBuf::from("fixtures/news.tsv"),
            behaviors: PathBuf::from("fixtures/behaviors.tsv"),
            eval_behaviors: Some(PathBuf::from("fixtures/behaviors_eval.tsv")),
            relation_pairs: PathBuf::from("fixtures/relation_pairs.tsv"),
            themes: Some(PathBuf::from("fixtures/themes.tsv")),
            triples: Some(PathBuf::from("fixtures/triples.jsonl")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub min_history: usize,
    pub max_history: usize,
    pub category: String,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            min_history: 5,
            max_history: 15,
            category: "politics".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Stub,
    Http,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderSection {
    pub kind: ProviderKind,
    pub endpoint: String,
    pub model: String,
    pub credential_env: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub max_parallel: usize,
    pub temperature: f64,
    /// Append every exchange to `<out_dir>/exchanges.jsonl`.
    pub exchange_log: bool,
    /// Replay responses recorded in this log before calling out.
    pub replay_log: Option<PathBuf>,
}

impl Default for ProviderSection {
    fn default() -> Self {
        let p = ProviderConfig::default();
        ProviderSection {
            kind: ProviderKind::Stub,
            endpoint: p.endpoint,
            model: p.model,
            credential_env: p.credential_env,
            timeout_secs: p.timeout_secs,
            max_retries: p.max_retries,
            max_parallel: p.max_parallel,
            temperature: p.temperature,
            exchange_log: true,
            replay_log: None,
        }
    }
}

impl ProviderSection {
    pub fn provider_config(&self) -> ProviderConfig {
        ProviderConfig {
            endpoint: self.endpoint.clone(),
            model: self.model.clone(),
            credential_env: self.credential_env.clone(),
            timeout_secs: self.timeout_secs,
            max_retries: self.max_retries,
            max_parallel: self.max_parallel,
            temperature: self.temperature,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankerSection {
    pub k_neg: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimKind,
    pub news_view: ViewMode,
    pub user_view: ViewMode,
}

impl Default for RankerSection {
    fn default() -> Self {
        RankerSection {
            k_neg: 4,
            learning_rate: 1e-4,
            epochs: 5,
            batch_size: 8,
            optimizer: OptimKind::Sgd,
            news_view: ViewMode::Dual,
            user_view: ViewMode::Dual,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelationSection {
    pub margin: f64,
    /// Relation threshold alpha used during exploration.
    pub threshold: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub optimizer: OptimKind,
}

impl Default for RelationSection {
    fn default() -> Self {
        RelationSection {
            margin: 0.5,
            threshold: 0.8,
            learning_rate: 1e-5,
            epochs: 5,
            optimizer: OptimKind::Adam,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplorerSection {
    pub t_min: usize,
    pub t_max: usize,
    pub focal_mode: FocalMode,
    pub exclude_history: bool,
}

impl Default for ExplorerSection {
    fn default() -> Self {
        ExplorerSection {
            t_min: 3,
            t_max: 4,
            focal_mode: FocalMode::Ranked,
            exclude_history: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSection {
    pub dim: usize,
    pub heads: usize,
    pub context: usize,
    pub sft_learning_rate: f64,
    pub sft_epochs: usize,
    pub align_learning_rate: f64,
    pub align_epochs: usize,
    pub optimizer: OptimKind,
}

impl Default for GeneratorSection {
    fn default() -> Self {
        GeneratorSection {
            dim: 32,
            heads: 2,
            context: 64,
            sft_learning_rate: 5e-5,
            sft_epochs: 10,
            align_learning_rate: 1e-5,
            align_epochs: 5,
            optimizer: OptimKind::Adam,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeKind {
    Builtin,
    Llm,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub ndcg_k: usize,
    pub judge: JudgeKind,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            ndcg_k: 5,
            judge: JudgeKind::Builtin,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, AppError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            AppError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let config: RunConfig = toml::from_str(&text)
            .map_err(|e| AppError::Config(format!("config {}: {e}", path.display())))?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Field-level validation of values and referenced input paths.
    pub fn validate(&self, needs: &[InputPath]) -> Result<(), AppError> {
        let field_err = |field: &str, message: String| {
            Err(AppError::Config(format!("{field}: {message}")))
        };
        if self.encoder.dim == 0 || self.encoder.heads == 0 {
            return field_err("encoder.dim/heads", "must be positive".into());
        }
        if self.encoder.dim % self.encoder.heads != 0 {
            return field_err(
                "encoder.heads",
                format!("{} does not divide dim {}", self.encoder.heads, self.encoder.dim),
            );
        }
        if self.generator.dim == 0 || self.generator.heads == 0 || self.generator.dim % self.generator.heads != 0 {
            return field_err("generator.heads", "must be positive and divide generator.dim".into());
        }
        if self.ranker.k_neg == 0 {
            return field_err("ranker.k_neg", "must be at least 1".into());
        }
        if self.ranker.learning_rate < 0.0 {
            return field_err("ranker.learning_rate", "must be non-negative".into());
        }
        if self.relation.margin <= 0.0 {
            return field_err("relation.margin", "must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.relation.threshold) {
            return field_err("relation.threshold", "must lie in [0, 1]".into());
        }
        if self.explorer.t_min < 2 || self.explorer.t_min > self.explorer.t_max {
            return field_err(
                "explorer.t_min/t_max",
                format!("need 2 <= t_min <= t_max, got {}..{}", self.explorer.t_min, self.explorer.t_max),
            );
        }
        if self.filter.min_history > self.filter.max_history {
            return field_err("filter.min_history", "exceeds filter.max_history".into());
        }
        if self.provider.timeout_secs <= 0.0 {
            return field_err("provider.timeout_secs", "must be positive".into());
        }
        if self.provider.max_parallel == 0 {
            return field_err("provider.max_parallel", "must be at least 1".into());
        }
        if self.eval.ndcg_k == 0 {
            return field_err("eval.ndcg_k", "must be at least 1".into());
        }

        for need in needs {
            let (field, path) = match need {
                InputPath::News => ("paths.news", Some(self.paths.news.clone())),
                InputPath::Behaviors => ("paths.behaviors", Some(self.paths.behaviors.clone())),
                InputPath::EvalBehaviors => (
                    "paths.eval_behaviors",
                    Some(self
                        .paths
                        .eval_behaviors
                        .clone()
                        .unwrap_or_else(|| self.paths.behaviors.clone())),
                ),
                InputPath::RelationPairs => {
                    ("paths.relation_pairs", Some(self.paths.relation_pairs.clone()))
                }
                InputPath::Themes => ("paths.themes", self.paths.themes.clone()),
                InputPath::Triples => ("paths.triples", self.paths.triples.clone()),
            };
            match path {
                Some(p) if p.exists() => {}
                Some(p) => {
                    return field_err(field, format!("input path {} does not exist", p.display()))
                }
                None => return field_err(field, "required by this command but not set".into()),
            }
        }
        Ok(())
    }

    pub fn eval_behaviors_path(&self) -> PathBuf {
        self.paths
            .eval_behaviors
            .clone()
            .unwrap_or_else(|| self.paths.behaviors.clone())
    }
}

/// Input files a command depends on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputPath {
    News,
    Behaviors,
    EvalBehaviors,
    RelationPairs,
    Themes,
    Triples,
}
