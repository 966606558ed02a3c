//! Pipeline runner: one TOML config file, one subcommand per stage.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 provider error,
//! 5 internal error.

mod commands;
mod config;
mod report;

use std::fmt;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Debug)]
pub enum AppError {
    Config(String),
    Data(String),
    Provider(String),
    Internal(String),
}

impl fmt::Display for AppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AppError::Config(m) => write!(f, "config error: {m}"),
            AppError::Data(m) => write!(f, "data error: {m}"),
            AppError::Provider(m) => write!(f, "provider error: {m}"),
            AppError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl AppError {
    fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => 2,
            AppError::Data(_) => 3,
            AppError::Provider(_) => 4,
            AppError::Internal(_) => 5,
        }
    }
}

impl From<gnr::corpus::CorpusError> for AppError {
    fn from(e: gnr::corpus::CorpusError) -> Self {
        AppError::Data(e.to_string())
    }
}

impl From<gnr::gateway::GatewayError> for AppError {
    fn from(e: gnr::gateway::GatewayError) -> Self {
        use gnr::gateway::GatewayError as G;
        match e {
            G::Config(m) => AppError::Config(m),
            G::Credential(_) | G::Transport { .. } | G::Timeout { .. } | G::Provider { .. }
            | G::MalformedResponse(_) => AppError::Provider(e.to_string()),
            other => AppError::Data(other.to_string()),
        }
    }
}

impl From<gnr::checkpoint::CheckpointError> for AppError {
    fn from(e: gnr::checkpoint::CheckpointError) -> Self {
        AppError::Data(e.to_string())
    }
}

impl From<gnr::ranker::RankError> for AppError {
    fn from(e: gnr::ranker::RankError) -> Self {
        AppError::Data(e.to_string())
    }
}

impl From<gnr::relation::RelationError> for AppError {
    fn from(e: gnr::relation::RelationError) -> Self {
        AppError::Data(e.to_string())
    }
}

impl From<gnr::explorer::ExploreError> for AppError {
    fn from(e: gnr::explorer::ExploreError) -> Self {
        AppError::Data(e.to_string())
    }
}

impl From<gnr::fusion::FusionError> for AppError {
    fn from(e: gnr::fusion::FusionError) -> Self {
        match e {
            gnr::fusion::FusionError::Gateway(g) => g.into(),
            other => AppError::Data(other.to_string()),
        }
    }
}

impl From<gnr::align::AlignError> for AppError {
    fn from(e: gnr::align::AlignError) -> Self {
        AppError::Data(e.to_string())
    }
}

impl From<gnr::textgen::GeneratorError> for AppError {
    fn from(e: gnr::textgen::GeneratorError) -> Self {
        AppError::Data(e.to_string())
    }
}

impl From<gnr::eval::EvalError> for AppError {
    fn from(e: gnr::eval::EvalError) -> Self {
        AppError::Data(e.to_string())
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::Internal(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "gnr",
    version,
    about = "News pipeline: dual-level ranking, related-news exploration, narrative fusion"
)]
struct Cli {
    /// Path to the run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the configured output directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// Print the built-in default configuration and exit.
    #[arg(long)]
    print_defaults: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Load, validate, and filter the corpus; write ingestion stats.
    Ingest,
    /// Ask the provider for 1-3 theme topics per article; write a sidecar.
    AnnotateThemes,
    /// Ask the provider for one interest profile per user; write profiles.
    ProfileUsers,
    /// Train the click ranker and write its checkpoint.
    TrainRanker,
    /// Train the news-relation model and write its checkpoint and cache.
    TrainRelation,
    /// Build a reference news set per impression.
    BuildRefsets,
    /// Fuse each built reference set into a narrative via the provider.
    Fuse,
    /// Fine-tune the local generator: supervised pass, then user-interest
    /// alignment on ranked narrative triples.
    TrainUift,
    /// Ranking metrics (AUC, MRR, NDCG@k) on held-out behaviors.
    EvalRank,
    /// Win rate and consistency rate for fused narratives.
    EvalGen,
    /// Consistency over the relation-threshold grid and win rate over the
    /// reference-size grid.
    Sweep,
    /// End-to-end offline run on the bundled fixture with the stub provider.
    Demo,
}

fn main() {
    let cli = Cli::parse();

    if cli.print_defaults {
        print!("{}", RunConfig::default().to_toml());
        std::process::exit(0);
    }

    let Some(command) = cli.command else {
        eprintln!("error: missing subcommand (try --help or --print-defaults)");
        std::process::exit(2);
    };

    match dispatch(command, cli.config, cli.out_dir) {
        Ok(()) => {}
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(err.exit_code());
        }
    }
}

fn dispatch(
    command: Command,
    config_path: Option<PathBuf>,
    out_dir: Option<PathBuf>,
) -> Result<(), AppError> {
    let mut config = match (&command, &config_path) {
        // The demo is self-contained; a config may still tweak it.
        (Command::Demo, None) => RunConfig::default(),
        (_, Some(path)) => RunConfig::load(path)?,
        (_, None) => {
            return Err(AppError::Config(
                "--config is required for this subcommand".into(),
            ))
        }
    };
    if let Some(dir) = out_dir {
        config.out_dir = dir;
    }

    match command {
        Command::Ingest => commands::ingest(&config),
        Command::AnnotateThemes => commands::annotate_themes(&config),
        Command::ProfileUsers => commands::profile_users(&config),
        Command::TrainRanker => commands::train_ranker(&config),
        Command::TrainRelation => commands::train_relation(&config),
        Command::BuildRefsets => commands::build_refsets(&config),
        Command::Fuse => commands::fuse(&config),
        Command::TrainUift => commands::train_uift(&config),
        Command::EvalRank => commands::eval_rank(&config),
        Command::EvalGen => commands::eval_gen(&config),
        Command::Sweep => commands::sweep(&config),
        Command::Demo => commands::demo(&config),
    }
}
