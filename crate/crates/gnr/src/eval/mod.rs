//! Evaluation: ranking metrics with a brute-force reference oracle, plus
//! win rate and consistency rate for generated narratives.

pub mod generation;
pub mod metrics;
pub mod oracle;

pub use generation::{
    consistency_rate, narrative_as_article, render_consistency_prompt, win_rate,
    ConsistencyReport, Judge, JudgeOutcome, WinRateReport,
};
pub use metrics::{ranking_metrics, EvalError, ImpressionMetrics, LabeledScores, MetricsReport};
