//! Offline metrics, baselines, time splits, reports and hyperparameter search.

mod metrics;
mod popularity;
mod report;
mod search;
mod split;

pub use metrics::{auc_roc, overall_accuracy, relative_change};
pub use popularity::{PopularityScorer, POPULARITY_PRIOR};
pub use report::{
    top1_accuracy, top1_candidates, top1_from_candidates, CandidateSet, EvalOptions, EvalReport, Evaluator, Metric,
    ModelMetrics, RandomScorer, RelativeChange, DEFAULT_K_NEGATIVES, DEFAULT_THRESHOLD, REPORT_ORDER,
};
pub use search::{random_search, sample_dl_config, SearchTrial};
pub use split::{SplitSpec, Splits};
