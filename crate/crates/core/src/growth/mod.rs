//! Aging-evolution growth search with the ε cost-accuracy metric.

mod evaluator;
mod metric;
mod search;

pub use evaluator::{Evaluation, Evaluator, SurrogateEvaluator, TrainingEvaluator};
pub use metric::{epsilon_metric, fit_k};
pub use search::{
    aging_search, read_history, write_history, Baseline, SearchConfig, SearchOutcome, SearchRecord, StopReason,
};
