//! Scoring against gold data, full-dataset evaluation runs with ablation
//! toggles, and the entity-shuffle dataset transform.

mod metrics;
mod run;
mod shuffle;

pub use metrics::{answer_metrics, normalize_answer, retrieval_metrics, Metrics};
pub use run::{run_eval, Aggregate, EvalConfig, EvalDataset, EvalReport, ExampleResult, Setting};
pub use shuffle::{read_category_map, shuffle_entities, CategoryEntry, ShuffleError, ShuffleOutcome};
