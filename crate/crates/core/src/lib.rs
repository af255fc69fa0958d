//! Explicit caption editing.
//!
//! - [`edit_script`]: word tokens and minimal KEEP/DELETE/ADD scripts.
//! - [`round_engine`]: the deletion pass plus iterated add/insert rounds,
//!   driven by a [`Policy`], and per-round training-sample expansion.
//! - [`metrics`]: BLEU, ROUGE-L, CIDEr-D, editing steps and gains per step.
//! - [`dataset`]: instance construction and dataset statistics.

pub mod dataset;
pub mod edit_script;
pub mod metrics;
pub mod round_engine;

pub use dataset::{compute_stats, DatasetStats, EceInstance, FilterConfig, ScoreTable, Split};
pub use edit_script::{apply_script, edit_distance, min_edit_script, tokenize, EditDistance, EditOp, EditScript, TokenSeq};
pub use metrics::{bleu, cider_d, es_implicit, es_of_trace, gps, rouge_l, MetricReport};
pub use round_engine::{
    expand_instance, oracle_policy, run_rounds, EditorState, ExpansionConfig, MaskedSeq, Policy, RoundTrace,
    TrainingSample,
};
