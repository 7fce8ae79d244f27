//! Tuple and linking metrics, oracle recall, and the hard-link pipeline baseline.

mod metrics;
mod oracle;
mod pipeline;

pub use metrics::{
    linking_doc_eval, micro_prf, per_document, per_document_f1, render_json, render_table, threshold_grid,
    threshold_predictions, tune_threshold, MetricReport, PredictedTuples,
};
pub use oracle::{oracle_recall, LinkPolicy, OracleEntry, OracleReport};
pub use pipeline::{
    gold_entity_sets, gold_subset, joint_doc_entities, joint_inputs, linked_doc_entities, pipeline_baseline,
    pipeline_inputs, score_documents,
};
