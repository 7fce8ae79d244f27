//! Document-level objective, negative sampling, top-k mention restriction and the
//! training loop.

mod fit;
mod loss;
mod negatives;

pub use crate::scorer::select_top_k_mentions;
pub use fit::{
    document_loss, hard_training_docs, train, training_docs, DevSet, EpochReport, LossConfig, LossParts, TrainReport,
    TrainingDoc,
};
pub use loss::{entity_loss, tuple_loss, weighted_bce, weighted_bce_tape, EPS};
pub use negatives::sample_negative_tuples;

#[cfg(test)]
mod tests;
