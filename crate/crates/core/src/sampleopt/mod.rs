//! Search over the negative proposal weights α and the positive augmentation
//! policy β, scored by how well the trained encoder matches samples across
//! modalities.

mod reward;
mod search;
mod simplex;

pub use reward::{crossmodal_reward, RewardConfig, TupleEmbedder};
pub use search::{
    evaluate_candidate, optimize_samples, retrain_candidate, search_table_csv, search_summary, CandidateEvaluator,
    Evaluation, EvalRecord, RoundSummary, SearchPhase, SearchResult, SearchSpec, TrainingEvaluator,
};
pub use simplex::{dirichlet_candidates, integer_ratio, proposal_from_ratio, simplex_grid, simplex_normalize};
