//! Decoupled self-augmentation: target / non-target prompt sets, candidate
//! generation with the concept-aware model, and curation into training sets.

pub mod candidates;
pub mod curation;
pub mod prompts;
pub mod review;

pub use candidates::{
    generate_candidates, load_pool, reference_embedding, save_pool, score_similarity, Candidate, CandidatePool,
    Decision, PoolSet,
};
pub use curation::{
    append_decision, apply_decisions, auto_filter, finalize_sets, keep_count, load_decisions, resolve_decisions,
    CuratedPair, CuratedSet, CurationDecision, Verdict,
};
pub use prompts::{novel_prompts, synthesize_prompts, AttributeQuery, PromptSet, PromptSource};
pub use review::{oracle_review, Reviewer};
