//! Evaluation with the attribute oracle: prompt and image fidelity, a
//! diversity score, exact target accuracy and leakage, and lambda sweeps.

pub mod metrics;
pub mod report;
pub mod resolve;
pub mod sweep;

pub use metrics::{
    attribute_rates, diversity_from_readings, diversity_score, image_fidelity, joint_posterior, prompt_embedding,
    prompt_fidelity, AttributeRates, POSTERIOR_TEMPERATURE,
};
pub use report::{evaluate, render_markdown, write_readings, Condition, EvalReport, ImageRecord, Stat};
pub use resolve::{resolve_prompt, RequestedAttrs, ResolveContext};
pub use sweep::{lambda_sweep, sample_family, FamilyMode, SweepConfig, DEFAULT_LAMBDAS};
