use serde::{Deserialize, Serialize};

use super::report::{evaluate, Condition, EvalReport, ImageRecord};
use super::resolve::ResolveContext;
use crate::adjust_infer::{literal_sample, personalized_sample, sample_seed, InferenceRequest};
use crate::error::{Error, Result};
use crate::par::Exec;
use crate::synthdata::Image;
use crate::toydiff::Checkpoint;

pub const DEFAULT_LAMBDAS: [f64; 6] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub seed: u64,
    /// Images per prompt.
    pub count: usize,
    pub steps: usize,
    pub guidance: f64,
}

/// How slot placeholders in a prompt family are treated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FamilyMode {
    /// Replaced by the semantically adjusted tgt/ngt embedding.
    Adjusted(f64),
    /// Encoded with the checkpoint's own row for the token.
    Literal,
}

/// Samples `cfg.count` images per prompt; all prompts share the seed list.
pub fn sample_family(
    ckpt: &Checkpoint,
    family: &[String],
    mode: FamilyMode,
    cfg: &SweepConfig,
    exec: Exec,
) -> Result<(Vec<Image>, Vec<String>, Vec<u64>)> {
    let mut images = Vec::new();
    let mut prompts = Vec::new();
    let mut seeds = Vec::new();
    for prompt in family {
        let mut req = InferenceRequest::new(prompt, 0.0, cfg.seed, cfg.count);
        req.steps = cfg.steps;
        req.guidance = cfg.guidance;
        match mode {
            FamilyMode::Adjusted(lambda) => {
                for spec in &mut req.specs {
                    spec.lambda = lambda;
                }
                images.extend(personalized_sample(&req, ckpt, exec)?);
            }
            FamilyMode::Literal => images.extend(literal_sample(&req, ckpt, exec)?),
        }
        for k in 0..cfg.count {
            prompts.push(prompt.clone());
            seeds.push(sample_seed(cfg.seed, k));
        }
    }
    Ok((images, prompts, seeds))
}

/// One report per lambda; every lambda reuses the same seeds.
#[allow(clippy::too_many_arguments)]
pub fn lambda_sweep(
    ckpt: &Checkpoint,
    family_name: &str,
    family: &[String],
    ctx: &ResolveContext,
    refs: &[Image],
    lambdas: &[f64],
    cfg: &SweepConfig,
    exec: Exec,
) -> Result<Vec<(EvalReport, Vec<ImageRecord>)>> {
    if lambdas.is_empty() {
        return Err(Error::Config("lambda grid is empty".into()));
    }
    lambdas
        .iter()
        .map(|&lambda| {
            let (images, prompts, seeds) = sample_family(ckpt, family, FamilyMode::Adjusted(lambda), cfg, exec)?;
            let condition = Condition {
                method: "u-vap".into(),
                lambda: Some(lambda),
                m: None,
                prompt_family: family_name.into(),
            };
            evaluate(&images, &prompts, &seeds, ctx, refs, condition, exec)
        })
        .collect()
}
