//! Inference-time semantic adjustment of slot placeholders and sampling with
//! the adjusted embeddings.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::nn::Float;
use crate::par::Exec;
use crate::rng;
use crate::synthdata::Image;
use crate::toydiff::sampler::{ddim_sample_with_uncond, SamplerConfig};
use crate::toydiff::text::is_slot;
use crate::toydiff::{Checkpoint, Overrides, TokenTable, NULL_TOKEN};

pub const DEFAULT_LAMBDA: f64 = 0.3;

/// `v_tgt + lambda * (v_tgt - v_ngt)`.
pub fn semantic_adjust<T: Float>(v_tgt: &[T], v_ngt: &[T], lambda: T) -> Result<Vec<T>> {
    check_dims(v_tgt, v_ngt)?;
    Ok(v_tgt
        .iter()
        .zip(v_ngt)
        .map(|(&t, &n)| t + lambda * (t - n))
        .collect())
}

/// Variant that moves `lambda` units along the normalized direction
/// `v_tgt - v_ngt`. Equal inputs are returned unchanged.
pub fn semantic_adjust_normalized<T: Float>(v_tgt: &[T], v_ngt: &[T], lambda: T) -> Result<Vec<T>> {
    check_dims(v_tgt, v_ngt)?;
    let norm = v_tgt
        .iter()
        .zip(v_ngt)
        .map(|(&t, &n)| (t - n) * (t - n))
        .sum::<T>()
        .sqrt();
    if norm == T::zero() {
        return Ok(v_tgt.to_vec());
    }
    Ok(v_tgt
        .iter()
        .zip(v_ngt)
        .map(|(&t, &n)| t + lambda * (t - n) / norm)
        .collect())
}

fn check_dims<T>(a: &[T], b: &[T]) -> Result<()> {
    if a.len() == b.len() {
        Ok(())
    } else {
        Err(Error::Shape(format!("vector dims differ: {} vs {}", a.len(), b.len())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustmentSpec {
    #[serde(default = "default_placeholder")]
    pub placeholder: String,
    #[serde(default = "default_tgt")]
    pub tgt: String,
    #[serde(default = "default_ngt")]
    pub ngt: String,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub normalize: bool,
}

fn default_placeholder() -> String {
    "sks".into()
}

fn default_tgt() -> String {
    "tgt".into()
}

fn default_ngt() -> String {
    "ngt".into()
}

fn default_lambda() -> f64 {
    DEFAULT_LAMBDA
}

impl Default for AdjustmentSpec {
    fn default() -> Self {
        Self::new("sks", "tgt", "ngt", DEFAULT_LAMBDA)
    }
}

impl AdjustmentSpec {
    pub fn new(placeholder: &str, tgt: &str, ngt: &str, lambda: f64) -> Self {
        Self {
            placeholder: placeholder.into(),
            tgt: tgt.into(),
            ngt: ngt.into(),
            lambda,
            normalize: false,
        }
    }

    pub fn validate(&self, vocab: &TokenTable) -> Result<()> {
        for tok in [&self.placeholder, &self.tgt, &self.ngt] {
            if vocab.id(tok).is_none() {
                return Err(Error::Tokenization {
                    token: tok.clone(),
                    prompt: String::new(),
                });
            }
        }
        if !self.lambda.is_finite() {
            return Err(Error::Validation(format!("lambda {} is not finite", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            log::warn!("lambda {} outside [0, 1]", self.lambda);
        }
        Ok(())
    }

    /// Adjusted embedding for the placeholder row.
    pub fn adjusted(&self, ckpt: &Checkpoint) -> Result<Vec<f32>> {
        let v_tgt = ckpt.model.token_vector(&self.tgt)?;
        let v_ngt = ckpt.model.token_vector(&self.ngt)?;
        let lambda = self.lambda as f32;
        if self.normalize {
            semantic_adjust_normalized(&v_tgt, &v_ngt, lambda)
        } else {
            semantic_adjust(&v_tgt, &v_ngt, lambda)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceRequest {
    pub prompt: String,
    #[serde(default)]
    pub specs: Vec<AdjustmentSpec>,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_guidance")]
    pub guidance: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_count")]
    pub count: usize,
}

fn default_steps() -> usize {
    50
}

fn default_guidance() -> f64 {
    7.5
}

fn default_count() -> usize {
    1
}

impl InferenceRequest {
    /// Request with one default spec per slot placeholder in the prompt.
    pub fn new(prompt: &str, lambda: f64, seed: u64, count: usize) -> Self {
        let specs = slots_in(prompt)
            .into_iter()
            .map(|slot| {
                let suffix = slot.strip_prefix("sks").unwrap_or_default();
                AdjustmentSpec::new(slot, &format!("tgt{suffix}"), &format!("ngt{suffix}"), lambda)
            })
            .collect();
        Self {
            prompt: prompt.into(),
            specs,
            steps: default_steps(),
            guidance: default_guidance(),
            seed,
            count,
        }
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            steps: self.steps,
            guidance: self.guidance as f32,
            ..SamplerConfig::default()
        }
    }

    pub fn validate(&self, vocab: &TokenTable) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Validation("count must be at least 1".into()));
        }
        vocab.tokenize(&self.prompt)?;
        let slots = slots_in(&self.prompt);
        let mut seen = BTreeSet::new();
        for spec in &self.specs {
            spec.validate(vocab)?;
            if !seen.insert(spec.placeholder.as_str()) {
                return Err(Error::Validation(format!("two specs for {}", spec.placeholder)));
            }
            if !slots.contains(&spec.placeholder.as_str()) {
                return Err(Error::Validation(format!(
                    "spec for {} but the prompt does not use it",
                    spec.placeholder
                )));
            }
        }
        if let Some(missing) = slots.iter().find(|s| !seen.contains(*s)) {
            return Err(Error::Validation(format!("placeholder {missing} has no adjustment spec")));
        }
        Ok(())
    }
}

fn slots_in(prompt: &str) -> Vec<&str> {
    let mut out: Vec<&str> = Vec::new();
    for w in prompt.split_whitespace() {
        if is_slot(w) && !out.contains(&w) {
            out.push(w);
        }
    }
    out
}

/// Encodes the prompt with every slot placeholder replaced by its adjusted
/// embedding.
pub fn adjusted_condition(req: &InferenceRequest, ckpt: &Checkpoint) -> Result<Vec<f32>> {
    req.validate(&ckpt.model.vocab)?;
    let mut overrides = Overrides::new();
    for spec in &req.specs {
        overrides.insert(spec.placeholder.clone(), spec.adjusted(ckpt)?);
    }
    ckpt.model.encode_text(&req.prompt, &overrides)
}

pub fn sample_seed(seed: u64, k: usize) -> u64 {
    rng::derive(seed, "sample", k as u64)
}

/// Samples `req.count` images with per-image seeds derived from `req.seed`.
pub fn personalized_sample(req: &InferenceRequest, ckpt: &Checkpoint, exec: Exec) -> Result<Vec<Image>> {
    let cond = adjusted_condition(req, ckpt)?;
    let uncond = ckpt.model.encode_text(NULL_TOKEN, &Overrides::new())?;
    let sampler = req.sampler();
    exec.map_range(req.count, |k| {
        ddim_sample_with_uncond(ckpt, &cond, &uncond, &sampler, sample_seed(req.seed, k))
    })
    .into_iter()
    .collect()
}

/// Samples the prompt as written, without overrides; placeholders use the
/// checkpoint's own rows. Seeds match [`personalized_sample`].
pub fn literal_sample(req: &InferenceRequest, ckpt: &Checkpoint, exec: Exec) -> Result<Vec<Image>> {
    if req.count == 0 {
        return Err(Error::Validation("count must be at least 1".into()));
    }
    let cond = ckpt.model.encode_text(&req.prompt, &Overrides::new())?;
    let uncond = ckpt.model.encode_text(NULL_TOKEN, &Overrides::new())?;
    let sampler = req.sampler();
    exec.map_range(req.count, |k| {
        ddim_sample_with_uncond(ckpt, &cond, &uncond, &sampler, sample_seed(req.seed, k))
    })
    .into_iter()
    .collect()
}

/// Multi-placeholder sampling. The specs must not share identifier tokens.
pub fn combine_attributes(req: &InferenceRequest, ckpt: &Checkpoint, exec: Exec) -> Result<Vec<Image>> {
    let mut used = BTreeSet::new();
    for spec in &req.specs {
        for tok in [&spec.tgt, &spec.ngt] {
            if !used.insert(tok.as_str()) {
                return Err(Error::Validation(format!("identifier {tok} shared between specs")));
            }
        }
    }
    personalized_sample(req, ckpt, exec)
}

pub const REQUEST_ECHO: &str = "request.json";

pub fn sample_name(k: usize) -> String {
    format!("{k:04}.png")
}

/// Writes images and the request echo into `dir`.
pub fn save_samples(dir: &Path, req: &InferenceRequest, images: &[Image]) -> Result<()> {
    fs::create_dir_all(dir).at(dir)?;
    for (k, im) in images.iter().enumerate() {
        im.save_png(&dir.join(sample_name(k)))?;
    }
    let echo = dir.join(REQUEST_ECHO);
    fs::write(&echo, serde_json::to_vec_pretty(req)?).at(&echo)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn substitution_example() {
        let v = semantic_adjust(&[1.0f64, 0.0], &[0.0, 1.0], 0.3).unwrap();
        assert!((v[0] - 1.3).abs() < 1e-12 && (v[1] + 0.3).abs() < 1e-12);
    }

    #[test]
    fn zero_lambda_is_identity() {
        let a = [0.25f64, -3.5, 7.0];
        assert_eq!(semantic_adjust(&a, &[9.0, 1.0, -2.0], 0.0).unwrap(), a);
    }

    #[test]
    fn mismatched_dims_rejected() {
        assert!(matches!(semantic_adjust(&[1.0f64], &[1.0, 2.0], 0.3), Err(Error::Shape(_))));
    }

    #[test]
    fn default_specs_follow_slots() {
        let r = InferenceRequest::new("a photo of a sks1 pattern sks2 star", 0.3, 0, 1);
        assert_eq!(r.specs[0].tgt, "tgt1");
        assert_eq!(r.specs[1].ngt, "ngt2");
        r.validate(&TokenTable::default()).unwrap();
    }

    #[test]
    fn missing_spec_rejected() {
        let mut r = InferenceRequest::new("a photo of a sks color star", 0.3, 0, 1);
        r.specs.clear();
        assert!(matches!(r.validate(&TokenTable::default()), Err(Error::Validation(_))));
    }
}
