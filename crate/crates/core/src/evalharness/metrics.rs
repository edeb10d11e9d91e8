use serde::{Deserialize, Serialize};

use super::resolve::{resolve_prompt, RequestedAttrs, ResolveContext};
use crate::augment::candidates::cosine_similarity;
use crate::error::{Error, Result};
use crate::synthdata::{classify_attributes, AttributeReading, AttributeTuple, Axis, ColorScheme, Image, Pattern, Shape};

pub const POSTERIOR_TEMPERATURE: f64 = 0.1;

/// One-hot blocks in the same layout as [`AttributeReading::embedding`];
/// free axes contribute zeros.
pub fn prompt_embedding(req: &RequestedAttrs) -> Vec<f64> {
    let mut v = Vec::new();
    let mut block = |idx: Option<usize>, n: usize| v.extend((0..n).map(|i| if idx == Some(i) { 1.0 } else { 0.0 }));
    block(req.shape.map(Shape::index), Shape::ALL.len());
    block(req.color.map(ColorScheme::index), ColorScheme::ALL.len());
    block(req.pattern.map(Pattern::index), Pattern::ALL.len());
    v
}

pub fn reading_prompt_fidelity(reading: &AttributeReading, req: &RequestedAttrs) -> f64 {
    if !reading.has_object() {
        return 0.0;
    }
    cosine_similarity(&reading.embedding(), &prompt_embedding(req))
}

/// Cosine between the image's attribute embedding and the prompt's one-hot
/// embedding.
pub fn prompt_fidelity(img: &Image, prompt: &str, ctx: Option<&ResolveContext>) -> Result<f64> {
    let req = resolve_prompt(prompt, ctx)?;
    Ok(reading_prompt_fidelity(&classify_attributes(img), &req))
}

pub fn reading_image_fidelity(reading: &AttributeReading, refs: &[AttributeReading]) -> f64 {
    if !reading.has_object() || refs.is_empty() {
        return 0.0;
    }
    let e = reading.embedding();
    refs.iter()
        .map(|r| cosine_similarity(&e, &r.embedding()))
        .sum::<f64>()
        / refs.len() as f64
}

/// Mean cosine similarity to each reference.
pub fn image_fidelity(img: &Image, refs: &[Image]) -> Result<f64> {
    if refs.is_empty() {
        return Err(Error::EmptySet("reference images".into()));
    }
    let refs: Vec<AttributeReading> = refs.iter().map(classify_attributes).collect();
    Ok(reading_image_fidelity(&classify_attributes(img), &refs))
}

fn softmax(scores: &[f32], temperature: f64) -> Vec<f64> {
    let max = scores.iter().fold(f64::NEG_INFINITY, |m, &s| m.max(f64::from(s)));
    let exps: Vec<f64> = scores
        .iter()
        .map(|&s| ((f64::from(s) - max) / temperature).exp())
        .collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Joint posterior over all attribute tuples in [`AttributeTuple::all`] order,
/// factored as a product of per-axis softmaxes.
pub fn joint_posterior(reading: &AttributeReading) -> Vec<f64> {
    let ps = softmax(reading.axis_scores(Axis::Shape), POSTERIOR_TEMPERATURE);
    let pc = softmax(reading.axis_scores(Axis::Color), POSTERIOR_TEMPERATURE);
    let pp = softmax(reading.axis_scores(Axis::Pattern), POSTERIOR_TEMPERATURE);
    let mut out = Vec::with_capacity(ps.len() * pc.len() * pp.len());
    for s in &ps {
        for c in &pc {
            for p in &pp {
                out.push(s * c * p);
            }
        }
    }
    out
}

/// `exp(mean_x KL(p(y|x) || p(y)))` over the joint attribute posterior.
pub fn diversity_from_readings(readings: &[AttributeReading]) -> Result<f64> {
    if readings.len() < 2 {
        return Err(Error::Evaluation(format!(
            "diversity needs at least 2 images, got {}",
            readings.len()
        )));
    }
    let posts: Vec<Vec<f64>> = readings.iter().map(joint_posterior).collect();
    let n = posts.len() as f64;
    let mut marginal = vec![0.0; posts[0].len()];
    for p in &posts {
        for (m, v) in marginal.iter_mut().zip(p) {
            *m += v / n;
        }
    }
    let mean_kl = posts
        .iter()
        .map(|p| {
            p.iter()
                .zip(&marginal)
                .filter(|(&pi, _)| pi > 0.0)
                .map(|(&pi, &mi)| pi * (pi / mi).ln())
                .sum::<f64>()
        })
        .sum::<f64>()
        / n;
    Ok(mean_kl.exp())
}

pub fn diversity_score(images: &[Image]) -> Result<f64> {
    let readings: Vec<AttributeReading> = images.iter().map(classify_attributes).collect();
    diversity_from_readings(&readings)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttributeRates {
    pub target_accuracy: f64,
    pub leakage_rate: f64,
}

/// Target accuracy: the reading on the target axis equals the reference value.
/// Leakage: on some non-target axis the reading equals the reference value
/// although the prompt asked for a different value or left the axis free.
pub fn attribute_rates(
    readings: &[AttributeReading],
    requested: &[RequestedAttrs],
    target_axis: Axis,
    reference: &AttributeTuple,
) -> Result<AttributeRates> {
    if readings.len() != requested.len() {
        return Err(Error::Evaluation(format!(
            "{} readings but {} prompts",
            readings.len(),
            requested.len()
        )));
    }
    if readings.is_empty() {
        return Ok(AttributeRates {
            target_accuracy: 0.0,
            leakage_rate: 0.0,
        });
    }
    let mut hits = 0usize;
    let mut leaks = 0usize;
    for (r, req) in readings.iter().zip(requested) {
        if r.label(target_axis) == Some(reference.value(target_axis)) {
            hits += 1;
        }
        let leaked = Axis::ALL.into_iter().filter(|&a| a != target_axis).any(|a| {
            let refv = reference.value(a);
            req.get(a) != Some(refv) && r.label(a) == Some(refv)
        });
        leaks += usize::from(leaked);
    }
    let n = readings.len() as f64;
    Ok(AttributeRates {
        target_accuracy: hits as f64 / n,
        leakage_rate: leaks as f64 / n,
    })
}
