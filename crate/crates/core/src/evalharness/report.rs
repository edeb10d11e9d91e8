use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{attribute_rates, diversity_from_readings, reading_image_fidelity, reading_prompt_fidelity};
use super::resolve::{resolve_prompt, ResolveContext};
use crate::error::{Error, IoContext, Result};
use crate::par::Exec;
use crate::synthdata::{classify_attributes, AttributeReading, Image};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub sd: f64,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return Self { mean: 0.0, sd: 0.0 };
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self { mean, sd: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub method: String,
    pub lambda: Option<f64>,
    pub m: Option<usize>,
    pub prompt_family: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub condition: Condition,
    pub n_images: usize,
    pub target_accuracy: f64,
    pub leakage_rate: f64,
    pub prompt_fidelity: Stat,
    pub image_fidelity: Stat,
    /// Absent when fewer than two images were evaluated.
    pub diversity_score: Option<f64>,
    pub seeds: Vec<u64>,
}

/// Raw oracle output for one evaluated image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub index: usize,
    pub prompt: String,
    pub seed: u64,
    pub reading: AttributeReading,
}

/// Evaluates `images[i]`, sampled from `prompts[i]` with `seeds[i]`.
pub fn evaluate(
    images: &[Image],
    prompts: &[String],
    seeds: &[u64],
    ctx: &ResolveContext,
    refs: &[Image],
    condition: Condition,
    exec: Exec,
) -> Result<(EvalReport, Vec<ImageRecord>)> {
    if images.len() != prompts.len() || images.len() != seeds.len() {
        return Err(Error::Evaluation("images, prompts and seeds differ in length".into()));
    }
    let readings: Vec<AttributeReading> = exec.map(images, classify_attributes);
    let ref_readings: Vec<AttributeReading> = exec.map(refs, classify_attributes);
    let requested = prompts
        .iter()
        .map(|p| resolve_prompt(p, Some(ctx)))
        .collect::<Result<Vec<_>>>()?;
    let rates = attribute_rates(&readings, &requested, ctx.target_axis, &ctx.reference)?;
    let pf: Vec<f64> = readings
        .iter()
        .zip(&requested)
        .map(|(r, q)| reading_prompt_fidelity(r, q))
        .collect();
    let imf: Vec<f64> = readings
        .iter()
        .map(|r| reading_image_fidelity(r, &ref_readings))
        .collect();
    let diversity = if readings.len() >= 2 {
        Some(diversity_from_readings(&readings)?)
    } else {
        None
    };
    let records = readings
        .into_iter()
        .enumerate()
        .map(|(index, reading)| ImageRecord {
            index,
            prompt: prompts[index].clone(),
            seed: seeds[index],
            reading,
        })
        .collect();
    Ok((
        EvalReport {
            condition,
            n_images: images.len(),
            target_accuracy: rates.target_accuracy,
            leakage_rate: rates.leakage_rate,
            prompt_fidelity: Stat::of(&pf),
            image_fidelity: Stat::of(&imf),
            diversity_score: diversity,
            seeds: seeds.to_vec(),
        },
        records,
    ))
}

pub fn render_markdown(reports: &[EvalReport]) -> String {
    let mut out = String::from(
        "| method | lambda | m | prompts | n | target acc | leakage | prompt fid | image fid | diversity |\n\
         |---|---|---|---|---|---|---|---|---|---|\n",
    );
    let opt = |v: Option<String>| v.unwrap_or_else(|| "-".into());
    for r in reports {
        let c = &r.condition;
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {:.3} | {:.3} | {:.3} ± {:.3} | {:.3} ± {:.3} | {} |",
            c.method,
            opt(c.lambda.map(|l| format!("{l:.2}"))),
            opt(c.m.map(|m| m.to_string())),
            c.prompt_family,
            r.n_images,
            r.target_accuracy,
            r.leakage_rate,
            r.prompt_fidelity.mean,
            r.prompt_fidelity.sd,
            r.image_fidelity.mean,
            r.image_fidelity.sd,
            opt(r.diversity_score.map(|d| format!("{d:.3}"))),
        );
    }
    out
}

pub fn write_readings(path: &Path, records: &[ImageRecord]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    let mut f = std::fs::File::create(path).at(path)?;
    f.write_all(&buf).at(path)
}
