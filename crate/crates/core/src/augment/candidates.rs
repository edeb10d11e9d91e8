use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::prompts::PromptSet;
use crate::error::{Error, IoContext, Result};
use crate::par::Exec;
use crate::rng;
use crate::synthdata::{classify_attributes, Image};
use crate::toydiff::sampler::{ddim_sample, SamplerConfig};
use crate::toydiff::{Checkpoint, Overrides};

pub const POOL_MANIFEST: &str = "pool.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolSet {
    Plus,
    Minus,
}

impl PoolSet {
    pub const BOTH: [PoolSet; 2] = [PoolSet::Plus, PoolSet::Minus];

    pub fn name(self) -> &'static str {
        match self {
            PoolSet::Plus => "plus",
            PoolSet::Minus => "minus",
        }
    }
}

impl std::str::FromStr for PoolSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plus" => Ok(PoolSet::Plus),
            "minus" => Ok(PoolSet::Minus),
            _ => Err(Error::Validation(format!("unknown set {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    #[default]
    Undecided,
    Keep,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: u32,
    pub prompt: String,
    pub seed: u64,
    /// File name inside the candidates directory.
    pub path: String,
    pub set: PoolSet,
    pub score: f64,
    pub auto_kept: bool,
    pub human_decision: Decision,
}

pub fn image_name(id: u32) -> String {
    format!("{id:05}.png")
}

#[derive(Debug, Clone, Default)]
pub struct CandidatePool {
    pub candidates: Vec<Candidate>,
    pub images: Vec<Image>,
    /// Captions that failed to tokenize, with the error message.
    pub skipped: Vec<(String, String)>,
}

/// Samples `per_prompt` images per caption. Seeds are consecutive from a value
/// derived from `seed`, so every candidate in the pool has a distinct seed.
/// Scores are left at zero until [`score_similarity`] runs.
pub fn generate_candidates(
    g0: &Checkpoint,
    prompts: &PromptSet,
    per_prompt: usize,
    seed: u64,
    sampler: &SamplerConfig,
    exec: Exec,
) -> Result<CandidatePool> {
    if per_prompt == 0 {
        return Err(Error::Config("per_prompt must be at least 1".into()));
    }
    let base = rng::derive(seed, "candidates", 0);
    let mut jobs = Vec::new();
    let mut skipped = Vec::new();
    let mut k = 0u64;
    for (set, captions) in [(PoolSet::Plus, &prompts.t_plus), (PoolSet::Minus, &prompts.t_minus)] {
        for caption in captions {
            match g0.model.encode_text(caption, &Overrides::new()) {
                Ok(cond) => {
                    for _ in 0..per_prompt {
                        jobs.push((set, caption.clone(), base.wrapping_add(k), cond.clone()));
                        k += 1;
                    }
                }
                Err(e) => {
                    log::warn!("skipping caption {caption:?}: {e}");
                    skipped.push((caption.clone(), e.to_string()));
                }
            }
        }
    }
    let images = exec
        .map(&jobs, |(_, _, s, cond)| ddim_sample(g0, cond, sampler, *s))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let candidates = jobs
        .into_iter()
        .enumerate()
        .map(|(i, (set, prompt, seed, _))| Candidate {
            id: i as u32,
            prompt,
            seed,
            path: image_name(i as u32),
            set,
            score: 0.0,
            auto_kept: false,
            human_decision: Decision::Undecided,
        })
        .collect();
    Ok(CandidatePool {
        candidates,
        images,
        skipped,
    })
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    cosine(a, b)
}

/// Mean attribute-feature embedding of the references.
pub fn reference_embedding(refs: &[Image]) -> Result<Vec<f64>> {
    if refs.is_empty() {
        return Err(Error::EmptySet("reference images".into()));
    }
    let embs: Vec<Vec<f64>> = refs.iter().map(|r| classify_attributes(r).embedding()).collect();
    let mut mean = vec![0.0; embs[0].len()];
    for e in &embs {
        for (m, v) in mean.iter_mut().zip(e) {
            *m += v / embs.len() as f64;
        }
    }
    Ok(mean)
}

/// Cosine between the candidate's attribute embedding and the mean reference
/// embedding. A no-object candidate scores 0.
pub fn score_similarity(img: &Image, refs: &[Image]) -> Result<f64> {
    Ok(score_against(img, &reference_embedding(refs)?))
}

pub fn score_against(img: &Image, reference: &[f64]) -> f64 {
    let reading = classify_attributes(img);
    if !reading.has_object() {
        return 0.0;
    }
    cosine(&reading.embedding(), reference)
}

/// Scores every candidate in place.
pub fn score_pool(pool: &mut CandidatePool, refs: &[Image], exec: Exec) -> Result<()> {
    let reference = reference_embedding(refs)?;
    let scores = exec.map(&pool.images, |im| score_against(im, &reference));
    for (c, s) in pool.candidates.iter_mut().zip(scores) {
        c.score = s;
    }
    Ok(())
}

/// Writes candidate images and the pool manifest into `dir`.
pub fn save_pool(dir: &Path, pool: &CandidatePool) -> Result<()> {
    fs::create_dir_all(dir).at(dir)?;
    for (c, im) in pool.candidates.iter().zip(&pool.images) {
        im.save_png(&dir.join(&c.path))?;
    }
    write_manifest(dir, &pool.candidates)
}

pub fn write_manifest(dir: &Path, candidates: &[Candidate]) -> Result<()> {
    let path = dir.join(POOL_MANIFEST);
    let mut buf = Vec::new();
    for c in candidates {
        serde_json::to_writer(&mut buf, c)?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(&path).at(&path)?;
    f.write_all(&buf).at(&path)
}

pub fn load_pool(dir: &Path) -> Result<Vec<Candidate>> {
    let path = dir.join(POOL_MANIFEST);
    let f = fs::File::open(&path).at(&path)?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.at(&path)?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
