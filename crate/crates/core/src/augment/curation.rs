use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::candidates::{Candidate, Decision, PoolSet};
use super::prompts::AttributeQuery;
use crate::error::{Error, IoContext, Result};

/// Number of candidates kept from a set of `count` at `fraction`.
pub fn keep_count(count: usize, fraction: f64) -> usize {
    // Guards against products such as 0.1 * 30 landing just above an integer.
    ((fraction * count as f64) - 1e-9).ceil().max(0.0) as usize
}

fn check_fraction(fraction: f64) -> Result<()> {
    if fraction > 0.0 && fraction <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("fraction {fraction} outside (0, 1]")))
    }
}

/// Descending score, ascending id. Adding zero folds -0.0 into 0.0 so equal
/// scores always fall through to the id.
fn rank(a: &Candidate, b: &Candidate) -> std::cmp::Ordering {
    (b.score + 0.0).total_cmp(&(a.score + 0.0)).then(a.id.cmp(&b.id))
}

/// Marks the top `ceil(fraction * n)` candidates of each set as auto-kept.
/// Sets are ranked independently.
pub fn auto_filter(pool: &[Candidate], fraction: f64) -> Result<Vec<Candidate>> {
    check_fraction(fraction)?;
    if pool.is_empty() {
        log::warn!("auto_filter called on an empty pool");
        return Ok(Vec::new());
    }
    let mut out = pool.to_vec();
    for set in PoolSet::BOTH {
        let mut idx: Vec<usize> = (0..out.len()).filter(|&i| out[i].set == set).collect();
        idx.sort_by(|&a, &b| rank(&out[a], &out[b]));
        let keep = keep_count(idx.len(), fraction);
        for (rank, &i) in idx.iter().enumerate() {
            out[i].auto_kept = rank < keep;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Keep,
    Reject,
}

impl From<Verdict> for Decision {
    fn from(v: Verdict) -> Self {
        match v {
            Verdict::Keep => Decision::Keep,
            Verdict::Reject => Decision::Reject,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationDecision {
    pub candidate_id: u32,
    pub decision: Verdict,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub operator: String,
}

/// Appends one record; the file is never rewritten.
pub fn append_decision(path: &Path, d: &CurationDecision) -> Result<()> {
    let mut line = serde_json::to_vec(d)?;
    line.push(b'\n');
    let mut f = OpenOptions::new().create(true).append(true).open(path).at(path)?;
    f.write_all(&line).at(path)
}

/// Reads the decisions file; a missing file means no decisions.
pub fn load_decisions(path: &Path) -> Result<Vec<CurationDecision>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let f = fs::File::open(path).at(path)?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.at(path)?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Last decision per candidate wins.
pub fn resolve_decisions(decisions: &[CurationDecision]) -> BTreeMap<u32, Verdict> {
    decisions.iter().map(|d| (d.candidate_id, d.decision)).collect()
}

/// Applies resolved decisions. Decisions may only target auto-kept candidates.
pub fn apply_decisions(pool: &[Candidate], decisions: &[CurationDecision]) -> Result<Vec<Candidate>> {
    let resolved = resolve_decisions(decisions);
    let mut out = pool.to_vec();
    for c in &mut out {
        c.human_decision = Decision::Undecided;
    }
    for (&id, &v) in &resolved {
        let c = out
            .iter_mut()
            .find(|c| c.id == id)
            .ok_or_else(|| Error::Validation(format!("decision for unknown candidate {id}")))?;
        if !c.auto_kept {
            return Err(Error::Validation(format!("candidate {id} was not auto-kept")));
        }
        c.human_decision = v.into();
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CuratedPair {
    pub candidate_id: u32,
    pub caption: String,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CuratedSet {
    pub set: PoolSet,
    pub pairs: Vec<CuratedPair>,
    pub m: usize,
}

fn rewrite(caption: &str, from: &str, to: &str) -> String {
    caption
        .split(' ')
        .map(|w| if w == from { to } else { w })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Human keeps first, then the best undecided auto-kept candidates, truncated
/// to `m` per set; the identifier becomes tgt in plus captions and ngt in minus
/// captions.
pub fn finalize_sets(
    filtered: &[Candidate],
    decisions: &[CurationDecision],
    m: usize,
    q: &AttributeQuery,
) -> Result<(CuratedSet, CuratedSet)> {
    if m == 0 {
        return Err(Error::Config("m must be at least 1".into()));
    }
    let pool = apply_decisions(filtered, decisions)?;
    let mut shortfalls = Vec::new();
    let mut sets = Vec::with_capacity(2);
    for set in PoolSet::BOTH {
        let identifier = match set {
            PoolSet::Plus => &q.tgt,
            PoolSet::Minus => &q.ngt,
        };
        let mut eligible: Vec<&Candidate> = pool.iter().filter(|c| c.set == set && c.auto_kept).collect();
        eligible.sort_by(|a, b| rank(a, b));
        let chosen: Vec<&Candidate> = eligible
            .iter()
            .filter(|c| c.human_decision == Decision::Keep)
            .chain(eligible.iter().filter(|c| c.human_decision == Decision::Undecided))
            .take(m)
            .copied()
            .collect();
        if chosen.len() < m {
            shortfalls.push(format!(
                "{} set has {} of {m} (needs {} more keeps)",
                set.name(),
                chosen.len(),
                m - chosen.len()
            ));
        }
        let pairs = chosen
            .iter()
            .map(|c| CuratedPair {
                candidate_id: c.id,
                caption: rewrite(&c.prompt, &q.identifier, identifier),
                path: c.path.clone(),
            })
            .collect();
        sets.push(CuratedSet { set, pairs, m });
    }
    if !shortfalls.is_empty() {
        return Err(Error::Shortfall(shortfalls.join("; ")));
    }
    let minus = sets.pop().expect("two sets");
    let plus = sets.pop().expect("two sets");
    Ok((plus, minus))
}
