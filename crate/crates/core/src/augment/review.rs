//! Scripted stand-in for the human review pass.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::candidates::Candidate;
use super::curation::{CurationDecision, Verdict};
use crate::error::Result;
use crate::evalharness::resolve::explicit_request;
use crate::evalharness::ResolveContext;
use crate::par::Exec;
use crate::synthdata::{classify_attributes, Axis, Image};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reviewer {
    /// Curation uses the similarity ranking alone.
    #[default]
    Auto,
    /// Every auto-kept candidate is judged against its own prompt.
    Oracle,
}

pub const ORACLE_OPERATOR: &str = "oracle";

/// Keeps an auto-kept candidate when the oracle reading agrees with every
/// attribute its prompt spells out and rejects it otherwise. Decisions come out
/// in candidate id order with a zero timestamp.
pub fn oracle_review(
    candidates: &[Candidate],
    image_dir: &Path,
    ctx: &ResolveContext,
    exec: Exec,
) -> Result<Vec<CurationDecision>> {
    let kept: Vec<&Candidate> = {
        let mut v: Vec<&Candidate> = candidates.iter().filter(|c| c.auto_kept).collect();
        v.sort_by_key(|c| c.id);
        v
    };
    exec.map(&kept, |c| {
        let requested = explicit_request(&c.prompt, Some(ctx))?;
        let reading = classify_attributes(&Image::load_png(&image_dir.join(&c.path))?);
        let ok = Axis::ALL
            .into_iter()
            .all(|a| requested.get(a).is_none_or(|want| reading.label(a) == Some(want)));
        Ok(CurationDecision {
            candidate_id: c.id,
            decision: if ok { Verdict::Keep } else { Verdict::Reject },
            timestamp: 0,
            operator: ORACLE_OPERATOR.into(),
        })
    })
    .into_iter()
    .collect()
}
