use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthdata::{AttributeTuple, Axis, CAPTION_PREFIX};
use crate::toydiff::TokenTable;

/// What the user wants extracted from the reference concept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeQuery {
    pub target_axis: Axis,
    pub reference: AttributeTuple,
    /// Free-text instruction forwarded to an external prompt generator.
    #[serde(default)]
    pub guidance: String,
    #[serde(default = "default_sks")]
    pub identifier: String,
    #[serde(default = "default_tgt")]
    pub tgt: String,
    #[serde(default = "default_ngt")]
    pub ngt: String,
}

fn default_sks() -> String {
    "sks".into()
}

fn default_tgt() -> String {
    "tgt".into()
}

fn default_ngt() -> String {
    "ngt".into()
}

impl AttributeQuery {
    pub fn new(target_axis: Axis, reference: AttributeTuple) -> Self {
        Self {
            target_axis,
            reference,
            guidance: format!(
                "Extract the {} of the reference {}",
                target_axis.descriptor(),
                reference.shape
            ),
            identifier: default_sks(),
            tgt: default_tgt(),
            ngt: default_ngt(),
        }
    }

    pub fn descriptor(&self) -> &'static str {
        self.target_axis.descriptor()
    }

    pub fn class_word(&self) -> &'static str {
        self.reference.shape.word()
    }

    pub fn non_target_axes(&self) -> Vec<Axis> {
        Axis::ALL.into_iter().filter(|&a| a != self.target_axis).collect()
    }

    pub fn reference_value(&self, axis: Axis) -> &'static str {
        self.reference.value(axis)
    }

    pub fn validate(&self, vocab: &TokenTable) -> Result<()> {
        for tok in [&self.identifier, &self.tgt, &self.ngt] {
            if !vocab.is_placeholder(tok) {
                return Err(Error::Config(format!("{tok:?} is not a placeholder token")));
            }
        }
        if self.identifier == self.tgt || self.identifier == self.ngt || self.tgt == self.ngt {
            return Err(Error::Config("identifier, tgt and ngt must be distinct".into()));
        }
        if vocab.id(self.descriptor()).is_none() {
            return Err(Error::Config(format!("descriptor {} not in vocabulary", self.descriptor())));
        }
        Ok(())
    }

    /// Values on the non-target axes other than the reference's, shape axis
    /// first, then the remaining axes in canonical order.
    pub fn novel_values(&self) -> Vec<(Axis, &'static str)> {
        let mut axes = self.non_target_axes();
        axes.sort_by_key(|&a| a != Axis::Shape);
        axes.into_iter()
            .flat_map(|a| {
                let skip = self.reference_value(a);
                a.values().into_iter().filter(move |&v| v != skip).map(move |v| (a, v))
            })
            .collect()
    }

    /// Target-axis values other than the reference's.
    pub fn alternative_values(&self) -> Vec<&'static str> {
        let skip = self.reference_value(self.target_axis);
        self.target_axis.values().into_iter().filter(|&v| v != skip).collect()
    }
}

/// Caption words are placed in canonical color, pattern, shape order; the
/// identifier phrase occupies the slot of the axis it stands for.
fn compose(slots: [Option<String>; 3]) -> String {
    let mut out = CAPTION_PREFIX.to_string();
    for s in slots.into_iter().flatten() {
        out.push(' ');
        out.push_str(&s);
    }
    out
}

fn slot(axis: Axis) -> usize {
    match axis {
        Axis::Color => 0,
        Axis::Pattern => 1,
        Axis::Shape => 2,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSet {
    pub t_plus: Vec<String>,
    pub t_minus: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PromptSource {
    #[default]
    Template,
    External {
        url: String,
        #[serde(default = "default_retries")]
        retries: u32,
        #[serde(default = "default_timeout")]
        timeout_ms: u64,
    },
}

fn default_retries() -> u32 {
    3
}

fn default_timeout() -> u64 {
    5000
}

pub fn synthesize_prompts(q: &AttributeQuery, vocab: &TokenTable, n_each: usize, source: &PromptSource) -> Result<PromptSet> {
    if n_each == 0 {
        return Err(Error::Config("n_each must be at least 1".into()));
    }
    q.validate(vocab)?;
    match source {
        PromptSource::Template => Ok(template_prompts(q, n_each)),
        PromptSource::External { url, retries, timeout_ms } => {
            let raw = fetch_external(url, q, n_each, *retries, Duration::from_millis(*timeout_ms))?;
            let keep = |lines: Vec<String>, check: &dyn Fn(&str) -> bool| -> Vec<String> {
                lines
                    .into_iter()
                    .map(|l| l.trim().to_string())
                    .filter(|l| check(l))
                    .take(n_each)
                    .collect()
            };
            let t_plus = keep(raw.t_plus, &|c| valid_plus(q, vocab, c));
            let t_minus = keep(raw.t_minus, &|c| valid_minus(q, vocab, c));
            if t_plus.is_empty() || t_minus.is_empty() {
                return Err(Error::EmptySet(format!(
                    "external prompts: {} valid target and {} valid non-target captions",
                    t_plus.len(),
                    t_minus.len()
                )));
            }
            Ok(PromptSet { t_plus, t_minus })
        }
    }
}

/// One target-style caption per novel value, using `identifier` in the
/// identifier slot.
pub fn novel_prompts(q: &AttributeQuery, identifier: &str) -> Vec<String> {
    let mut q = q.clone();
    q.identifier = identifier.to_string();
    template_prompts(&q, q.novel_values().len()).t_plus
}

fn template_prompts(q: &AttributeQuery, n_each: usize) -> PromptSet {
    let phrase = format!("{} {}", q.identifier, q.descriptor());
    let novel = q.novel_values();
    let t_plus = (0..n_each)
        .map(|i| {
            let (axis, value) = novel[i % novel.len()];
            let mut slots: [Option<String>; 3] = Default::default();
            slots[slot(q.target_axis)] = Some(phrase.clone());
            slots[slot(axis)] = Some(value.to_string());
            compose(slots)
        })
        .collect();
    let alts = q.alternative_values();
    let t_minus = (0..n_each)
        .map(|j| {
            let alt = alts[j % alts.len()];
            if q.target_axis == Axis::Shape {
                format!("{CAPTION_PREFIX} {} {alt}", q.identifier)
            } else {
                format!("{CAPTION_PREFIX} {alt} {} {}", q.identifier, q.class_word())
            }
        })
        .collect();
    PromptSet { t_plus, t_minus }
}

fn words(caption: &str) -> Option<Vec<&str>> {
    let rest = caption.strip_prefix(CAPTION_PREFIX)?;
    Some(rest.split_whitespace().collect())
}

fn tokenizes(vocab: &TokenTable, caption: &str) -> bool {
    vocab.tokenize(caption).is_ok()
}

fn valid_plus(q: &AttributeQuery, vocab: &TokenTable, caption: &str) -> bool {
    let Some(w) = words(caption) else { return false };
    tokenizes(vocab, caption) && w.contains(&q.identifier.as_str()) && w.contains(&q.descriptor())
}

fn valid_minus(q: &AttributeQuery, vocab: &TokenTable, caption: &str) -> bool {
    let Some(w) = words(caption) else { return false };
    let reference = q.reference_value(q.target_axis);
    tokenizes(vocab, caption)
        && w.contains(&q.identifier.as_str())
        && w.iter()
            .any(|word| Axis::of_word(word) == Some(q.target_axis) && *word != reference)
}

#[derive(Serialize)]
struct ExternalRequest<'a> {
    guidance: &'a str,
    n_each: usize,
}

#[derive(Deserialize)]
struct ExternalResponse {
    t_plus: Vec<String>,
    t_minus: Vec<String>,
}

fn fetch_external(url: &str, q: &AttributeQuery, n_each: usize, retries: u32, timeout: Duration) -> Result<ExternalResponse> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .build()
        .into();
    let body = ExternalRequest {
        guidance: &q.guidance,
        n_each,
    };
    let mut last = String::new();
    for attempt in 0..=retries {
        match agent.post(url).send_json(&body) {
            Ok(mut resp) => match resp.body_mut().read_json::<ExternalResponse>() {
                Ok(r) => return Ok(r),
                Err(e) => last = format!("bad response: {e}"),
            },
            Err(e) => last = e.to_string(),
        }
        log::warn!("prompt endpoint attempt {} failed: {last}", attempt + 1);
    }
    Err(Error::Transport { retries, message: last })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{ColorScheme, Pattern, Shape};

    fn reference() -> AttributeTuple {
        AttributeTuple::new(Shape::Star, ColorScheme::RedBlue, Pattern::HStripes)
    }

    #[test]
    fn color_template_matches_grammar() {
        let q = AttributeQuery::new(Axis::Color, reference());
        let p = synthesize_prompts(&q, &TokenTable::default(), 5, &PromptSource::Template).unwrap();
        assert_eq!(
            p.t_plus,
            [
                "a photo of a sks color circle",
                "a photo of a sks color square",
                "a photo of a sks color triangle",
                "a photo of a sks color cross",
                "a photo of a sks color ring",
            ]
        );
        assert_eq!(
            p.t_minus,
            [
                "a photo of a red sks star",
                "a photo of a green sks star",
                "a photo of a blue sks star",
                "a photo of a yellow sks star",
                "a photo of a magenta sks star",
            ]
        );
    }

    #[test]
    fn shape_template_puts_identifier_last() {
        let q = AttributeQuery::new(Axis::Shape, reference());
        let p = synthesize_prompts(&q, &TokenTable::default(), 2, &PromptSource::Template).unwrap();
        assert_eq!(p.t_plus[0], "a photo of a red sks shape");
        assert_eq!(p.t_minus[0], "a photo of a sks circle");
    }

    #[test]
    fn zero_n_each_rejected() {
        let q = AttributeQuery::new(Axis::Color, reference());
        assert!(synthesize_prompts(&q, &TokenTable::default(), 0, &PromptSource::Template).is_err());
    }
}
