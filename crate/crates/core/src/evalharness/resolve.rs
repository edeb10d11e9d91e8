use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthdata::{AttributeTuple, Axis, ColorScheme, Pattern, Shape, CAPTION_PREFIX};
use crate::toydiff::text::PLACEHOLDERS;

/// Attribute values a prompt asks for; `None` leaves the axis free.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestedAttrs {
    pub shape: Option<Shape>,
    pub color: Option<ColorScheme>,
    pub pattern: Option<Pattern>,
}

impl RequestedAttrs {
    pub fn get(&self, axis: Axis) -> Option<&'static str> {
        match axis {
            Axis::Shape => self.shape.map(Shape::word),
            Axis::Color => self.color.map(ColorScheme::word),
            Axis::Pattern => self.pattern.map(Pattern::word),
        }
    }

    fn set(&mut self, axis: Axis, word: &str) -> Result<()> {
        if let Some(prev) = self.get(axis) {
            if prev != word {
                return Err(Error::Evaluation(format!("prompt asks for both {prev} and {word}")));
            }
        }
        match axis {
            Axis::Shape => self.shape = Some(word.parse()?),
            Axis::Color => self.color = Some(word.parse()?),
            Axis::Pattern => self.pattern = Some(word.parse()?),
        }
        Ok(())
    }

    pub fn full(t: &AttributeTuple) -> Self {
        Self {
            shape: Some(t.shape),
            color: Some(t.color),
            pattern: Some(t.pattern),
        }
    }
}

/// Ground truth that identifier tokens stand for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolveContext {
    pub reference: AttributeTuple,
    pub target_axis: Axis,
}

fn is_nontarget_identifier(token: &str) -> bool {
    token.starts_with("ngt")
}

/// Maps a prompt to the attributes it requests. An identifier followed by a
/// descriptor ("sks color") requests the reference value on that axis. A bare
/// non-target identifier requests reference values on the free non-target
/// axes; any other bare identifier requests reference values on every free
/// axis. Explicit attribute words take precedence over bare identifiers.
pub fn resolve_prompt(prompt: &str, ctx: Option<&ResolveContext>) -> Result<RequestedAttrs> {
    resolve(prompt, ctx, true)
}

/// Like [`resolve_prompt`] but bare identifiers request nothing, so only
/// what the prompt spells out is returned.
pub fn explicit_request(prompt: &str, ctx: Option<&ResolveContext>) -> Result<RequestedAttrs> {
    resolve(prompt, ctx, false)
}

fn resolve(prompt: &str, ctx: Option<&ResolveContext>, fill_bare: bool) -> Result<RequestedAttrs> {
    let unparseable = |why: &str| Error::Evaluation(format!("cannot resolve {prompt:?}: {why}"));
    let rest = prompt
        .strip_prefix(CAPTION_PREFIX)
        .ok_or_else(|| unparseable("missing prefix"))?;
    let words: Vec<&str> = rest.split_whitespace().collect();
    let mut out = RequestedAttrs::default();
    let mut bare: Vec<&str> = Vec::new();
    let mut i = 0;
    while i < words.len() {
        let w = words[i];
        if let Some(axis) = Axis::of_word(w) {
            out.set(axis, w)?;
        } else if PLACEHOLDERS.contains(&w) {
            let ctx = ctx.ok_or_else(|| unparseable("identifier without a reference"))?;
            match words.get(i + 1).and_then(|d| Axis::from_descriptor(d)) {
                Some(axis) => {
                    out.set(axis, ctx.reference.value(axis))?;
                    i += 1;
                }
                None => bare.push(w),
            }
        } else {
            return Err(unparseable(&format!("unexpected word {w:?}")));
        }
        i += 1;
    }
    for w in bare.into_iter().filter(|_| fill_bare) {
        let ctx = ctx.expect("checked above");
        for axis in Axis::ALL {
            let applies = !is_nontarget_identifier(w) || axis != ctx.target_axis;
            if applies && out.get(axis).is_none() {
                out.set(axis, ctx.reference.value(axis))?;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx() -> ResolveContext {
        ResolveContext {
            reference: AttributeTuple::parse("star", "red_blue", "hstripes").unwrap(),
            target_axis: Axis::Color,
        }
    }

    #[test]
    fn plain_caption() {
        let r = resolve_prompt("a photo of a red solid circle", None).unwrap();
        assert_eq!(r, RequestedAttrs::full(&AttributeTuple::parse("circle", "red", "solid").unwrap()));
    }

    #[test]
    fn identifier_with_descriptor() {
        let r = resolve_prompt("a photo of a sks color circle", Some(&ctx())).unwrap();
        assert_eq!(r.color, Some(ColorScheme::RedBlue));
        assert_eq!(r.shape, Some(Shape::Circle));
        assert_eq!(r.pattern, None);
    }

    #[test]
    fn explicit_skips_bare_identifiers() {
        let r = explicit_request("a photo of a green sks star", Some(&ctx())).unwrap();
        assert_eq!(r.color, Some(ColorScheme::Green));
        assert_eq!(r.shape, Some(Shape::Star));
        assert_eq!(r.pattern, None);
        let r = explicit_request("a photo of a sks color circle", Some(&ctx())).unwrap();
        assert_eq!(r, resolve_prompt("a photo of a sks color circle", Some(&ctx())).unwrap());
    }

    #[test]
    fn bare_identifiers() {
        let r = resolve_prompt("a photo of a green sks star", Some(&ctx())).unwrap();
        assert_eq!(r.pattern, Some(Pattern::HStripes));
        assert_eq!(r.color, Some(ColorScheme::Green));
        let r = resolve_prompt("a photo of a ngt circle", Some(&ctx())).unwrap();
        assert_eq!((r.color, r.pattern), (None, Some(Pattern::HStripes)));
        let r = resolve_prompt("a photo of a sks", Some(&ctx())).unwrap();
        assert_eq!(r, RequestedAttrs::full(&ctx().reference));
    }

    #[test]
    fn errors() {
        assert!(resolve_prompt("a drawing of a star", None).is_err());
        assert!(resolve_prompt("a photo of a sks color star", None).is_err());
        assert!(resolve_prompt("a photo of a red green star", None).is_err());
        assert!(resolve_prompt("a photo of a banana", None).is_err());
    }
}
