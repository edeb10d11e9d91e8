use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthdata::{Axis, ColorScheme, Pattern, Shape};

pub const NULL_TOKEN: &str = "<null>";
pub const GRAMMAR: [&str; 3] = ["a", "photo", "of"];
pub const PLACEHOLDERS: [&str; 9] = [
    "sks", "tgt", "ngt", "sks1", "sks2", "tgt1", "ngt1", "tgt2", "ngt2",
];
/// Placeholders that stand for an adjusted embedding at inference time. The
/// remaining placeholders are identifiers trained directly.
pub const SLOTS: [&str; 3] = ["sks", "sks1", "sks2"];

pub fn is_slot(token: &str) -> bool {
    SLOTS.contains(&token)
}


/// Token vocabulary with learnable-placeholder flags. Embedding rows live in
/// the model's parameter set, one row per token in this order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenTable {
    pub tokens: Vec<String>,
    pub placeholder: Vec<bool>,
}

impl Default for TokenTable {
    fn default() -> Self {
        let mut tokens: Vec<String> = vec![NULL_TOKEN.into()];
        tokens.extend(GRAMMAR.iter().map(|s| s.to_string()));
        tokens.extend(Axis::ALL.iter().map(|a| a.descriptor().to_string()));
        tokens.extend(ColorScheme::ALL.iter().map(|c| c.word().to_string()));
        tokens.extend(Pattern::ALL.iter().map(|p| p.word().to_string()));
        tokens.extend(Shape::ALL.iter().map(|s| s.word().to_string()));
        let n_fixed = tokens.len();
        tokens.extend(PLACEHOLDERS.iter().map(|s| s.to_string()));
        let placeholder = (0..tokens.len()).map(|i| i >= n_fixed).collect();
        Self {
            tokens,
            placeholder,
        }
    }
}

impl TokenTable {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.tokens.iter().position(|t| t == token)
    }

    pub fn is_placeholder(&self, token: &str) -> bool {
        self.id(token).is_some_and(|i| self.placeholder[i])
    }

    /// Whitespace tokenization; an empty prompt maps to the null token.
    pub fn tokenize(&self, prompt: &str) -> Result<Vec<usize>> {
        let words: Vec<&str> = prompt.split_whitespace().collect();
        if words.is_empty() {
            return Ok(vec![self.id(NULL_TOKEN).expect("null token present")]);
        }
        words
            .iter()
            .map(|w| {
                self.id(w).ok_or_else(|| Error::Tokenization {
                    token: w.to_string(),
                    prompt: prompt.to_string(),
                })
            })
            .collect()
    }
}

/// Replacement embedding rows keyed by token.
pub type Overrides = BTreeMap<String, Vec<f32>>;
