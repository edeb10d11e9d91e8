use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

macro_rules! closed_vocab {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $word:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $word)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn word(self) -> &'static str {
                match self {
                    $($name::$variant => $word),+
                }
            }

            pub fn index(self) -> usize {
                Self::ALL.iter().position(|v| *v == self).unwrap()
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($word => Ok($name::$variant),)+
                    other => Err(Error::InvalidAttribute(format!(
                        "{other:?} is not a {}",
                        stringify!($name)
                    ))),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.word())
            }
        }
    };
}

closed_vocab!(Shape {
    Circle => "circle",
    Square => "square",
    Triangle => "triangle",
    Star => "star",
    Cross => "cross",
    Ring => "ring",
});

closed_vocab!(
    /// Six solid colors followed by two two-color schemes.
    ColorScheme {
        Red => "red",
        Green => "green",
        Blue => "blue",
        Yellow => "yellow",
        Magenta => "magenta",
        Cyan => "cyan",
        RedBlue => "red_blue",
        GreenYellow => "green_yellow",
    }
);

closed_vocab!(Pattern {
    Solid => "solid",
    HStripes => "hstripes",
    VStripes => "vstripes",
    Checker => "checker",
    Dots => "dots",
});

/// One factor of variation. The descriptor word is what prompts use to name
/// the axis ("a photo of a sks color circle").
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Color,
    Pattern,
    Shape,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::Color, Axis::Pattern, Axis::Shape];

    pub fn descriptor(self) -> &'static str {
        match self {
            Axis::Color => "color",
            Axis::Pattern => "pattern",
            Axis::Shape => "shape",
        }
    }

    pub fn from_descriptor(word: &str) -> Option<Axis> {
        Axis::ALL.into_iter().find(|a| a.descriptor() == word)
    }

    /// Attribute words on this axis, in vocabulary order.
    pub fn values(self) -> Vec<&'static str> {
        match self {
            Axis::Color => ColorScheme::ALL.iter().map(|c| c.word()).collect(),
            Axis::Pattern => Pattern::ALL.iter().map(|p| p.word()).collect(),
            Axis::Shape => Shape::ALL.iter().map(|s| s.word()).collect(),
        }
    }

    pub fn cardinality(self) -> usize {
        match self {
            Axis::Color => ColorScheme::ALL.len(),
            Axis::Pattern => Pattern::ALL.len(),
            Axis::Shape => Shape::ALL.len(),
        }
    }

    /// Which axis an attribute word belongs to, if any.
    pub fn of_word(word: &str) -> Option<Axis> {
        Axis::ALL.into_iter().find(|a| a.values().contains(&word))
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.descriptor())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AttributeTuple {
    pub shape: Shape,
    pub color: ColorScheme,
    pub pattern: Pattern,
}

pub const CAPTION_PREFIX: &str = "a photo of a";

impl AttributeTuple {
    pub fn new(shape: Shape, color: ColorScheme, pattern: Pattern) -> Self {
        Self {
            shape,
            color,
            pattern,
        }
    }

    pub fn parse(shape: &str, color: &str, pattern: &str) -> Result<Self> {
        Ok(Self::new(shape.parse()?, color.parse()?, pattern.parse()?))
    }

    /// The full 6 x 8 x 5 grid in (shape, color, pattern) lexicographic order.
    pub fn all() -> Vec<AttributeTuple> {
        let mut out = Vec::with_capacity(240);
        for &shape in Shape::ALL {
            for &color in ColorScheme::ALL {
                for &pattern in Pattern::ALL {
                    out.push(Self::new(shape, color, pattern));
                }
            }
        }
        out
    }

    pub fn value(&self, axis: Axis) -> &'static str {
        match axis {
            Axis::Color => self.color.word(),
            Axis::Pattern => self.pattern.word(),
            Axis::Shape => self.shape.word(),
        }
    }

    pub fn caption(&self) -> String {
        caption_of(self)
    }
}

pub fn caption_of(attrs: &AttributeTuple) -> String {
    format!(
        "{CAPTION_PREFIX} {} {} {}",
        attrs.color, attrs.pattern, attrs.shape
    )
}

/// Inverse of [`caption_of`]. Only full, well-formed captions are accepted.
pub fn parse_caption(caption: &str) -> Result<AttributeTuple> {
    let rest = caption
        .strip_prefix(CAPTION_PREFIX)
        .and_then(|r| r.strip_prefix(' '))
        .ok_or_else(|| Error::InvalidAttribute(format!("caption {caption:?} lacks prefix")))?;
    let words: Vec<&str> = rest.split(' ').collect();
    match words.as_slice() {
        [color, pattern, shape] => AttributeTuple::parse(shape, color, pattern),
        _ => Err(Error::InvalidAttribute(format!(
            "caption {caption:?} is not \"{CAPTION_PREFIX} <color> <pattern> <shape>\""
        ))),
    }
}
