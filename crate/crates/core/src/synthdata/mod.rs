//! Procedural attribute-factored scenes and the exact pixel-level oracle
//! that reads those attributes back.

pub mod attrs;
pub mod classify;
pub mod corpus;
pub mod image;
pub mod palette;
pub mod render;

pub use attrs::{caption_of, parse_caption, AttributeTuple, Axis, ColorScheme, Pattern, Shape, CAPTION_PREFIX};
pub use classify::{classify_attributes, AttributeReading};
pub use corpus::{build_corpus, CorpusConfig, CorpusManifest, SceneRecord};
pub use image::Image;
pub use render::render_scene;
