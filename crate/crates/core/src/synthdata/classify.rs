//! Analytic attribute oracle. Shape comes from mask IoU against every shape
//! and scale the renderer can produce, color from nearest-ink quantization of
//! foreground pixels, pattern from run statistics of the quantized ink map.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use super::attrs::{Axis, ColorScheme, Pattern, Shape};
use super::image::Image;
use super::palette::{all_inks, is_background, nearest_ink, Ink};
use super::render::{pattern_unit, shape_mask, SCALE_LEVELS};

pub const NO_OBJECT_FRACTION: f32 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeReading {
    pub foreground_fraction: f32,
    pub shape: Option<Shape>,
    pub shape_score: f32,
    /// Best IoU per shape, vocabulary order.
    pub shape_scores: Vec<f32>,
    /// Foreground mass per color scheme; sums to 1 when an object is present.
    pub color_histogram: Vec<f32>,
    pub pattern: Option<Pattern>,
    pub pattern_score: f32,
    pub pattern_scores: Vec<f32>,
}

impl AttributeReading {
    pub fn no_object(foreground_fraction: f32) -> Self {
        Self {
            foreground_fraction,
            shape: None,
            shape_score: 0.0,
            shape_scores: vec![0.0; Shape::ALL.len()],
            color_histogram: vec![0.0; ColorScheme::ALL.len()],
            pattern: None,
            pattern_score: 0.0,
            pattern_scores: vec![0.0; Pattern::ALL.len()],
        }
    }

    pub fn has_object(&self) -> bool {
        self.shape.is_some()
    }

    pub fn color(&self) -> Option<ColorScheme> {
        if !self.has_object() {
            return None;
        }
        argmax(&self.color_histogram).map(|i| ColorScheme::ALL[i])
    }

    /// Top label on one axis as its vocabulary word.
    pub fn label(&self, axis: Axis) -> Option<&'static str> {
        match axis {
            Axis::Shape => self.shape.map(Shape::word),
            Axis::Color => self.color().map(ColorScheme::word),
            Axis::Pattern => self.pattern.map(Pattern::word),
        }
    }

    /// Per-label scores on one axis, all in [0, 1].
    pub fn axis_scores(&self, axis: Axis) -> &[f32] {
        match axis {
            Axis::Shape => &self.shape_scores,
            Axis::Color => &self.color_histogram,
            Axis::Pattern => &self.pattern_scores,
        }
    }

    /// Attribute-feature vector: shape one-hot, color histogram, pattern
    /// one-hot. All zeros for a no-object reading.
    pub fn embedding(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(EMBEDDING_DIM);
        let mut one_hot = |label: Option<usize>, n: usize| {
            for i in 0..n {
                v.push(if label == Some(i) { 1.0 } else { 0.0 });
            }
        };
        one_hot(self.shape.map(Shape::index), Shape::ALL.len());
        if self.has_object() {
            v.extend(self.color_histogram.iter().map(|&x| f64::from(x)));
        } else {
            v.extend(std::iter::repeat_n(0.0, ColorScheme::ALL.len()));
        }
        let pattern = self.pattern.map(Pattern::index);
        for i in 0..Pattern::ALL.len() {
            v.push(if pattern == Some(i) { 1.0 } else { 0.0 });
        }
        v
    }
}

pub const EMBEDDING_DIM: usize = 6 + 8 + 5;

fn argmax(xs: &[f32]) -> Option<usize> {
    let mut best: Option<(usize, f32)> = None;
    for (i, &x) in xs.iter().enumerate() {
        if best.is_none_or(|(_, b)| x > b) {
            best = Some((i, x));
        }
    }
    best.map(|(i, _)| i)
}

struct ShapeBank {
    masks: Vec<(Shape, Vec<bool>)>,
}

fn shape_bank(size: usize) -> Arc<ShapeBank> {
    static BANKS: OnceLock<Mutex<HashMap<usize, Arc<ShapeBank>>>> = OnceLock::new();
    let banks = BANKS.get_or_init(Default::default);
    let mut guard = banks.lock().unwrap();
    guard
        .entry(size)
        .or_insert_with(|| {
            let mut masks = Vec::new();
            for &shape in Shape::ALL {
                for &scale in &SCALE_LEVELS {
                    masks.push((shape, shape_mask(shape, scale, size)));
                }
            }
            Arc::new(ShapeBank { masks })
        })
        .clone()
}

fn iou(a: &[bool], b: &[bool]) -> f32 {
    let (mut inter, mut union) = (0u32, 0u32);
    for (&x, &y) in a.iter().zip(b) {
        inter += u32::from(x && y);
        union += u32::from(x || y);
    }
    if union == 0 {
        0.0
    } else {
        inter as f32 / union as f32
    }
}

/// Run statistics of a binary ink map: minority fraction, and the rate of
/// label changes between horizontally and vertically adjacent foreground
/// pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatternFeatures {
    pub minority: f32,
    pub horizontal: f32,
    pub vertical: f32,
}

impl PatternFeatures {
    fn dist(&self, other: &PatternFeatures) -> f32 {
        ((self.minority - other.minority).powi(2)
            + (self.horizontal - other.horizontal).powi(2)
            + (self.vertical - other.vertical).powi(2))
        .sqrt()
    }
}

/// Expected features of a clean render for each pattern at half-period `unit`.
pub fn pattern_prototype(pattern: Pattern, unit: usize) -> PatternFeatures {
    let step = 1.0 / unit as f32;
    let (minority, horizontal, vertical) = match pattern {
        Pattern::Solid => (0.0, 0.0, 0.0),
        Pattern::HStripes => (0.5, 0.0, step),
        Pattern::VStripes => (0.5, step, 0.0),
        Pattern::Checker => (0.5, step, step),
        Pattern::Dots => (1.0 / 9.0, 2.0 * step / 9.0, 2.0 * step / 9.0),
    };
    PatternFeatures {
        minority,
        horizontal,
        vertical,
    }
}

const PATTERN_SCORE_SCALE: f32 = 0.5;

pub fn pattern_features(ink_map: &[Option<usize>], size: usize) -> PatternFeatures {
    let mut counts: HashMap<usize, usize> = HashMap::new();
    for ink in ink_map.iter().flatten() {
        *counts.entry(*ink).or_default() += 1;
    }
    let total: usize = counts.values().sum();
    let mode = counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(k, _)| *k);
    let Some(mode) = mode else {
        return PatternFeatures {
            minority: 0.0,
            horizontal: 0.0,
            vertical: 0.0,
        };
    };
    let minority = 1.0 - counts[&mode] as f32 / total as f32;
    let bit = |i: usize| ink_map[i].map(|k| k == mode);
    let (mut h_pairs, mut h_changes, mut v_pairs, mut v_changes) = (0u32, 0u32, 0u32, 0u32);
    for y in 0..size {
        for x in 0..size {
            let Some(b) = bit(y * size + x) else { continue };
            if x + 1 < size {
                if let Some(r) = bit(y * size + x + 1) {
                    h_pairs += 1;
                    h_changes += u32::from(r != b);
                }
            }
            if y + 1 < size {
                if let Some(d) = bit((y + 1) * size + x) {
                    v_pairs += 1;
                    v_changes += u32::from(d != b);
                }
            }
        }
    }
    let rate = |c: u32, p: u32| if p == 0 { 0.0 } else { c as f32 / p as f32 };
    PatternFeatures {
        minority,
        horizontal: rate(h_changes, h_pairs),
        vertical: rate(v_changes, v_pairs),
    }
}

pub fn classify_attributes(img: &Image) -> AttributeReading {
    let size = img.size;
    let n = size * size;
    let inks: &[Ink] = all_inks();
    let mut fg = vec![false; n];
    let mut ink_map = vec![None; n];
    let mut hist = vec![0.0f32; ColorScheme::ALL.len()];
    let mut count = 0usize;
    for y in 0..size {
        for x in 0..size {
            let p = img.pixel(x, y);
            if is_background(p) {
                continue;
            }
            let i = y * size + x;
            fg[i] = true;
            let k = nearest_ink(p, inks);
            ink_map[i] = Some(k);
            hist[inks[k].scheme.index()] += 1.0;
            count += 1;
        }
    }
    let fraction = count as f32 / n as f32;
    if fraction < NO_OBJECT_FRACTION {
        return AttributeReading::no_object(fraction);
    }
    for h in &mut hist {
        *h /= count as f32;
    }

    let bank = shape_bank(size);
    let mut shape_scores = vec![0.0f32; Shape::ALL.len()];
    for (shape, mask) in &bank.masks {
        let s = iou(&fg, mask);
        let slot = &mut shape_scores[shape.index()];
        *slot = slot.max(s);
    }
    let shape_idx = argmax(&shape_scores).unwrap();

    let feats = pattern_features(&ink_map, size);
    let unit = pattern_unit(size);
    let pattern_scores: Vec<f32> = Pattern::ALL
        .iter()
        .map(|&p| (1.0 - feats.dist(&pattern_prototype(p, unit)) / PATTERN_SCORE_SCALE).max(0.0))
        .collect();
    let pattern_idx = argmax(&pattern_scores).unwrap();

    AttributeReading {
        foreground_fraction: fraction,
        shape: Some(Shape::ALL[shape_idx]),
        shape_score: shape_scores[shape_idx],
        shape_scores,
        color_histogram: hist,
        pattern: Some(Pattern::ALL[pattern_idx]),
        pattern_score: pattern_scores[pattern_idx],
        pattern_scores,
    }
}
