use rand::Rng;

use super::attrs::{AttributeTuple, Pattern, Shape};
use super::image::Image;
use super::palette::{inks, BACKGROUND};
use crate::error::{Error, Result};
use crate::rng;

/// Discrete object scales as a fraction of the image side. Keeping the set
/// finite lets the shape oracle enumerate every mask the renderer can emit.
pub const SCALE_LEVELS: [f32; 5] = [0.50, 0.55, 0.60, 0.65, 0.70];

pub const MIN_SIZE: usize = 16;

pub fn scale_for_seed(seed: u64) -> f32 {
    let mut r = rng::stream(seed, "render-scale", 0);
    SCALE_LEVELS[r.random_range(0..SCALE_LEVELS.len())]
}

/// Stripe / check half-period in pixels.
pub fn pattern_unit(size: usize) -> usize {
    (size / 16).max(1)
}

const STAR_INNER: f32 = 0.45;
const CROSS_HALF_WIDTH: f32 = 0.34;
const RING_INNER: f32 = 0.5;

fn star_vertices() -> [(f32, f32); 10] {
    let mut v = [(0.0, 0.0); 10];
    for (k, slot) in v.iter_mut().enumerate() {
        let r = if k % 2 == 0 { 1.0 } else { STAR_INNER };
        let a = -std::f32::consts::FRAC_PI_2 + k as f32 * std::f32::consts::PI / 5.0;
        *slot = (r * a.cos(), r * a.sin());
    }
    v
}

fn inside_polygon(u: f32, v: f32, poly: &[(f32, f32)]) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > v) != (yj > v) && u < (xj - xi) * (v - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Shape membership in box-normalized coordinates (u, v in [-1, 1], v down).
pub fn shape_contains(shape: Shape, u: f32, v: f32) -> bool {
    match shape {
        Shape::Circle => u * u + v * v <= 1.0,
        Shape::Square => u.abs() <= 1.0 && v.abs() <= 1.0,
        Shape::Triangle => (-1.0..=1.0).contains(&v) && u.abs() <= (v + 1.0) * 0.5,
        Shape::Star => inside_polygon(u, v, &star_vertices()),
        Shape::Cross => {
            (u.abs() <= CROSS_HALF_WIDTH && v.abs() <= 1.0)
                || (v.abs() <= CROSS_HALF_WIDTH && u.abs() <= 1.0)
        }
        Shape::Ring => {
            let r2 = u * u + v * v;
            (RING_INNER * RING_INNER..=1.0).contains(&r2)
        }
    }
}

/// Boolean mask (row-major) of `shape` centered at `scale` of the side.
pub fn shape_mask(shape: Shape, scale: f32, size: usize) -> Vec<bool> {
    let half = scale * size as f32 * 0.5;
    let c = size as f32 * 0.5;
    let mut m = vec![false; size * size];
    for y in 0..size {
        for x in 0..size {
            let u = (x as f32 + 0.5 - c) / half;
            let v = (y as f32 + 0.5 - c) / half;
            m[y * size + x] = shape_contains(shape, u, v);
        }
    }
    m
}

/// Whether pixel (x, y) takes the scheme's secondary ink.
pub fn pattern_secondary(pattern: Pattern, x: usize, y: usize, unit: usize) -> bool {
    let (cx, cy) = (x / unit, y / unit);
    match pattern {
        Pattern::Solid => false,
        Pattern::HStripes => cy % 2 == 1,
        Pattern::VStripes => cx % 2 == 1,
        Pattern::Checker => (cx + cy) % 2 == 1,
        Pattern::Dots => cx % 3 == 1 && cy % 3 == 1,
    }
}

pub fn render_scene(attrs: &AttributeTuple, seed: u64, size: usize) -> Result<Image> {
    if size < MIN_SIZE {
        return Err(Error::Config(format!(
            "image size {size} below minimum {MIN_SIZE}"
        )));
    }
    let scale = scale_for_seed(seed);
    let mask = shape_mask(attrs.shape, scale, size);
    let (primary, secondary) = inks(attrs.color);
    let unit = pattern_unit(size);
    let mut img = Image::filled(size, BACKGROUND);
    for y in 0..size {
        for x in 0..size {
            if mask[y * size + x] {
                let ink = if pattern_secondary(attrs.pattern, x, y, unit) {
                    secondary
                } else {
                    primary
                };
                img.set_pixel(x, y, ink);
            }
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::attrs::ColorScheme;
    use crate::synthdata::palette::is_background;

    #[test]
    fn solid_fill_uses_primary_ink() {
        let a = AttributeTuple::new(Shape::Circle, ColorScheme::Red, Pattern::Solid);
        let img = render_scene(&a, 0, 32).unwrap();
        let red = inks(ColorScheme::Red).0;
        let mut fg = 0;
        for y in 0..32 {
            for x in 0..32 {
                let p = img.pixel(x, y);
                if !is_background(p) {
                    assert_eq!(p, red);
                    fg += 1;
                }
            }
        }
        assert!(fg > 100);
    }

    #[test]
    fn rendering_is_deterministic() {
        let a = AttributeTuple::new(Shape::Star, ColorScheme::RedBlue, Pattern::HStripes);
        assert_eq!(render_scene(&a, 7, 32).unwrap(), render_scene(&a, 7, 32).unwrap());
    }

    #[test]
    fn object_spans_half_to_seventy_percent() {
        for seed in 0..20 {
            let a = AttributeTuple::new(Shape::Square, ColorScheme::Blue, Pattern::Solid);
            let img = render_scene(&a, seed, 32).unwrap();
            let row: usize = (0..32).filter(|&x| !is_background(img.pixel(x, 16))).count();
            assert!((16..=23).contains(&row), "seed {seed}: width {row}");
        }
    }

    #[test]
    fn rejects_small_images() {
        let a = AttributeTuple::new(Shape::Square, ColorScheme::Blue, Pattern::Solid);
        assert!(matches!(render_scene(&a, 0, 8), Err(Error::Config(_))));
    }
}
