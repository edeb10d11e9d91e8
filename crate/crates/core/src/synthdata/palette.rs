//! Ink table. Each color scheme owns two inks: solid schemes pair a color
//! with its dark shade, two-color schemes pair two light tints. Pattern
//! pixels take the secondary ink. Every ink lies more than 0.3 from the
//! background gray, so a pixel is background exactly when gray is its nearest
//! reference color; on clean renders this coincides with a 0.08 distance test.

use super::attrs::ColorScheme;

pub const BACKGROUND: [f32; 3] = [0.5, 0.5, 0.5];
pub const BACKGROUND_THRESHOLD: f32 = 0.08;

use std::sync::OnceLock;

pub fn inks(scheme: ColorScheme) -> ([f32; 3], [f32; 3]) {
    use ColorScheme::*;
    match scheme {
        Red => ([0.90, 0.10, 0.10], [0.45, 0.05, 0.05]),
        Green => ([0.10, 0.75, 0.10], [0.05, 0.38, 0.05]),
        Blue => ([0.10, 0.20, 0.90], [0.05, 0.10, 0.45]),
        Yellow => ([0.95, 0.90, 0.10], [0.48, 0.45, 0.05]),
        Magenta => ([0.85, 0.10, 0.85], [0.43, 0.05, 0.43]),
        Cyan => ([0.10, 0.85, 0.85], [0.05, 0.43, 0.43]),
        RedBlue => ([1.00, 0.55, 0.55], [0.55, 0.65, 1.00]),
        GreenYellow => ([0.60, 1.00, 0.60], [1.00, 1.00, 0.60]),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ink {
    pub rgb: [f32; 3],
    pub scheme: ColorScheme,
    pub secondary: bool,
}

/// All sixteen inks, two per scheme, scheme order.
pub fn all_inks() -> &'static [Ink] {
    static INKS: OnceLock<Vec<Ink>> = OnceLock::new();
    INKS.get_or_init(build_inks)
}

fn build_inks() -> Vec<Ink> {
    ColorScheme::ALL
        .iter()
        .flat_map(|&scheme| {
            let (p, s) = inks(scheme);
            [
                Ink {
                    rgb: p,
                    scheme,
                    secondary: false,
                },
                Ink {
                    rgb: s,
                    scheme,
                    secondary: true,
                },
            ]
        })
        .collect()
}

pub fn dist2(a: [f32; 3], b: [f32; 3]) -> f32 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

pub fn is_background(rgb: [f32; 3]) -> bool {
    let d = dist2(rgb, BACKGROUND);
    d < BACKGROUND_THRESHOLD * BACKGROUND_THRESHOLD
        || all_inks().iter().all(|ink| d <= dist2(rgb, ink.rgb))
}

pub fn nearest_ink(rgb: [f32; 3], inks: &[Ink]) -> usize {
    let mut best = 0;
    let mut best_d = f32::INFINITY;
    for (i, ink) in inks.iter().enumerate() {
        let d = dist2(rgb, ink.rgb);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}
