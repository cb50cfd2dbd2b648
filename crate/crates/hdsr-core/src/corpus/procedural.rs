//! Procedural digit glyphs: stroke models rendered with per-sample jitter.
//!
//! The generator makes the rest of the pipeline testable without any external
//! glyph corpus. Every glyph is a deterministic function of
//! `(seed, writer, class)`; one writer contributes one glyph per class, so
//! writer-disjoint splits work exactly as with a scanned corpus.

use crate::corpus::glyph::{GlyphCorpus, GlyphSample};
use crate::error::{Error, Result};
use crate::raster::GrayImage;
use crate::rng;
use rand::Rng;

/// Base glyph height in pixels before scale jitter.
const BASE_HEIGHT: f64 = 24.0;

type Pt = (f64, f64);

/// Sampled elliptical arc, angles in radians, y axis pointing down.
fn arc(cx: f64, cy: f64, rx: f64, ry: f64, a0: f64, a1: f64, n: usize) -> Vec<Pt> {
    (0..=n)
        .map(|i| {
            let t = a0 + (a1 - a0) * i as f64 / n as f64;
            (cx + rx * t.cos(), cy + ry * t.sin())
        })
        .collect()
}

/// Stroke control points for each digit on the unit square (y down).
fn digit_strokes(digit: u8) -> Vec<Vec<Pt>> {
    use std::f64::consts::PI;
    match digit {
        0 => vec![arc(0.5, 0.5, 0.30, 0.42, 0.0, 2.0 * PI, 28)],
        1 => vec![vec![(0.32, 0.26), (0.54, 0.08), (0.54, 0.92)]],
        2 => {
            let mut top = arc(0.5, 0.3, 0.28, 0.22, PI, 2.0 * PI, 12);
            top.extend([(0.74, 0.42), (0.24, 0.88)]);
            vec![top, vec![(0.24, 0.88), (0.78, 0.88)]]
        }
        3 => {
            let mut s = arc(0.47, 0.28, 0.25, 0.20, 0.75 * PI, 2.25 * PI, 12);
            s.extend(arc(0.47, 0.7, 0.28, 0.22, -0.25 * PI, 0.75 * PI, 12));
            vec![s]
        }
        4 => vec![
            vec![(0.58, 0.08), (0.18, 0.62), (0.84, 0.62)],
            vec![(0.64, 0.30), (0.64, 0.92)],
        ],
        5 => {
            let mut s = vec![(0.76, 0.10), (0.30, 0.10), (0.27, 0.46)];
            s.extend(arc(0.47, 0.66, 0.26, 0.22, -0.45 * PI, 0.8 * PI, 14));
            vec![s]
        }
        6 => {
            let mut s = vec![(0.66, 0.08), (0.38, 0.34), (0.27, 0.62)];
            s.extend(arc(0.5, 0.68, 0.23, 0.21, PI, 3.0 * PI, 20));
            vec![s]
        }
        7 => vec![vec![(0.2, 0.10), (0.8, 0.10), (0.42, 0.92)]],
        8 => vec![
            arc(0.5, 0.3, 0.22, 0.20, -0.5 * PI, 1.5 * PI, 20),
            arc(0.5, 0.71, 0.26, 0.22, -0.5 * PI, 1.5 * PI, 20),
        ],
        9 => {
            let mut s = arc(0.48, 0.32, 0.23, 0.21, 0.0, 2.0 * PI, 20);
            s.extend([(0.71, 0.36), (0.62, 0.92)]);
            vec![s]
        }
        _ => unreachable!("digit out of range"),
    }
}

/// Stamp a soft disc of radius `r` centered at (cx, cy).
fn stamp(img: &mut GrayImage, cx: f64, cy: f64, r: f64) {
    let x0 = (cx - r - 1.0).floor().max(0.0) as usize;
    let y0 = (cy - r - 1.0).floor().max(0.0) as usize;
    let x1 = ((cx + r + 1.0).ceil() as usize).min(img.width().saturating_sub(1));
    let y1 = ((cy + r + 1.0).ceil() as usize).min(img.height().saturating_sub(1));
    for y in y0..=y1 {
        for x in x0..=x1 {
            let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
            let v = if d <= r - 0.5 {
                0.0
            } else if d < r + 0.5 {
                255.0 * (d - (r - 0.5))
            } else {
                continue;
            };
            img.stamp_min(x, y, v as u8);
        }
    }
}

fn draw_polyline(img: &mut GrayImage, pts: &[(f64, f64)], r: f64) {
    for w in pts.windows(2) {
        let (x0, y0) = w[0];
        let (x1, y1) = w[1];
        let len = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt();
        let steps = (len / 0.35).ceil().max(1.0) as usize;
        for i in 0..=steps {
            let t = i as f64 / steps as f64;
            stamp(img, x0 + (x1 - x0) * t, y0 + (y1 - y0) * t, r);
        }
    }
}

/// Render one jittered glyph. Deterministic in `(seed, writer, class)`.
pub fn render_glyph(seed: u64, writer: u64, digit: u8) -> GlyphSample {
    let mut rng = rng::stream(seed, "procedural-glyph", writer * 10 + digit as u64);
    let scale = rng.gen_range(0.9..1.1);
    let aspect = rng.gen_range(0.85..1.15);
    let slant = rng.gen_range(-0.18..0.18f64);
    let radius = rng.gen_range(1.0..1.7f64);
    let height = BASE_HEIGHT * scale;
    let width = height * 0.72 * aspect;
    let margin = radius + slant.abs() * height + 2.0;
    let canvas_w = (width + 2.0 * margin).ceil() as usize;
    let canvas_h = (height + 2.0 * margin).ceil() as usize;

    let mut img = GrayImage::blank(canvas_w, canvas_h);
    for stroke in digit_strokes(digit) {
        let pts: Vec<(f64, f64)> = stroke
            .iter()
            .map(|&(ux, uy)| {
                // per-point jitter, then shear around the vertical midline
                let jx = ux + rng.gen_range(-0.02..0.02);
                let jy = uy + rng.gen_range(-0.02..0.02);
                let x = jx * width + slant * (0.5 - jy) * height + margin;
                let y = jy * height + margin;
                (x, y)
            })
            .collect();
        draw_polyline(&mut img, &pts, radius);
    }
    let raster = img.trim_to_ink();
    GlyphSample::new(digit, format!("{writer:04}"), raster)
        .expect("procedural glyph always has ink")
}

/// A corpus of `per_class` glyphs for every digit class. Writer `w`
/// contributes exactly one glyph per class, writers are `0000..per_class`.
pub fn procedural_glyphs(seed: u64, per_class: usize) -> Result<GlyphCorpus> {
    if per_class == 0 {
        return Err(Error::InvalidArgument("per_class must be >= 1".into()));
    }
    let glyphs = (0..per_class as u64)
        .flat_map(|w| (0u8..10).map(move |d| (w, d)))
        .map(|(w, d)| render_glyph(seed, w, d));
    Ok(GlyphCorpus::from_glyphs(glyphs))
}
