//! Glyph composition: placing digits side by side with controlled ligatures,
//! and classifying how each adjacent pair touches.
//!
//! Compositing is ink-union (darker wins). Touching pairs are classified by
//! measurable geometry: heavy horizontal box overlap is type V, otherwise the
//! shape of the coincidence region decides between a single contact point
//! (I), a contact segment (II), and multiple disjoint contact regions (III).
//! This geometric reading approximates the pictorial taxonomy of the TP
//! benchmark and is flagged as such in reports.

use crate::corpus::glyph::GlyphSample;
use crate::corpus::manifest::{ConnectionType, DigitBox};
use crate::error::{Error, Result};
use crate::raster::GrayImage;

/// Horizontal box IoU above which a touching pair counts as type V.
pub const TYPE_V_HORIZONTAL_IOU: f64 = 0.15;

/// White border left around composed strings.
pub const CANVAS_BORDER: usize = 5;

/// A glyph placement on the shared canvas (top-left corner, canvas coords).
#[derive(Debug, Clone, Copy)]
struct Placement {
    x: i64,
    y: i64,
}

/// Coincidence pixels between two placed glyphs: positions where both have ink.
fn coincidence(
    a: &GrayImage,
    pa: Placement,
    b: &GrayImage,
    pb: Placement,
) -> Vec<(i64, i64)> {
    let x0 = pa.x.max(pb.x);
    let y0 = pa.y.max(pb.y);
    let x1 = (pa.x + a.width() as i64).min(pb.x + b.width() as i64);
    let y1 = (pa.y + a.height() as i64).min(pb.y + b.height() as i64);
    let mut out = Vec::new();
    for y in y0..y1 {
        for x in x0..x1 {
            let ia = a.is_ink((x - pa.x) as usize, (y - pa.y) as usize);
            let ib = b.is_ink((x - pb.x) as usize, (y - pb.y) as usize);
            if ia && ib {
                out.push((x, y));
            }
        }
    }
    out
}

/// Count 8-connected regions among the given pixel set.
fn region_count(pixels: &[(i64, i64)]) -> usize {
    use std::collections::HashSet;
    let set: HashSet<(i64, i64)> = pixels.iter().copied().collect();
    let mut seen: HashSet<(i64, i64)> = HashSet::new();
    let mut regions = 0;
    for &p in pixels {
        if seen.contains(&p) {
            continue;
        }
        regions += 1;
        let mut stack = vec![p];
        seen.insert(p);
        while let Some((x, y)) = stack.pop() {
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let q = (x + dx, y + dy);
                    if set.contains(&q) && seen.insert(q) {
                        stack.push(q);
                    }
                }
            }
        }
    }
    regions
}

fn horizontal_iou(ax: i64, aw: usize, bx: i64, bw: usize) -> f64 {
    let inter = ((ax + aw as i64).min(bx + bw as i64) - ax.max(bx)).max(0) as f64;
    let union = (aw + bw) as f64 - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Classify the connection between two placed glyphs.
fn classify_connection(
    a: &GrayImage,
    pa: Placement,
    b: &GrayImage,
    pb: Placement,
) -> ConnectionType {
    let coin = coincidence(a, pa, b, pb);
    if coin.is_empty() {
        return ConnectionType::None;
    }
    if horizontal_iou(pa.x, a.width(), pb.x, b.width()) > TYPE_V_HORIZONTAL_IOU {
        return ConnectionType::V;
    }
    match region_count(&coin) {
        1 if coin.len() == 1 => ConnectionType::I,
        1 => ConnectionType::II,
        _ => ConnectionType::III,
    }
}

/// Plan for joining one adjacent pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairPlan {
    /// Separate by this many blank columns (>= 1 keeps boxes disjoint).
    Gap(usize),
    /// Penetrate exactly this many pixels, touching or not.
    ExactOverlap(usize),
    /// Slide until ink coincides, then push `depth` pixels deeper.
    Touch { depth: usize },
}

/// Composition output before manifest packaging.
#[derive(Debug, Clone)]
pub struct Composition {
    pub raster: GrayImage,
    pub boxes: Vec<DigitBox>,
    pub touching: Vec<ConnectionType>,
    /// Count of requested touches that found no ink contact and fell back to
    /// a gap.
    pub failed_touches: usize,
}

/// Place `right` so that it penetrates `overlap` pixels into `left`'s right
/// edge, baselines (bottom edges) aligned, ink-union composited. Returns the
/// composed raster, both placed boxes, and the pair's connection type.
pub fn connect_pair(
    left: &GlyphSample,
    right: &GlyphSample,
    overlap: usize,
) -> Result<(GrayImage, [DigitBox; 2], ConnectionType)> {
    if overlap >= left.width().min(right.width()) {
        return Err(Error::InvalidArgument(format!(
            "overlap {overlap} must be below min glyph width {}",
            left.width().min(right.width())
        )));
    }
    let comp = compose_string(
        &[left, right],
        &[if overlap == 0 {
            PairPlan::Gap(0)
        } else {
            PairPlan::ExactOverlap(overlap)
        }],
        &[0, 0],
        0,
    )?;
    Ok((
        comp.raster,
        [comp.boxes[0], comp.boxes[1]],
        comp.touching[0],
    ))
}

impl PairPlan {
    fn resolve(
        self,
        prev: &GrayImage,
        prev_place: Placement,
        next: &GrayImage,
        next_y: i64,
    ) -> (i64, bool) {
        let edge = prev_place.x + prev.width() as i64;
        match self {
            PairPlan::Gap(g) => (edge + g as i64, false),
            PairPlan::ExactOverlap(o) => (edge - o as i64, false),
            PairPlan::Touch { depth } => {
                let limit = (prev.width().min(next.width()) as i64 - 1).max(1);
                let mut first_contact = None;
                for o in 1..=limit {
                    let x = edge - o;
                    let touches = !coincidence(
                        prev,
                        prev_place,
                        next,
                        Placement { x, y: next_y },
                    )
                    .is_empty();
                    if touches {
                        first_contact = Some(o);
                        break;
                    }
                }
                match first_contact {
                    Some(o0) => {
                        // push deeper by the requested ligature depth, but
                        // never lose the contact gained at o0
                        let target = (o0 + depth as i64 - 1).min(limit);
                        let deep_ok = !coincidence(
                            prev,
                            prev_place,
                            next,
                            Placement {
                                x: edge - target,
                                y: next_y,
                            },
                        )
                        .is_empty();
                        (edge - if deep_ok { target } else { o0 }, false)
                    }
                    None => (edge + 2, true), // no contact possible; fall back
                }
            }
        }
    }
}

/// Compose a sequence of glyphs left to right.
///
/// `plans[i]` joins glyph `i` and `i+1`; `vjitter[i]` shifts glyph `i`
/// vertically off the shared baseline. The canvas gets a `border`-pixel white
/// margin all around.
pub fn compose_string(
    glyphs: &[&GlyphSample],
    plans: &[PairPlan],
    vjitter: &[i64],
    border: usize,
) -> Result<Composition> {
    if glyphs.is_empty() {
        return Err(Error::InvalidArgument("no glyphs to compose".into()));
    }
    if plans.len() + 1 != glyphs.len() || vjitter.len() != glyphs.len() {
        return Err(Error::InvalidArgument(
            "plans/vjitter lengths must match glyph count".into(),
        ));
    }

    // bottom-aligned baseline at y = 0, glyph tops negative
    let mut places: Vec<Placement> = Vec::with_capacity(glyphs.len());
    let mut failed_touches = 0usize;
    for (i, g) in glyphs.iter().enumerate() {
        let y = -(g.height() as i64) + vjitter[i];
        if i == 0 {
            places.push(Placement { x: 0, y });
            continue;
        }
        let (x, failed) =
            plans[i - 1].resolve(&glyphs[i - 1].raster, places[i - 1], &g.raster, y);
        if failed {
            failed_touches += 1;
        }
        places.push(Placement { x, y });
    }

    let min_x = places.iter().map(|p| p.x).min().unwrap();
    let min_y = places.iter().map(|p| p.y).min().unwrap();
    let max_x = places
        .iter()
        .zip(glyphs)
        .map(|(p, g)| p.x + g.width() as i64)
        .max()
        .unwrap();
    let max_y = places
        .iter()
        .zip(glyphs)
        .map(|(p, g)| p.y + g.height() as i64)
        .max()
        .unwrap();
    let shift_x = border as i64 - min_x;
    let shift_y = border as i64 - min_y;
    let canvas_w = (max_x - min_x) as usize + 2 * border;
    let canvas_h = (max_y - min_y) as usize + 2 * border;

    let mut canvas = GrayImage::blank(canvas_w, canvas_h);
    let mut boxes = Vec::with_capacity(glyphs.len());
    for (g, p) in glyphs.iter().zip(&places) {
        let ox = (p.x + shift_x) as usize;
        let oy = (p.y + shift_y) as usize;
        for y in 0..g.height() {
            for x in 0..g.width() {
                canvas.stamp_min(ox + x, oy + y, g.raster.get(x, y));
            }
        }
        boxes.push(DigitBox {
            c: g.digit_class,
            x: ox as u32,
            y: oy as u32,
            w: g.width() as u32,
            h: g.height() as u32,
        });
    }

    let touching = glyphs
        .windows(2)
        .zip(places.windows(2))
        .map(|(gs, ps)| classify_connection(&gs[0].raster, ps[0], &gs[1].raster, ps[1]))
        .collect();

    Ok(Composition {
        raster: canvas,
        boxes,
        touching,
        failed_touches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// A solid block glyph: every pixel ink.
    fn block(digit: u8, w: usize, h: usize) -> GlyphSample {
        let img = GrayImage::from_pixels(w, h, vec![0; w * h]).unwrap();
        GlyphSample::new(digit, "t".into(), img).unwrap()
    }

    /// A vertical bar at the given column.
    fn bar(digit: u8, w: usize, h: usize, col: usize) -> GlyphSample {
        let mut img = GrayImage::blank(w, h);
        for y in 0..h {
            img.set(col, y, 0);
        }
        GlyphSample::new(digit, "t".into(), img).unwrap()
    }

    #[test]
    fn zero_overlap_does_not_touch() {
        let a = block(1, 6, 10);
        let b = block(2, 6, 10);
        let (_, boxes, conn) = connect_pair(&a, &b, 0).unwrap();
        assert_eq!(conn, ConnectionType::None);
        assert_eq!(boxes[0].x + boxes[0].w, boxes[1].x);
    }

    #[test]
    fn coinciding_ink_forces_touch() {
        let a = block(1, 6, 10);
        let b = block(2, 6, 10);
        let (_, boxes, conn) = connect_pair(&a, &b, 2).unwrap();
        assert_ne!(conn, ConnectionType::None);
        assert!(boxes[0].x + boxes[0].w > boxes[1].x);
    }

    #[test]
    fn composed_width_matches_pixel_arithmetic() {
        // widths 6 + 8, overlap 3, no border: 6 + 8 - 3
        let a = block(1, 6, 10);
        let b = block(2, 8, 10);
        let (img, _, _) = connect_pair(&a, &b, 3).unwrap();
        assert_eq!(img.width(), 6 + 8 - 3);
        assert_eq!(img.height(), 10);
    }

    #[test]
    fn overlap_out_of_range_errors() {
        let a = block(1, 6, 10);
        let b = block(2, 8, 10);
        assert!(connect_pair(&a, &b, 6).is_err());
    }

    #[test]
    fn touch_plan_finds_contact() {
        // facing bars: the slide search has to pass blank columns first
        let a = bar(1, 8, 12, 6); // ink near its right edge
        let b = bar(2, 8, 12, 1); // ink near its left edge
        let comp = compose_string(
            &[&a, &b],
            &[PairPlan::Touch { depth: 1 }],
            &[0, 0],
            0,
        )
        .unwrap();
        assert_eq!(comp.failed_touches, 0);
        assert!(comp.touching[0].touches());
    }

    #[test]
    fn impossible_touch_falls_back_to_gap() {
        // ink rows are vertically disjoint after jitter: no coincidence possible
        let mut top = GrayImage::blank(6, 20);
        for x in 0..6 {
            top.set(x, 1, 0);
        }
        let mut bottom = GrayImage::blank(6, 20);
        for x in 0..6 {
            bottom.set(x, 18, 0);
        }
        let a = GlyphSample::new(1, "t".into(), top.trim_to_ink()).unwrap();
        let b = GlyphSample::new(2, "t".into(), bottom.trim_to_ink()).unwrap();
        // trimmed each to a 6x1 line; jitter separates them vertically
        let comp = compose_string(
            &[&a, &b],
            &[PairPlan::Touch { depth: 2 }],
            &[0, 5],
            2,
        )
        .unwrap();
        assert_eq!(comp.failed_touches, 1);
        assert_eq!(comp.touching[0], ConnectionType::None);
    }

    #[test]
    fn heavy_overlap_classifies_as_type_v() {
        let a = block(1, 10, 12);
        let b = block(2, 10, 12);
        let comp = compose_string(
            &[&a, &b],
            &[PairPlan::ExactOverlap(5)],
            &[0, 0],
            0,
        )
        .unwrap();
        // horizontal IoU = 5 / 15 = 0.33 > 0.15
        assert_eq!(comp.touching[0], ConnectionType::V);
    }

    #[test]
    fn single_point_contact_is_type_i() {
        // two single-pixel-wide bars meeting at one pixel
        let mut left = GrayImage::blank(5, 8);
        for y in 0..8 {
            left.set(4, y, 0);
        }
        let mut right = GrayImage::blank(5, 8);
        right.set(0, 3, 0);
        right.set(1, 3, 0); // small hook so trim keeps width
        for y in 0..8 {
            right.set(4, y, 0);
        }
        let a = GlyphSample::new(1, "t".into(), left).unwrap();
        let b = GlyphSample::new(2, "t".into(), right).unwrap();
        let comp = compose_string(
            &[&a, &b],
            &[PairPlan::ExactOverlap(1)],
            &[0, 0],
            0,
        )
        .unwrap();
        assert_eq!(comp.touching[0], ConnectionType::I);
    }

    #[test]
    fn segment_contact_is_type_ii_and_split_contact_iii() {
        // full-height coincidence column: one region, many pixels -> II
        let a = bar(1, 8, 12, 7);
        let b = bar(2, 8, 12, 0);
        let comp = compose_string(&[&a, &b], &[PairPlan::ExactOverlap(1)], &[0, 0], 0).unwrap();
        assert_eq!(comp.touching[0], ConnectionType::II);

        // two separated contact clusters -> III
        let mut left = GrayImage::blank(6, 12);
        for y in 0..12 {
            left.set(5, y, 0);
        }
        let mut right = GrayImage::blank(6, 12);
        right.set(0, 1, 0);
        right.set(0, 10, 0);
        right.set(5, 5, 0); // keeps trim width stable
        let a = GlyphSample::new(3, "t".into(), left).unwrap();
        let b = GlyphSample::new(4, "t".into(), right).unwrap();
        let comp = compose_string(&[&a, &b], &[PairPlan::ExactOverlap(1)], &[0, 0], 0).unwrap();
        assert_eq!(comp.touching[0], ConnectionType::III);
    }

    #[test]
    fn border_is_respected() {
        let a = block(1, 6, 10);
        let comp = compose_string(&[&a], &[], &[0], 5).unwrap();
        assert_eq!(comp.raster.width(), 6 + 10);
        assert_eq!(comp.raster.height(), 10 + 10);
        assert_eq!(comp.boxes[0].x, 5);
        assert_eq!(comp.boxes[0].y, 5);
    }
}
