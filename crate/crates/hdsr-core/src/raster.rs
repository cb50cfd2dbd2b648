//! Grayscale rasters and their on-disk formats.
//!
//! Images are 8-bit, ink-dark on a light background. The native format is
//! binary PGM (P5); PNG export is available for viewing.

use crate::error::{Error, Result};
use std::fs;
use std::io::Write;
use std::path::Path;

/// Intensities strictly below this count as ink.
pub const INK_THRESHOLD: u8 = 128;

/// An 8-bit grayscale image, row-major, top-left origin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    /// A blank (white) canvas.
    pub fn blank(width: usize, height: usize) -> Self {
        GrayImage {
            width,
            height,
            pixels: vec![255; width * height],
        }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "pixel buffer of {} bytes does not match {}x{}",
                pixels.len(),
                width,
                height
            )));
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    /// Darker-wins compositing of a single pixel.
    #[inline]
    pub fn stamp_min(&mut self, x: usize, y: usize, v: u8) {
        let p = &mut self.pixels[y * self.width + x];
        *p = (*p).min(v);
    }

    #[inline]
    pub fn is_ink(&self, x: usize, y: usize) -> bool {
        self.get(x, y) < INK_THRESHOLD
    }

    pub fn ink_count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p < INK_THRESHOLD).count()
    }

    /// Tight bounding box of ink pixels as (x, y, w, h), or `None` if blank.
    pub fn ink_bbox(&self) -> Option<(usize, usize, usize, usize)> {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0usize, 0usize);
        let mut any = false;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.is_ink(x, y) {
                    any = true;
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                }
            }
        }
        any.then(|| (x0, y0, x1 - x0 + 1, y1 - y0 + 1))
    }

    /// Crop to the tight ink bounding box. Blank images come back unchanged.
    pub fn trim_to_ink(&self) -> GrayImage {
        match self.ink_bbox() {
            Some((x, y, w, h)) => self.crop(x, y, w, h),
            None => self.clone(),
        }
    }

    /// Crop a rectangle; clamped to image bounds.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> GrayImage {
        let x1 = (x + w).min(self.width);
        let y1 = (y + h).min(self.height);
        let (x, y) = (x.min(self.width), y.min(self.height));
        let (cw, ch) = (x1.saturating_sub(x), y1.saturating_sub(y));
        let mut out = GrayImage::blank(cw, ch);
        for row in 0..ch {
            let src = (y + row) * self.width + x;
            let dst = row * cw;
            out.pixels[dst..dst + cw].copy_from_slice(&self.pixels[src..src + cw]);
        }
        out
    }

    /// Bilinear resize to the exact target size.
    pub fn resize(&self, new_w: usize, new_h: usize) -> GrayImage {
        assert!(new_w > 0 && new_h > 0, "resize target must be positive");
        if new_w == self.width && new_h == self.height {
            return self.clone();
        }
        let mut out = GrayImage::blank(new_w, new_h);
        let sx = self.width as f64 / new_w as f64;
        let sy = self.height as f64 / new_h as f64;
        for y in 0..new_h {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let wy = fy - y0 as f64;
            for x in 0..new_w {
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let wx = fx - x0 as f64;
                let p00 = self.get(x0, y0) as f64;
                let p10 = self.get(x1, y0) as f64;
                let p01 = self.get(x0, y1) as f64;
                let p11 = self.get(x1, y1) as f64;
                let v = p00 * (1.0 - wx) * (1.0 - wy)
                    + p10 * wx * (1.0 - wy)
                    + p01 * (1.0 - wx) * wy
                    + p11 * wx * wy;
                out.set(x, y, v.round().clamp(0.0, 255.0) as u8);
            }
        }
        out
    }

    /// Aspect-preserving fit into a `target_w` x `target_h` white canvas, centered.
    pub fn fit_into(&self, target_w: usize, target_h: usize) -> GrayImage {
        let scale = (target_w as f64 / self.width as f64).min(target_h as f64 / self.height as f64);
        let w = ((self.width as f64 * scale).round() as usize).clamp(1, target_w);
        let h = ((self.height as f64 * scale).round() as usize).clamp(1, target_h);
        let scaled = self.resize(w, h);
        let mut out = GrayImage::blank(target_w, target_h);
        let ox = (target_w - w) / 2;
        let oy = (target_h - h) / 2;
        for y in 0..h {
            for x in 0..w {
                out.set(ox + x, oy + y, scaled.get(x, y));
            }
        }
        out
    }

    /// Otsu's threshold over the intensity histogram. Returns the threshold t
    /// such that pixels < t are foreground (ink).
    pub fn otsu_threshold(&self) -> u8 {
        let mut hist = [0u64; 256];
        for &p in &self.pixels {
            hist[p as usize] += 1;
        }
        let total = self.pixels.len() as f64;
        let sum_all: f64 = hist
            .iter()
            .enumerate()
            .map(|(v, &c)| v as f64 * c as f64)
            .sum();
        let (mut w0, mut sum0) = (0f64, 0f64);
        let (mut best_t, mut best_var) = (INK_THRESHOLD, -1f64);
        for t in 0..256 {
            w0 += hist[t] as f64;
            if w0 == 0.0 {
                continue;
            }
            let w1 = total - w0;
            if w1 == 0.0 {
                break;
            }
            sum0 += t as f64 * hist[t] as f64;
            let m0 = sum0 / w0;
            let m1 = (sum_all - sum0) / w1;
            let between = w0 * w1 * (m0 - m1) * (m0 - m1);
            if between > best_var {
                best_var = between;
                best_t = (t + 1).min(255) as u8;
            }
        }
        best_t
    }

    /// Serialize as binary PGM (P5), 8-bit.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_pgm()).map_err(|e| Error::io(path, e))
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<GrayImage> {
        parse_pgm(bytes)
    }

    pub fn read_pgm(path: &Path) -> Result<GrayImage> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        parse_pgm(&bytes).map_err(|e| match e {
            Error::Parse { what: _, detail } => Error::parse(path.display().to_string(), detail),
            other => other,
        })
    }

    /// PNG export for inspection; the pipeline itself only reads PGM.
    pub fn write_png(&self, path: &Path) -> Result<()> {
        let img = image::GrayImage::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
            .ok_or_else(|| Error::InvalidArgument("raster buffer size mismatch".into()))?;
        img.save(path)
            .map_err(|e| Error::Data(format!("png write {}: {e}", path.display())))
    }
}

fn parse_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let mut pos = 0usize;
    let mut fields: Vec<u64> = Vec::with_capacity(3);
    if bytes.len() < 2 || &bytes[0..2] != b"P5" {
        return Err(Error::parse("pgm", "missing P5 magic"));
    }
    pos += 2;
    // Header: three whitespace-separated integers, '#' comments allowed.
    while fields.len() < 3 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::parse("pgm", "truncated header"));
        }
        let text = std::str::from_utf8(&bytes[start..pos])
            .map_err(|_| Error::parse("pgm", "non-utf8 header"))?;
        fields.push(
            text.parse::<u64>()
                .map_err(|_| Error::parse("pgm", format!("bad header field {text}")))?,
        );
    }
    let (w, h, maxval) = (fields[0] as usize, fields[1] as usize, fields[2]);
    if maxval != 255 {
        return Err(Error::parse("pgm", format!("unsupported maxval {maxval}")));
    }
    if w == 0 || h == 0 {
        return Err(Error::parse("pgm", "zero dimension"));
    }
    pos += 1; // single whitespace after maxval
    let need = w * h;
    if bytes.len() < pos + need {
        return Err(Error::parse(
            "pgm",
            format!("expected {need} pixel bytes, found {}", bytes.len() - pos),
        ));
    }
    GrayImage::from_pixels(w, h, bytes[pos..pos + need].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip_is_byte_exact() {
        let mut img = GrayImage::blank(5, 3);
        img.set(2, 1, 0);
        img.set(4, 2, 17);
        let bytes = img.to_pgm();
        let back = GrayImage::from_pgm(&bytes).unwrap();
        assert_eq!(img, back);
        assert_eq!(bytes, back.to_pgm());
    }

    #[test]
    fn pgm_rejects_garbage() {
        assert!(GrayImage::from_pgm(b"P6\n1 1\n255\nx").is_err());
        assert!(GrayImage::from_pgm(b"P5\n4 4\n255\nxx").is_err());
        assert!(GrayImage::from_pgm(b"").is_err());
    }

    #[test]
    fn ink_bbox_finds_marks() {
        let mut img = GrayImage::blank(10, 10);
        assert_eq!(img.ink_bbox(), None);
        img.set(3, 4, 0);
        img.set(6, 7, 10);
        assert_eq!(img.ink_bbox(), Some((3, 4, 4, 4)));
        let trimmed = img.trim_to_ink();
        assert_eq!((trimmed.width(), trimmed.height()), (4, 4));
    }

    #[test]
    fn resize_constant_stays_constant() {
        let img = GrayImage::from_pixels(8, 6, vec![77; 48]).unwrap();
        let r = img.resize(4, 3);
        assert!(r.pixels().iter().all(|&p| p == 77));
    }

    #[test]
    fn otsu_separates_bimodal() {
        let mut px = vec![230u8; 90];
        px.extend(vec![20u8; 10]);
        let img = GrayImage::from_pixels(10, 10, px).unwrap();
        let t = img.otsu_threshold();
        assert!(t > 20 && t <= 230, "threshold {t}");
    }
}
