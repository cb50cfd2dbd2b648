//! Isolated digit glyphs and corpus loading.
//!
//! On-disk layout: `<root>/<class 0-9>/<writer_id>__<index>.pgm`, binary PGM,
//! ink-dark. Corrupt files are skipped with a warning record; a class with no
//! glyphs at all makes the corpus unusable.

use crate::error::{Error, Result};
use crate::raster::GrayImage;
use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

/// One isolated digit bitmap with its author.
#[derive(Debug, Clone)]
pub struct GlyphSample {
    pub digit_class: u8,
    pub writer_id: String,
    pub raster: GrayImage,
}

impl GlyphSample {
    pub fn new(digit_class: u8, writer_id: String, raster: GrayImage) -> Result<Self> {
        if digit_class > 9 {
            return Err(Error::InvalidArgument(format!(
                "digit class {digit_class} out of range"
            )));
        }
        if raster.ink_count() == 0 {
            return Err(Error::Data(format!(
                "glyph {digit_class}/{writer_id} contains no ink"
            )));
        }
        Ok(GlyphSample {
            digit_class,
            writer_id,
            raster,
        })
    }

    pub fn width(&self) -> usize {
        self.raster.width()
    }

    pub fn height(&self) -> usize {
        self.raster.height()
    }
}

/// All glyphs, grouped by class, plus load warnings.
#[derive(Debug, Clone, Default)]
pub struct GlyphCorpus {
    by_class: [Vec<GlyphSample>; 10],
    pub warnings: Vec<String>,
}

impl GlyphCorpus {
    pub fn from_glyphs(glyphs: impl IntoIterator<Item = GlyphSample>) -> Self {
        let mut corpus = GlyphCorpus::default();
        for g in glyphs {
            corpus.by_class[g.digit_class as usize].push(g);
        }
        corpus
    }

    pub fn class(&self, digit: u8) -> &[GlyphSample] {
        &self.by_class[digit as usize]
    }

    pub fn len(&self) -> usize {
        self.by_class.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &GlyphSample> {
        self.by_class.iter().flatten()
    }

    pub fn class_counts(&self) -> [usize; 10] {
        std::array::from_fn(|i| self.by_class[i].len())
    }

    pub fn writers(&self) -> BTreeSet<&str> {
        self.iter().map(|g| g.writer_id.as_str()).collect()
    }

    /// Every class must have at least one glyph.
    pub fn check_complete(&self) -> Result<()> {
        for (digit, glyphs) in self.by_class.iter().enumerate() {
            if glyphs.is_empty() {
                return Err(Error::CorpusIncomplete(format!(
                    "no glyphs for class {digit}"
                )));
            }
        }
        Ok(())
    }
}

/// Load a glyph corpus from the class-directory layout. Unparseable images
/// are skipped and reported in `warnings`; an entirely missing class is a
/// corpus-incomplete error.
pub fn load_glyph_corpus(root: &Path) -> Result<GlyphCorpus> {
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "corpus root is not a directory"),
        ));
    }
    let mut corpus = GlyphCorpus::default();
    for digit in 0u8..10 {
        let dir = root.join(digit.to_string());
        if !dir.is_dir() {
            continue; // caught by check_complete below
        }
        let mut entries: Vec<_> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|e| e == "pgm"))
            .collect();
        entries.sort();
        for path in entries {
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default();
            let writer = stem.split("__").next().unwrap_or(stem).to_string();
            match GrayImage::read_pgm(&path)
                .and_then(|r| GlyphSample::new(digit, writer, r.trim_to_ink()))
            {
                Ok(glyph) => corpus.by_class[digit as usize].push(glyph),
                Err(e) => corpus
                    .warnings
                    .push(format!("skipped {}: {e}", path.display())),
            }
        }
    }
    corpus.check_complete()?;
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dot_glyph() -> GrayImage {
        let mut img = GrayImage::blank(6, 8);
        for y in 1..7 {
            img.set(3, y, 0);
        }
        img
    }

    fn write_corpus(root: &Path, classes: usize, writers: usize) {
        for d in 0..classes {
            let dir = root.join(d.to_string());
            fs::create_dir_all(&dir).unwrap();
            for w in 0..writers {
                dot_glyph()
                    .write_pgm(&dir.join(format!("{w:04}__0.pgm")))
                    .unwrap();
            }
        }
    }

    #[test]
    fn loads_complete_corpus() {
        let dir = tempfile::tempdir().unwrap();
        write_corpus(dir.path(), 10, 2);
        let corpus = load_glyph_corpus(dir.path()).unwrap();
        assert_eq!(corpus.len(), 20);
        assert_eq!(corpus.class_counts(), [2; 10]);
        assert_eq!(corpus.writers().len(), 2);
        assert!(corpus.warnings.is_empty());
    }

    #[test]
    fn empty_directory_is_incomplete() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_glyph_corpus(dir.path()),
            Err(Error::CorpusIncomplete(_))
        ));
        write_corpus(dir.path(), 7, 1); // classes 7..9 missing
        assert!(matches!(
            load_glyph_corpus(dir.path()),
            Err(Error::CorpusIncomplete(_))
        ));
    }

    #[test]
    fn corrupt_image_is_skipped_with_warning() {
        let dir = tempfile::tempdir().unwrap();
        write_corpus(dir.path(), 10, 5);
        fs::write(dir.path().join("3/9999__0.pgm"), b"P5 not really").unwrap();
        let corpus = load_glyph_corpus(dir.path()).unwrap();
        assert_eq!(corpus.len(), 50);
        assert_eq!(corpus.warnings.len(), 1);
        assert!(corpus.warnings[0].contains("9999__0.pgm"));
    }

    #[test]
    fn blank_glyph_is_rejected() {
        let blank = GrayImage::blank(5, 5);
        assert!(GlyphSample::new(3, "w".into(), blank).is_err());
    }
}
