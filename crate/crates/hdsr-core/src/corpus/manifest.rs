//! Dataset records and the line-delimited manifest format.
//!
//! A manifest is UTF-8 JSONL: one record per line with fields `image`
//! (relative path), `label`, `boxes` (`{c,x,y,w,h}` integers, top-left
//! origin), `writers`, `touching` (connection tags per adjacent pair), and
//! `split`.

use crate::error::{Error, Result};
use crate::raster::GrayImage;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

/// How a pair of adjacent digits touches, or NONE when it does not.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConnectionType {
    #[serde(rename = "I")]
    I,
    #[serde(rename = "II")]
    II,
    #[serde(rename = "III")]
    III,
    #[serde(rename = "V")]
    V,
    #[serde(rename = "NONE")]
    None,
}

impl ConnectionType {
    pub fn touches(self) -> bool {
        self != ConnectionType::None
    }

    pub fn tag(self) -> &'static str {
        match self {
            ConnectionType::I => "I",
            ConnectionType::II => "II",
            ConnectionType::III => "III",
            ConnectionType::V => "V",
            ConnectionType::None => "NONE",
        }
    }
}

impl fmt::Display for ConnectionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Dataset partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split '{other}'"))),
        }
    }
}

/// Ground-truth box for one digit, pixel coordinates, top-left origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DigitBox {
    /// Digit class 0-9.
    pub c: u8,
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl DigitBox {
    pub fn validate(&self, img_w: usize, img_h: usize) -> Result<()> {
        if self.c > 9 {
            return Err(Error::Data(format!("digit class {} out of range", self.c)));
        }
        if self.w == 0 || self.h == 0 {
            return Err(Error::Data("degenerate box".into()));
        }
        if (self.x + self.w) as usize > img_w || (self.y + self.h) as usize > img_h {
            return Err(Error::Data(format!(
                "box {:?} exceeds image {}x{}",
                self, img_w, img_h
            )));
        }
        Ok(())
    }
}

/// A composed string sample with full annotation, in memory.
#[derive(Debug, Clone)]
pub struct StringSample {
    pub raster: GrayImage,
    pub label: String,
    pub boxes: Vec<DigitBox>,
    pub writer_ids: Vec<String>,
    pub touching: Vec<ConnectionType>,
    pub split: Split,
}

impl StringSample {
    /// The structural invariants every generated sample must satisfy.
    pub fn check_invariants(&self) -> Result<()> {
        if self.label.len() != self.boxes.len() {
            return Err(Error::Data(format!(
                "label '{}' has {} digits but {} boxes",
                self.label,
                self.label.len(),
                self.boxes.len()
            )));
        }
        if self.touching.len() + 1 != self.boxes.len() && !self.boxes.is_empty() {
            return Err(Error::Data("touching list length mismatch".into()));
        }
        let mut prev_x = 0u32;
        for (i, (b, ch)) in self.boxes.iter().zip(self.label.chars()).enumerate() {
            b.validate(self.raster.width(), self.raster.height())?;
            let digit = ch.to_digit(10).ok_or_else(|| Error::Data("non-digit label".into()))?;
            if b.c as u32 != digit {
                return Err(Error::Data(format!(
                    "box {i} class {} does not spell label digit {digit}",
                    b.c
                )));
            }
            if i > 0 && b.x < prev_x {
                return Err(Error::Data("boxes not sorted by x".into()));
            }
            prev_x = b.x;
        }
        // horizontal overlap iff the pair touches
        for (i, t) in self.touching.iter().enumerate() {
            let a = &self.boxes[i];
            let b = &self.boxes[i + 1];
            let overlap = (a.x + a.w).min(b.x + b.w) as i64 - (a.x.max(b.x)) as i64;
            if t.touches() && overlap <= 0 {
                return Err(Error::Data(format!("pair {i} tagged {t} without overlap")));
            }
            if !t.touches() && overlap > 0 {
                return Err(Error::Data(format!("pair {i} tagged NONE with overlap")));
            }
        }
        Ok(())
    }
}

/// One manifest line. Field order is the wire format.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub image: String,
    pub label: String,
    pub boxes: Vec<DigitBox>,
    pub writers: Vec<String>,
    pub touching: Vec<ConnectionType>,
    pub split: Split,
}

/// A dataset on disk: manifest path plus its parsed records.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    root: PathBuf,
    records: Vec<ManifestRecord>,
}

/// Per-length and per-class counts for reporting.
#[derive(Debug, Clone, Default, Serialize)]
pub struct DistributionSummary {
    pub total: usize,
    pub by_split: BTreeMap<String, usize>,
    pub by_length: BTreeMap<usize, usize>,
    pub by_class: BTreeMap<char, usize>,
    pub touching_pairs: usize,
    pub total_pairs: usize,
    pub by_connection: BTreeMap<String, usize>,
}

impl DatasetManifest {
    pub const FILE_NAME: &'static str = "manifest.jsonl";

    pub fn new(root: PathBuf, records: Vec<ManifestRecord>) -> Self {
        DatasetManifest { root, records }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn records(&self) -> &[ManifestRecord] {
        &self.records
    }

    pub fn split_records(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    /// Serialize all records as JSONL bytes (deterministic field order).
    pub fn to_jsonl(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for r in &self.records {
            let line = serde_json::to_string(r)
                .map_err(|e| Error::Data(format!("manifest encode: {e}")))?;
            out.extend_from_slice(line.as_bytes());
            out.push(b'\n');
        }
        Ok(out)
    }

    /// Write `manifest.jsonl` into the dataset root.
    pub fn write(&self) -> Result<PathBuf> {
        let path = self.root.join(Self::FILE_NAME);
        let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(&self.to_jsonl()?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Load a manifest file; `path` may be the jsonl file or its directory.
    /// Verifies that every referenced image exists.
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() {
            path.join(Self::FILE_NAME)
        } else {
            path.to_path_buf()
        };
        let root = file
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        let f = fs::File::open(&file).map_err(|e| Error::io(&file, e))?;
        let mut records = Vec::new();
        for (ln, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&file, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ManifestRecord = serde_json::from_str(&line).map_err(|e| {
                Error::parse(format!("{}:{}", file.display(), ln + 1), e.to_string())
            })?;
            let img = root.join(&rec.image);
            if !img.is_file() {
                return Err(Error::Data(format!(
                    "manifest references missing image {}",
                    img.display()
                )));
            }
            records.push(rec);
        }
        Ok(DatasetManifest { root, records })
    }

    /// Read and parse the raster for a record.
    pub fn load_raster(&self, record: &ManifestRecord) -> Result<GrayImage> {
        GrayImage::read_pgm(&self.root.join(&record.image))
    }

    pub fn distribution_summary(&self) -> DistributionSummary {
        let mut s = DistributionSummary {
            total: self.records.len(),
            ..Default::default()
        };
        for r in &self.records {
            *s.by_split.entry(r.split.name().to_string()).or_default() += 1;
            *s.by_length.entry(r.label.len()).or_default() += 1;
            for c in r.label.chars() {
                *s.by_class.entry(c).or_default() += 1;
            }
            for t in &r.touching {
                s.total_pairs += 1;
                if t.touches() {
                    s.touching_pairs += 1;
                }
                *s.by_connection.entry(t.tag().to_string()).or_default() += 1;
            }
        }
        s
    }
}
