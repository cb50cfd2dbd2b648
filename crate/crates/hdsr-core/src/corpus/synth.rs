//! Synthetic dataset generation: seed-deterministic, writer-disjoint,
//! distribution-controlled digit strings with full box ground truth.
//!
//! Each sample is generated from its own counter-based RNG stream keyed by
//! `(seed, split, index)`, so generation parallelizes without changing a
//! single byte of output.

use crate::corpus::compose::{compose_string, PairPlan, CANVAS_BORDER};
use crate::corpus::glyph::{GlyphCorpus, GlyphSample};
use crate::corpus::manifest::{
    ConnectionType, DatasetManifest, DigitBox, ManifestRecord, Split, StringSample,
};
use crate::error::{Error, Result};
use crate::rng;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

/// Blank columns between non-touching neighbors, sampled uniformly.
const GAP_RANGE: (usize, usize) = (2, 6);

/// Vertical jitter amplitude as a fraction of glyph height.
const VJITTER_FRACTION: f64 = 0.10;

/// Knobs controlling the synthesized distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisConfig {
    /// Inclusive digit-count range of generated strings.
    pub length_range: (usize, usize),
    /// Probability that an adjacent pair touches.
    pub touching_fraction: f64,
    /// Ligature depth range in pixels for touching pairs (inclusive).
    pub overlap_range: (usize, usize),
    /// Relative sampling frequency per digit class. The digit "1" defaults
    /// below uniform, mirroring its scarcity in touching strings.
    pub class_weights: [f64; 10],
    /// Relative frequency per string length (index 0 = length_range.0).
    pub length_distribution: Vec<f64>,
    pub rng_seed: u64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            length_range: (2, 4),
            touching_fraction: 0.15,
            overlap_range: (1, 6),
            class_weights: [1.0, 0.65, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0],
            length_distribution: vec![1.0, 1.0, 1.0],
            rng_seed: 0,
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.length_range.0 == 0 || self.length_range.0 > self.length_range.1 {
            return Err(Error::InvalidArgument(format!(
                "bad length range {:?}",
                self.length_range
            )));
        }
        if !(0.0..=1.0).contains(&self.touching_fraction) {
            return Err(Error::InvalidArgument(format!(
                "touching fraction {} outside [0,1]",
                self.touching_fraction
            )));
        }
        if self.overlap_range.0 > self.overlap_range.1 {
            return Err(Error::InvalidArgument("bad overlap range".into()));
        }
        let n_lengths = self.length_range.1 - self.length_range.0 + 1;
        if self.length_distribution.len() != n_lengths {
            return Err(Error::InvalidArgument(format!(
                "length distribution needs {n_lengths} weights, got {}",
                self.length_distribution.len()
            )));
        }
        for ws in [&self.class_weights[..], &self.length_distribution[..]] {
            if ws.iter().any(|&w| w < 0.0 || !w.is_finite()) {
                return Err(Error::InvalidArgument("negative weight".into()));
            }
            if ws.iter().sum::<f64>() <= 0.0 {
                return Err(Error::InvalidArgument("all weights zero".into()));
            }
        }
        Ok(())
    }
}

/// Writer-index ranges per split (inclusive). Writer ids are matched by their
/// trailing decimal digits, so both `0042` and `w0042` map to 42.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPolicy {
    pub train: (u32, u32),
    pub validation: (u32, u32),
    pub test: (u32, u32),
}

impl SplitPolicy {
    /// Carve `writers` into 70/15/15 contiguous index ranges.
    pub fn default_for_writers(writers: u32) -> Self {
        let train_end = (writers * 70 / 100).max(1);
        let val_end = (writers * 85 / 100).max(train_end + 1);
        SplitPolicy {
            train: (0, train_end - 1),
            validation: (train_end, val_end - 1),
            test: (val_end, writers.saturating_sub(1).max(val_end)),
        }
    }

    pub fn range(&self, split: Split) -> (u32, u32) {
        match split {
            Split::Train => self.train,
            Split::Validation => self.validation,
            Split::Test => self.test,
        }
    }

    pub fn writer_index(writer_id: &str) -> Option<u32> {
        let digits: String = writer_id
            .chars()
            .rev()
            .take_while(|c| c.is_ascii_digit())
            .collect::<Vec<_>>()
            .into_iter()
            .rev()
            .collect();
        digits.parse().ok()
    }

    pub fn split_of(&self, writer_id: &str) -> Option<Split> {
        let idx = Self::writer_index(writer_id)?;
        for split in Split::ALL {
            let (lo, hi) = self.range(split);
            if idx >= lo && idx <= hi {
                return Some(split);
            }
        }
        None
    }

    pub fn validate(&self) -> Result<()> {
        let mut ranges = [self.train, self.validation, self.test];
        ranges.sort();
        for r in &ranges {
            if r.0 > r.1 {
                return Err(Error::InvalidArgument(format!("empty writer range {r:?}")));
            }
        }
        for w in ranges.windows(2) {
            if w[1].0 <= w[0].1 {
                return Err(Error::InvalidArgument(format!(
                    "writer ranges {:?} and {:?} overlap",
                    w[0], w[1]
                )));
            }
        }
        Ok(())
    }
}

/// Requested sample counts per split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Validation => self.validation,
            Split::Test => self.test,
        }
    }

    /// Split a total 70/15/15.
    pub fn from_total(total: usize) -> Self {
        let train = total * 70 / 100;
        let validation = total * 15 / 100;
        SplitCounts {
            train,
            validation,
            test: total - train - validation,
        }
    }
}

/// Per-split glyph pools, indexed by class.
struct SplitPools<'a> {
    pools: Vec<[Vec<&'a GlyphSample>; 10]>,
}

impl<'a> SplitPools<'a> {
    fn build(corpus: &'a GlyphCorpus, policy: &SplitPolicy, cfg: &SynthesisConfig) -> Result<Self> {
        let mut pools: Vec<[Vec<&GlyphSample>; 10]> = (0..3)
            .map(|_| std::array::from_fn(|_| Vec::new()))
            .collect();
        for g in corpus.iter() {
            if let Some(split) = policy.split_of(&g.writer_id) {
                let si = Split::ALL.iter().position(|&s| s == split).unwrap();
                pools[si][g.digit_class as usize].push(g);
            }
        }
        for (si, split) in Split::ALL.iter().enumerate() {
            if pools[si].iter().all(Vec::is_empty) {
                return Err(Error::Data(format!(
                    "split policy leaves split '{}' without glyphs",
                    split.name()
                )));
            }
            for d in 0..10 {
                if cfg.class_weights[d] > 0.0 && pools[si][d].is_empty() {
                    return Err(Error::Data(format!(
                        "class {d} has weight {} but no glyphs in split '{}'",
                        cfg.class_weights[d],
                        split.name()
                    )));
                }
            }
        }
        Ok(SplitPools { pools })
    }

    fn pool(&self, split: Split) -> &[Vec<&'a GlyphSample>; 10] {
        let si = Split::ALL.iter().position(|&s| s == split).unwrap();
        &self.pools[si]
    }
}

fn sample_index(rng: &mut impl Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.gen_range(0.0..total);
    for (i, &w) in weights.iter().enumerate() {
        if x < w {
            return i;
        }
        x -= w;
    }
    weights.len() - 1
}

/// Generate one sample; deterministic in `(cfg.rng_seed, split, index)`.
pub fn generate_sample(
    pools: &[Vec<&GlyphSample>; 10],
    cfg: &SynthesisConfig,
    split: Split,
    index: u64,
) -> Result<StringSample> {
    let mut rng = rng::stream(
        cfg.rng_seed,
        &format!("synthesis/{}", split.name()),
        index,
    );
    let length =
        cfg.length_range.0 + sample_index(&mut rng, &cfg.length_distribution);
    let glyphs: Vec<&GlyphSample> = (0..length)
        .map(|_| {
            let class = sample_index(&mut rng, &cfg.class_weights);
            let pool = &pools[class];
            pool[rng.gen_range(0..pool.len())]
        })
        .collect();
    let plans: Vec<PairPlan> = (0..length.saturating_sub(1))
        .map(|_| {
            if rng.gen_bool(cfg.touching_fraction) {
                PairPlan::Touch {
                    depth: rng.gen_range(cfg.overlap_range.0..=cfg.overlap_range.1),
                }
            } else {
                PairPlan::Gap(rng.gen_range(GAP_RANGE.0..=GAP_RANGE.1))
            }
        })
        .collect();
    let vjitter: Vec<i64> = glyphs
        .iter()
        .map(|g| {
            let amp = (g.height() as f64 * VJITTER_FRACTION).round() as i64;
            if amp == 0 {
                0
            } else {
                rng.gen_range(-amp..=amp)
            }
        })
        .collect();

    let comp = compose_string(&glyphs, &plans, &vjitter, CANVAS_BORDER)?;
    let label: String = glyphs
        .iter()
        .map(|g| char::from_digit(g.digit_class as u32, 10).unwrap())
        .collect();
    let writer_ids: BTreeSet<String> = glyphs.iter().map(|g| g.writer_id.clone()).collect();
    let sample = StringSample {
        raster: comp.raster,
        label,
        boxes: comp.boxes,
        writer_ids: writer_ids.into_iter().collect(),
        touching: comp.touching,
        split,
    };
    sample.check_invariants()?;
    Ok(sample)
}

/// Generate the full dataset and write it under `out_dir`:
/// `images/<split>/<index>.pgm` plus `manifest.jsonl`.
///
/// `png_export` additionally writes a PNG next to each PGM.
pub fn synth_dataset(
    corpus: &GlyphCorpus,
    cfg: &SynthesisConfig,
    policy: &SplitPolicy,
    counts: &SplitCounts,
    out_dir: &Path,
    png_export: bool,
) -> Result<DatasetManifest> {
    cfg.validate()?;
    policy.validate()?;
    let pools = SplitPools::build(corpus, policy, cfg)?;

    let mut records = Vec::new();
    for split in Split::ALL {
        let n = counts.get(split);
        if n == 0 {
            continue;
        }
        let img_dir = out_dir.join("images").join(split.name());
        fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
        let pool = pools.pool(split);
        let samples: Vec<Result<StringSample>> = (0..n as u64)
            .into_par_iter()
            .map(|i| generate_sample(pool, cfg, split, i))
            .collect();
        for (i, s) in samples.into_iter().enumerate() {
            let s = s?;
            let rel = format!("images/{}/{:06}.pgm", split.name(), i);
            let path = out_dir.join(&rel);
            s.raster.write_pgm(&path)?;
            if png_export {
                s.raster.write_png(&path.with_extension("png"))?;
            }
            records.push(ManifestRecord {
                image: rel,
                label: s.label,
                boxes: s.boxes,
                writers: s.writer_ids,
                touching: s.touching,
                split,
            });
        }
    }

    let manifest = DatasetManifest::new(out_dir.to_path_buf(), records);
    manifest.write()?;
    Ok(manifest)
}

/// In-memory variant for tests and statistics: no files are written.
pub fn synth_samples(
    corpus: &GlyphCorpus,
    cfg: &SynthesisConfig,
    policy: &SplitPolicy,
    split: Split,
    count: usize,
) -> Result<Vec<StringSample>> {
    cfg.validate()?;
    policy.validate()?;
    let pools = SplitPools::build(corpus, policy, cfg)?;
    let pool = pools.pool(split);
    (0..count as u64)
        .into_par_iter()
        .map(|i| generate_sample(pool, cfg, split, i))
        .collect()
}

/// Writer-disjointness across the whole record set.
pub fn check_writer_disjoint(records: &[ManifestRecord]) -> Result<()> {
    let mut seen: [BTreeSet<&str>; 3] = Default::default();
    for r in records {
        let si = Split::ALL.iter().position(|&s| s == r.split).unwrap();
        for w in &r.writers {
            seen[si].insert(w);
        }
    }
    for a in 0..3 {
        for b in a + 1..3 {
            if let Some(w) = seen[a].intersection(&seen[b]).next() {
                return Err(Error::Data(format!(
                    "writer {w} appears in both {} and {}",
                    Split::ALL[a].name(),
                    Split::ALL[b].name()
                )));
            }
        }
    }
    Ok(())
}

/// Reconstruct a [`DigitBox`]-consistent label from boxes, reading classes
/// left to right (used by property tests).
pub fn label_from_boxes(boxes: &[DigitBox]) -> String {
    let mut sorted: Vec<&DigitBox> = boxes.iter().collect();
    sorted.sort_by_key(|b| b.x);
    sorted
        .iter()
        .map(|b| char::from_digit(b.c as u32, 10).unwrap())
        .collect()
}

/// Count connection tags that touch.
pub fn touching_pairs(touching: &[ConnectionType]) -> usize {
    touching.iter().filter(|t| t.touches()).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::procedural::procedural_glyphs;

    fn small_setup() -> (GlyphCorpus, SplitPolicy) {
        let corpus = procedural_glyphs(5, 30).unwrap();
        let policy = SplitPolicy {
            train: (0, 19),
            validation: (20, 24),
            test: (25, 29),
        };
        (corpus, policy)
    }

    #[test]
    fn degenerate_length_distribution_pins_length() {
        let (corpus, policy) = small_setup();
        let cfg = SynthesisConfig {
            length_range: (2, 4),
            length_distribution: vec![1.0, 0.0, 0.0],
            ..Default::default()
        };
        let samples = synth_samples(&corpus, &cfg, &policy, Split::Train, 50).unwrap();
        assert!(samples.iter().all(|s| s.label.len() == 2));
    }

    #[test]
    fn requested_count_is_exact_and_split_tagged() {
        let (corpus, policy) = small_setup();
        let cfg = SynthesisConfig::default();
        let dir = tempfile::tempdir().unwrap();
        let counts = SplitCounts {
            train: 23,
            validation: 7,
            test: 5,
        };
        let manifest =
            synth_dataset(&corpus, &cfg, &policy, &counts, dir.path(), false).unwrap();
        assert_eq!(manifest.records().len(), 35);
        assert_eq!(manifest.split_records(Split::Train).count(), 23);
        assert_eq!(manifest.split_records(Split::Validation).count(), 7);
        assert_eq!(manifest.split_records(Split::Test).count(), 5);
        // reload parses and images exist
        let loaded = DatasetManifest::load(dir.path()).unwrap();
        assert_eq!(loaded.records().len(), 35);
    }

    #[test]
    fn samples_satisfy_invariants_and_labels_match_boxes() {
        let (corpus, policy) = small_setup();
        let cfg = SynthesisConfig {
            touching_fraction: 0.5,
            ..Default::default()
        };
        let samples = synth_samples(&corpus, &cfg, &policy, Split::Train, 80).unwrap();
        for s in &samples {
            s.check_invariants().unwrap();
            assert_eq!(label_from_boxes(&s.boxes), s.label);
        }
    }

    #[test]
    fn writer_disjointness_holds() {
        let (corpus, policy) = small_setup();
        let cfg = SynthesisConfig::default();
        let dir = tempfile::tempdir().unwrap();
        let counts = SplitCounts {
            train: 30,
            validation: 10,
            test: 10,
        };
        let manifest =
            synth_dataset(&corpus, &cfg, &policy, &counts, dir.path(), false).unwrap();
        check_writer_disjoint(manifest.records()).unwrap();
    }

    #[test]
    fn generation_is_byte_deterministic() {
        let (corpus, policy) = small_setup();
        let cfg = SynthesisConfig {
            rng_seed: 77,
            ..Default::default()
        };
        let counts = SplitCounts {
            train: 12,
            validation: 3,
            test: 3,
        };
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let ma = synth_dataset(&corpus, &cfg, &policy, &counts, dir_a.path(), false).unwrap();
        let mb = synth_dataset(&corpus, &cfg, &policy, &counts, dir_b.path(), false).unwrap();
        assert_eq!(ma.to_jsonl().unwrap(), mb.to_jsonl().unwrap());
        for (ra, rb) in ma.records().iter().zip(mb.records()) {
            let ia = fs::read(dir_a.path().join(&ra.image)).unwrap();
            let ib = fs::read(dir_b.path().join(&rb.image)).unwrap();
            assert_eq!(ia, ib, "raster bytes differ for {}", ra.image);
        }
    }

    #[test]
    fn touching_rate_tracks_configuration() {
        let (corpus, policy) = small_setup();
        let cfg = SynthesisConfig {
            touching_fraction: 0.15,
            length_range: (2, 4),
            length_distribution: vec![1.0, 1.0, 1.0],
            rng_seed: 5,
            ..Default::default()
        };
        let samples = synth_samples(&corpus, &cfg, &policy, Split::Train, 2000).unwrap();
        let (mut touch, mut pairs) = (0usize, 0usize);
        for s in &samples {
            touch += touching_pairs(&s.touching);
            pairs += s.touching.len();
        }
        let rate = touch as f64 / pairs as f64;
        assert!(
            (0.13..=0.17).contains(&rate),
            "touching rate {rate:.4} outside binomial bounds"
        );
    }

    #[test]
    fn class_skew_is_configurable() {
        let (corpus, policy) = small_setup();
        let mut cfg = SynthesisConfig {
            rng_seed: 9,
            ..Default::default()
        };
        cfg.class_weights[1] = 0.4;
        let samples = synth_samples(&corpus, &cfg, &policy, Split::Train, 1500).unwrap();
        let mut counts = [0usize; 10];
        for s in &samples {
            for c in s.label.chars() {
                counts[c.to_digit(10).unwrap() as usize] += 1;
            }
        }
        let avg_other: f64 =
            counts.iter().enumerate().filter(|(i, _)| *i != 1).map(|(_, &c)| c as f64).sum::<f64>()
                / 9.0;
        assert!(
            (counts[1] as f64) < 0.6 * avg_other,
            "digit 1 count {} not skewed below others (avg {avg_other:.1})",
            counts[1]
        );
    }

    #[test]
    fn zero_weight_class_never_appears_and_missing_class_errors() {
        let (corpus, policy) = small_setup();
        let mut cfg = SynthesisConfig::default();
        cfg.class_weights[7] = 0.0;
        let samples = synth_samples(&corpus, &cfg, &policy, Split::Train, 100).unwrap();
        assert!(samples.iter().all(|s| !s.label.contains('7')));

        // a corpus missing a demanded class errors
        let partial = GlyphCorpus::from_glyphs(
            corpus.iter().filter(|g| g.digit_class != 3).cloned(),
        );
        let cfg = SynthesisConfig::default();
        assert!(synth_samples(&partial, &cfg, &policy, Split::Train, 10).is_err());
    }

    #[test]
    fn split_policy_rejects_overlap() {
        let bad = SplitPolicy {
            train: (0, 10),
            validation: (10, 14),
            test: (15, 19),
        };
        assert!(bad.validate().is_err());
    }
}
