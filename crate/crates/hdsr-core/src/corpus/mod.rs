//! Glyph ingestion and synthetic digit-string dataset construction.

pub mod compose;
pub mod glyph;
pub mod manifest;
pub mod procedural;
pub mod synth;

pub use compose::{compose_string, connect_pair, Composition, PairPlan};
pub use glyph::{load_glyph_corpus, GlyphCorpus, GlyphSample};
pub use manifest::{
    ConnectionType, DatasetManifest, DigitBox, DistributionSummary, ManifestRecord, Split,
    StringSample,
};
pub use procedural::procedural_glyphs;
pub use synth::{
    check_writer_disjoint, synth_dataset, synth_samples, SplitCounts, SplitPolicy, SynthesisConfig,
};
