//! End-to-end laboratory for handwritten digit string recognition.
//!
//! The crate covers the full loop at desk scale: synthesizing annotated
//! digit-string datasets from isolated glyphs, training three families of
//! recognizers (grid detector, sequence transcriber, dynamic-selection
//! ensemble) on a small from-scratch network core, and scoring them under an
//! exact-match protocol with a detection/classification error taxonomy.

pub mod corpus;
pub mod error;
pub mod loss;
pub mod nn;
pub mod raster;
pub mod rng;

pub use error::{Error, Result};
