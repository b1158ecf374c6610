//! Reading and writing the score-partwise subset of MusicXML used for
//! two-staff piano music.
//!
//! Supported: `note` (pitch, rest, chord, duration, voice, staff, tie),
//! `attributes` (divisions, key, time, clef, staves), `backup`, `forward`
//! and `barline`. Presentation-only note children (type, dots, stems, beams,
//! accidentals, tuplet ratios) are read past silently since the duration and
//! pitch already carry their content. Everything else is skipped, counted,
//! and reported as a warning.

mod read;
mod write;

use std::collections::BTreeMap;

use thiserror::Error;

pub use read::parse;
pub use write::serialize;

use crate::score::ScoreFragment;
use crate::Warning;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MusicXmlError {
    #[error("malformed XML: {0}")]
    MalformedXml(String),
    #[error("unsupported structure: {0}")]
    UnsupportedStructure(String),
    #[error("inconsistent timing in measure {measure}: {detail}")]
    InconsistentTiming { measure: usize, detail: String },
    #[error("measure {measure}: {detail}")]
    NonRepresentable { measure: usize, detail: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParseReport {
    /// The whole piece as one fragment; it always passes `score::validate`.
    pub score: ScoreFragment,
    pub warnings: Vec<Warning>,
    /// Occurrences of each element name that was skipped.
    pub skipped_elements: BTreeMap<String, usize>,
}
