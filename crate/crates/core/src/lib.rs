//! Difficulty-conditioned generation of two-staff piano sight-reading
//! exercises: score model, MusicXML I/O, tokenization, difficulty labeling,
//! dataset construction, a small decoder-only transformer, and sampling.

pub mod corpus;
pub mod difficulty;
pub mod generate;
pub mod musicxml;
pub mod nn;
pub mod prompt;
pub mod scalar;
pub mod score;
pub mod synth;
pub mod tokenizer;

use std::fmt;

/// A non-fatal diagnostic tied to a measure index.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Warning {
    pub measure: usize,
    pub message: String,
}

impl Warning {
    pub fn new(measure: usize, message: impl Into<String>) -> Self {
        Warning { measure, message: message.into() }
    }
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "measure {}: {}", self.measure, self.message)
    }
}

pub type Gnb = difficulty::GaussianNb<f64>;
/// The trained model; parameters are stored in 32-bit.
pub type Model = nn::Transformer<f32>;
/// 64-bit model used for gradient checking.
pub type Model64 = nn::Transformer<f64>;
