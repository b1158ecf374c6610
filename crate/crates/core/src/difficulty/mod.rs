//! Difficulty descriptors, their normalization, and naive Bayes labeling.

mod descriptors;
mod gnb;
mod normalizer;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use descriptors::{extract_descriptors, lz76, DescriptorVector, Feature, FEATURE_NAMES, NUM_FEATURES};
pub use gnb::GaussianNb;
pub(crate) use gnb::argmax;
pub use normalizer::Normalizer;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DifficultyError {
    #[error("difficulty level must be non-negative, got {0}")]
    NegativeLevel(i64),
    #[error("need at least 2 training vectors, got {0}")]
    InsufficientData(usize),
    #[error("class {class} has {count} samples; at least 2 are required")]
    ClassTooSmall { class: usize, count: usize },
    #[error("descriptor CSV line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error("labeling model: {0}")]
    ModelFile(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DifficultyLabel {
    Easy = 0,
    Medium = 1,
    Advanced = 2,
}

impl DifficultyLabel {
    pub const ALL: [DifficultyLabel; 3] = [DifficultyLabel::Easy, DifficultyLabel::Medium, DifficultyLabel::Advanced];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<DifficultyLabel> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            DifficultyLabel::Easy => "easy",
            DifficultyLabel::Medium => "medium",
            DifficultyLabel::Advanced => "advanced",
        }
    }
}

impl fmt::Display for DifficultyLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DifficultyLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|l| l.name() == lower)
            .ok_or_else(|| format!("unknown difficulty class {:?} (expected easy, medium or advanced)", s))
    }
}

/// Collapses a graded level into three classes: 0, 1, and 2 or higher.
pub fn group_level(level: i64) -> Result<DifficultyLabel, DifficultyError> {
    match level {
        l if l < 0 => Err(DifficultyError::NegativeLevel(l)),
        0 => Ok(DifficultyLabel::Easy),
        1 => Ok(DifficultyLabel::Medium),
        _ => Ok(DifficultyLabel::Advanced),
    }
}

pub fn fit_normalizer(rows: &[[f64; NUM_FEATURES]]) -> Result<Normalizer, DifficultyError> {
    Normalizer::fit(rows)
}

pub fn normalize(v: &DescriptorVector, n: &Normalizer) -> [f64; NUM_FEATURES] {
    n.apply(&v.0)
}

pub fn gnb_fit(x: &[[f64; NUM_FEATURES]], y: &[DifficultyLabel]) -> Result<crate::Gnb, DifficultyError> {
    let y: Vec<usize> = y.iter().map(|l| l.index()).collect();
    GaussianNb::fit(x, &y, DifficultyLabel::COUNT)
}

pub fn gnb_log_posterior(m: &crate::Gnb, v: &[f64]) -> Vec<f64> {
    m.log_posterior(v)
}

pub fn gnb_predict(m: &crate::Gnb, v: &[f64]) -> DifficultyLabel {
    DifficultyLabel::from_index(m.predict(v)).expect("three-class model")
}

const MODEL_FORMAT: u32 = 1;

#[derive(Serialize, Deserialize)]
struct LabelerFile {
    format_version: u32,
    classes: Vec<DifficultyLabel>,
    priors: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
    epsilon: f64,
    normalizer_min: [f64; NUM_FEATURES],
    normalizer_max: [f64; NUM_FEATURES],
}

/// A fitted normalizer plus classifier: raw descriptors in, label out.
#[derive(Debug, Clone, PartialEq)]
pub struct Labeler {
    pub normalizer: Normalizer,
    pub gnb: crate::Gnb,
}

impl Labeler {
    /// Fits the normalizer on `raw`, then the classifier on the normalized rows.
    pub fn fit(raw: &[[f64; NUM_FEATURES]], y: &[DifficultyLabel]) -> Result<Labeler, DifficultyError> {
        let normalizer = Normalizer::fit(raw)?;
        let x: Vec<[f64; NUM_FEATURES]> = raw.iter().map(|r| normalizer.apply(r)).collect();
        let gnb = gnb_fit(&x, y)?;
        Ok(Labeler { normalizer, gnb })
    }

    pub fn normalize(&self, v: &DescriptorVector) -> [f64; NUM_FEATURES] {
        self.normalizer.apply(&v.0)
    }

    pub fn label(&self, v: &DescriptorVector) -> DifficultyLabel {
        gnb_predict(&self.gnb, &self.normalize(v))
    }

    pub fn posterior(&self, v: &DescriptorVector) -> Vec<f64> {
        self.gnb.log_posterior(&self.normalize(v)).into_iter().map(f64::exp).collect()
    }

    pub fn to_json(&self) -> String {
        let file = LabelerFile {
            format_version: MODEL_FORMAT,
            classes: DifficultyLabel::ALL.to_vec(),
            priors: self.gnb.priors.clone(),
            means: self.gnb.means.clone(),
            variances: self.gnb.variances.clone(),
            epsilon: self.gnb.epsilon,
            normalizer_min: self.normalizer.min,
            normalizer_max: self.normalizer.max,
        };
        serde_json::to_string_pretty(&file).expect("finite model values serialize")
    }

    pub fn from_json(s: &str) -> Result<Labeler, DifficultyError> {
        let f: LabelerFile = serde_json::from_str(s).map_err(|e| DifficultyError::ModelFile(e.to_string()))?;
        if f.format_version != MODEL_FORMAT {
            return Err(DifficultyError::ModelFile(format!("unsupported format version {}", f.format_version)));
        }
        if f.classes != DifficultyLabel::ALL {
            return Err(DifficultyError::ModelFile("class order must be easy, medium, advanced".into()));
        }
        let shape_ok = f.priors.len() == 3
            && [&f.means, &f.variances].iter().all(|m| m.len() == 3 && m.iter().all(|r| r.len() == NUM_FEATURES));
        if !shape_ok {
            return Err(DifficultyError::ModelFile("parameter shapes do not match 3 classes x 12 features".into()));
        }
        Ok(Labeler {
            normalizer: Normalizer { min: f.normalizer_min, max: f.normalizer_max },
            gnb: GaussianNb { priors: f.priors, means: f.means, variances: f.variances, epsilon: f.epsilon },
        })
    }
}

/// One descriptor CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorRow {
    pub descriptors: DescriptorVector,
    pub label: Option<DifficultyLabel>,
}

/// Header of the 12 descriptor names plus `label`; six-decimal values; the
/// label column holds the class index or is empty.
pub fn write_descriptor_csv(rows: &[DescriptorRow]) -> String {
    let mut out = FEATURE_NAMES.join(",");
    out.push_str(",label\n");
    for r in rows {
        for v in r.descriptors.0 {
            out.push_str(&format!("{:.6},", v));
        }
        if let Some(l) = r.label {
            out.push_str(&l.index().to_string());
        }
        out.push('\n');
    }
    out
}

/// Reads a descriptor CSV. Labels may be integer levels (grouped with
/// [`group_level`]), class names, or empty.
pub fn read_descriptor_csv(text: &str) -> Result<Vec<DescriptorRow>, DifficultyError> {
    let err = |line: usize, message: String| DifficultyError::Csv { line, message };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() != NUM_FEATURES + 1 || cols[..NUM_FEATURES] != FEATURE_NAMES || cols[NUM_FEATURES] != "label" {
        return Err(err(1, "header must list the 12 descriptor names followed by label".into()));
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != NUM_FEATURES + 1 {
            return Err(err(line_no, format!("expected {} fields, found {}", NUM_FEATURES + 1, fields.len())));
        }
        let mut values = [0.0; NUM_FEATURES];
        for (j, f) in fields[..NUM_FEATURES].iter().enumerate() {
            values[j] = f
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(line_no, format!("bad value {:?} in column {}", f, FEATURE_NAMES[j])))?;
        }
        let raw = fields[NUM_FEATURES];
        let label = if raw.is_empty() {
            None
        } else if let Ok(level) = raw.parse::<i64>() {
            Some(group_level(level)?)
        } else {
            Some(raw.parse().map_err(|m| err(line_no, m))?)
        };
        rows.push(DescriptorRow { descriptors: DescriptorVector(values), label });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn levels() {
        assert_eq!(group_level(0), Ok(DifficultyLabel::Easy));
        assert_eq!(group_level(1), Ok(DifficultyLabel::Medium));
        assert_eq!(group_level(7), Ok(DifficultyLabel::Advanced));
        assert_eq!(group_level(-1), Err(DifficultyError::NegativeLevel(-1)));
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![
            DescriptorRow { descriptors: DescriptorVector([0.5; NUM_FEATURES]), label: Some(DifficultyLabel::Advanced) },
            DescriptorRow { descriptors: DescriptorVector([1.25; NUM_FEATURES]), label: None },
        ];
        let text = write_descriptor_csv(&rows);
        assert!(text.starts_with("pitch_entropy_RH,pitch_entropy_LH,"));
        assert!(text.lines().nth(1).unwrap().starts_with("0.500000,"));
        assert_eq!(read_descriptor_csv(&text).unwrap(), rows);
    }

    #[test]
    fn csv_levels_and_errors() {
        let header = format!("{},label", FEATURE_NAMES.join(","));
        let row = |label: &str| format!("{}{}", "0.1,".repeat(NUM_FEATURES), label);
        let text = format!("{header}\n{}\n{}\n", row("5"), row("Medium"));
        let rows = read_descriptor_csv(&text).unwrap();
        assert_eq!(rows[0].label, Some(DifficultyLabel::Advanced));
        assert_eq!(rows[1].label, Some(DifficultyLabel::Medium));
        assert!(matches!(read_descriptor_csv(&format!("{header}\n{}\n", row("-2"))), Err(DifficultyError::NegativeLevel(-2))));
        assert!(matches!(read_descriptor_csv(&format!("{header}\n0.1,0.2\n")), Err(DifficultyError::Csv { line: 2, .. })));
        assert!(read_descriptor_csv("a,b\n").is_err());
    }

    #[test]
    fn labeler_json_round_trip() {
        let raw: Vec<[f64; NUM_FEATURES]> = (0..9).map(|i| [i as f64 * 0.7 + (i % 3) as f64; NUM_FEATURES]).collect();
        let y: Vec<DifficultyLabel> = (0..9).map(|i| DifficultyLabel::ALL[i / 3]).collect();
        let l = Labeler::fit(&raw, &y).unwrap();
        assert_eq!(Labeler::from_json(&l.to_json()).unwrap(), l);
        assert!(Labeler::from_json("{}").is_err());
    }
}
