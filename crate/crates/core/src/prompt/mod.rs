//! Conditioning prefixes: the four prompt formats and their tokenization.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::difficulty::{DifficultyLabel, NUM_FEATURES};
use crate::tokenizer::{Vocabulary, SEP_ID, UNK_ID};

const TEMPLATE_FILE: &str = include_str!("../../resources/prompt_templates.txt");
const TEMPLATE_HEADER: &str = "SIGHTGEN-PROMPTS v1";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("sequence must contain exactly one SEP, found {0}")]
    MissingSep(usize),
    #[error("unknown prompt type {0:?}")]
    UnknownType(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptType {
    Diff,
    DiffCot,
    Feats,
    FeatsCot,
}

impl PromptType {
    pub const ALL: [PromptType; 4] = [PromptType::Diff, PromptType::DiffCot, PromptType::Feats, PromptType::FeatsCot];

    pub fn name(self) -> &'static str {
        match self {
            PromptType::Diff => "diff",
            PromptType::DiffCot => "diff_cot",
            PromptType::Feats => "feats",
            PromptType::FeatsCot => "feats_cot",
        }
    }

    pub fn uses_features(self) -> bool {
        matches!(self, PromptType::Feats | PromptType::FeatsCot)
    }

    /// The label word as the template spells it: the chain-of-thought
    /// difficulty template calls the middle class "Mid".
    pub fn label_word(self, label: DifficultyLabel) -> &'static str {
        match (self, label) {
            (_, DifficultyLabel::Easy) => "Easy",
            (PromptType::DiffCot, DifficultyLabel::Medium) => "Mid",
            (_, DifficultyLabel::Medium) => "Medium",
            (_, DifficultyLabel::Advanced) => "Advanced",
        }
    }

    fn template(self) -> &'static str {
        templates()[self as usize]
    }
}

impl fmt::Display for PromptType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PromptType {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PromptType::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| PromptError::UnknownType(s.to_string()))
    }
}

fn templates() -> &'static [&'static str; 4] {
    static CELL: OnceLock<[&'static str; 4]> = OnceLock::new();
    CELL.get_or_init(|| {
        let mut lines = TEMPLATE_FILE.lines();
        assert_eq!(lines.next(), Some(TEMPLATE_HEADER), "prompt template resource header");
        let mut out = [""; 4];
        for line in lines.filter(|l| !l.is_empty()) {
            let (name, body) = line.split_once('\t').expect("template line is name<TAB>body");
            let t: PromptType = name.parse().expect("known template name");
            out[t as usize] = body;
        }
        assert!(out.iter().all(|t| !t.is_empty()), "every prompt type has a template");
        out
    })
}

/// Two decimals, half-up, clamped to [0, 1]. The small epsilon keeps values
/// such as 0.285 (stored as 0.28499999...) rounding up as written.
pub fn format_value(v: f64) -> String {
    let v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
    let hundredths = (v * 100.0 + 0.5 + 1e-9).floor() as u32;
    format!("{}.{:02}", hundredths / 100, hundredths % 100)
}

/// All 101 value strings "0.00" ..= "1.00".
pub fn value_strings() -> impl Iterator<Item = String> {
    (0..=100u32).map(|n| format!("{}.{:02}", n / 100, n % 100))
}

fn is_value(s: &str) -> bool {
    let b = s.as_bytes();
    b.len() == 4 && b[1] == b'.' && b.iter().enumerate().all(|(i, c)| i == 1 || c.is_ascii_digit())
}

/// Whitespace split; a value string with trailing `,` or `.` yields the value
/// and the punctuation as separate tokens so values stay atomic.
pub fn tokenize_text(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for w in text.split_whitespace() {
        match w.char_indices().last() {
            Some((i, ',' | '.')) if is_value(&w[..i]) => {
                out.push(w[..i].to_string());
                out.push(w[i..].to_string());
            }
            _ => out.push(w.to_string()),
        }
    }
    out
}

/// Every token any prompt can produce; the vocabulary always keeps these.
pub fn template_tokens() -> Vec<String> {
    let mut set = BTreeSet::new();
    let zeros = [0.0; NUM_FEATURES];
    for t in PromptType::ALL {
        for l in DifficultyLabel::ALL {
            set.extend(tokenize_text(&render(t, l, &zeros)));
        }
    }
    set.extend(value_strings());
    set.insert(",".to_string());
    set.insert(".".to_string());
    set.into_iter().collect()
}

fn render(t: PromptType, label: DifficultyLabel, features: &[f64; NUM_FEATURES]) -> String {
    let mut text = t.template().replace("{label}", t.label_word(label));
    // Highest index first so "{1}" never matches inside "{10}".
    for i in (0..NUM_FEATURES).rev() {
        text = text.replace(&format!("{{{}}}", i), &format_value(features[i]));
    }
    text
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub prompt_type: PromptType,
    pub text: String,
    pub tokens: Vec<String>,
}

impl Prompt {
    /// Encoded prompt followed by SEP.
    pub fn ids(&self, v: &Vocabulary) -> Vec<u32> {
        let mut ids: Vec<u32> = self.tokens.iter().map(|t| v.id(t).unwrap_or(UNK_ID)).collect();
        ids.push(SEP_ID);
        ids
    }
}

pub fn build_prompt(features: &[f64; NUM_FEATURES], label: DifficultyLabel, t: PromptType) -> Prompt {
    let text = render(t, label, features);
    let tokens = tokenize_text(&text);
    Prompt { prompt_type: t, text, tokens }
}

/// Target mask over a `prompt + SEP + music` id sequence: false up to and
/// including SEP, true for every music position.
pub fn prompt_mask(ids: &[u32]) -> Result<Vec<bool>, PromptError> {
    let seps: Vec<usize> = ids.iter().enumerate().filter(|(_, &id)| id == SEP_ID).map(|(i, _)| i).collect();
    let [sep] = seps[..] else {
        return Err(PromptError::MissingSep(seps.len()));
    };
    Ok((0..ids.len()).map(|i| i > sep).collect())
}
