use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::token::{Token, TokenSequence};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const END_ID: u32 = 2;
pub const SEP_ID: u32 = 3;

const RESERVED: [&str; 4] = ["PAD", "UNK", "END", "SEP"];
const HEADER: &str = "SIGHTGEN-VOCAB v1";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VocabError {
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("token id {0} out of range")]
    UnknownId(u32),
    #[error("malformed vocabulary file: {0}")]
    Malformed(String),
}

/// Token text <-> id bijection with corpus counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    ids: HashMap<String, u32>,
    parsed: Vec<Token>,
}

impl Vocabulary {
    fn from_parts(tokens: Vec<String>, counts: Vec<u64>) -> Self {
        let ids = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        let parsed = tokens.iter().map(|t| t.parse().unwrap()).collect();
        Vocabulary { tokens, counts, ids, parsed }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token_text(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Parsed form of every id, indexed by id.
    pub fn parsed(&self) -> &[Token] {
        &self.parsed
    }

    pub fn count(&self, id: u32) -> u64 {
        self.counts.get(id as usize).copied().unwrap_or(0)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    /// Hex SHA-256 over the `token<TAB>id` table; counts do not participate.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (i, t) in self.tokens.iter().enumerate() {
            h.update(format!("{}\t{}\n", t, i).as_bytes());
        }
        h.finalize().iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{:02x}", b);
            s
        })
    }

    /// File form: header line, then `token<TAB>id<TAB>count` sorted by id.
    pub fn to_file_string(&self) -> String {
        let mut out = String::from(HEADER);
        out.push('\n');
        for (i, (t, c)) in self.tokens.iter().zip(&self.counts).enumerate() {
            let _ = writeln!(out, "{}\t{}\t{}", t, i, c);
        }
        out
    }

    pub fn from_file_str(s: &str) -> Result<Vocabulary, VocabError> {
        let mut lines = s.lines();
        if lines.next() != Some(HEADER) {
            return Err(VocabError::Malformed("missing header".into()));
        }
        let mut tokens = Vec::new();
        let mut counts = Vec::new();
        for (n, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [tok, id, count] = fields[..] else {
                return Err(VocabError::Malformed(format!("line {}: expected 3 fields", n + 2)));
            };
            let id: usize = id.parse().map_err(|_| VocabError::Malformed(format!("line {}: bad id", n + 2)))?;
            if id != tokens.len() {
                return Err(VocabError::Malformed(format!("line {}: ids not contiguous", n + 2)));
            }
            let count: u64 = count.parse().map_err(|_| VocabError::Malformed(format!("line {}: bad count", n + 2)))?;
            tokens.push(tok.to_string());
            counts.push(count);
        }
        if tokens.len() < RESERVED.len() || tokens[..4] != RESERVED {
            return Err(VocabError::Malformed("reserved ids 0..3 must be PAD UNK END SEP".into()));
        }
        let unique: BTreeSet<&String> = tokens.iter().collect();
        if unique.len() != tokens.len() {
            return Err(VocabError::Malformed("duplicate token".into()));
        }
        Ok(Vocabulary::from_parts(tokens, counts))
    }
}

/// Builds the vocabulary: reserved tokens, every prompt-template token, and
/// every corpus token seen at least `min_count` times. Structural tokens seen
/// in the corpus are kept regardless of count. Ids after the reserved block
/// follow byte-wise lexicographic order of the token text.
pub fn build_vocab<'a, I>(corpus: I, min_count: u64) -> Result<Vocabulary, VocabError>
where
    I: IntoIterator<Item = &'a TokenSequence>,
{
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut structural: BTreeSet<String> = BTreeSet::new();
    let mut any = false;
    for seq in corpus {
        any = true;
        for t in seq.tokens() {
            let text = t.to_string();
            if t.is_structural() {
                structural.insert(text.clone());
            }
            *counts.entry(text).or_insert(0) += 1;
        }
    }
    if !any {
        return Err(VocabError::EmptyCorpus);
    }
    let mut kept: BTreeSet<String> = crate::prompt::template_tokens().into_iter().collect();
    kept.extend(structural);
    kept.extend(counts.iter().filter(|(_, &c)| c >= min_count).map(|(t, _)| t.clone()));
    for r in RESERVED {
        kept.remove(r);
    }
    let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
    tokens.extend(kept);
    let token_counts = tokens.iter().map(|t| counts.get(t).copied().unwrap_or(0)).collect();
    Ok(Vocabulary::from_parts(tokens, token_counts))
}

/// Maps tokens to ids; anything out of vocabulary becomes UNK.
pub fn encode(t: &TokenSequence, v: &Vocabulary) -> Vec<u32> {
    t.tokens().iter().map(|tok| v.id(&tok.to_string()).unwrap_or(UNK_ID)).collect()
}

pub fn decode(ids: &[u32], v: &Vocabulary) -> Result<TokenSequence, VocabError> {
    ids.iter()
        .map(|&id| v.parsed.get(id as usize).cloned().ok_or(VocabError::UnknownId(id)))
        .collect::<Result<Vec<_>, _>>()
        .map(TokenSequence)
}
