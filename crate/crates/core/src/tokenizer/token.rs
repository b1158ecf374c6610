use std::fmt;
use std::str::FromStr;

use crate::score::{Pitch, TimeSig};

/// Largest `dur_*` value: 16 quarters at 1/12-quarter resolution.
pub const MAX_DUR_UNITS: u16 = 192;
/// Duration units per quarter note.
pub const UNITS_PER_QUARTER: i64 = 12;

/// One token of the linear score grammar, or a prompt word.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Token {
    Time(TimeSig),
    Key(i8),
    Bar,
    Staff(u8),
    Voice(u8),
    Dur(u16),
    Note(Pitch),
    Rest,
    Tie,
    End,
    Unk,
    Pad,
    Sep,
    /// Natural-language prompt token (anything outside the music grammar).
    Word(String),
}

impl Token {
    /// Bar lines, staff/voice markers, durations, rests and END: the tokens
    /// vocabulary pruning must never drop.
    pub fn is_structural(&self) -> bool {
        matches!(
            self,
            Token::Bar | Token::Staff(_) | Token::Voice(_) | Token::Dur(_) | Token::Rest | Token::End
        )
    }

    pub fn is_music(&self) -> bool {
        !matches!(self, Token::Word(_) | Token::Unk | Token::Pad | Token::Sep)
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Time(ts) => write!(f, "time_{}/{}", ts.numerator, ts.denominator),
            Token::Key(k) => write!(f, "key_{}", k),
            Token::Bar => f.write_str("bar"),
            Token::Staff(s) => write!(f, "staff_{}", s),
            Token::Voice(v) => write!(f, "voice_{}", v),
            Token::Dur(d) => write!(f, "dur_{}", d),
            Token::Note(p) => write!(f, "note_{}", p.spelling()),
            Token::Rest => f.write_str("rest"),
            Token::Tie => f.write_str("tie"),
            Token::End => f.write_str("END"),
            Token::Unk => f.write_str("UNK"),
            Token::Pad => f.write_str("PAD"),
            Token::Sep => f.write_str("SEP"),
            Token::Word(w) => f.write_str(w),
        }
    }
}

fn parse_music(s: &str) -> Option<Token> {
    Some(match s {
        "bar" => Token::Bar,
        "rest" => Token::Rest,
        "tie" => Token::Tie,
        "END" => Token::End,
        "UNK" => Token::Unk,
        "PAD" => Token::Pad,
        "SEP" => Token::Sep,
        _ => {
            let (kind, val) = s.split_once('_')?;
            match kind {
                "time" => {
                    let (n, d) = val.split_once('/')?;
                    let ts = TimeSig::new(n.parse().ok()?, d.parse().ok()?);
                    if !ts.is_valid() {
                        return None;
                    }
                    Token::Time(ts)
                }
                "key" => {
                    let k: i8 = val.parse().ok()?;
                    if !(-7..=7).contains(&k) {
                        return None;
                    }
                    Token::Key(k)
                }
                "staff" => match val {
                    "1" => Token::Staff(1),
                    "2" => Token::Staff(2),
                    _ => return None,
                },
                "voice" => {
                    let v: u8 = val.parse().ok()?;
                    if v == 0 || val.starts_with('+') || val.starts_with('0') {
                        return None;
                    }
                    Token::Voice(v)
                }
                "dur" => {
                    let d: u16 = val.parse().ok()?;
                    if d == 0 || d > MAX_DUR_UNITS || val.starts_with('+') || val.starts_with('0') {
                        return None;
                    }
                    Token::Dur(d)
                }
                "note" => {
                    let p = Pitch::parse_spelling(val)?;
                    if !p.is_valid() || p.spelling() != val {
                        return None;
                    }
                    Token::Note(p)
                }
                _ => return None,
            }
        }
    })
}

impl FromStr for Token {
    type Err = std::convert::Infallible;

    /// Grammar productions parse to their variants; any other text is a
    /// prompt [`Token::Word`].
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(parse_music(s).unwrap_or_else(|| Token::Word(s.to_string())))
    }
}

/// An ordered token list. At most one END, and only as the last token.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSequence(pub Vec<Token>);

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn tokens(&self) -> &[Token] {
        &self.0
    }

    /// Whitespace-joined token text, the line format of token files.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(&t.to_string());
        }
        out
    }

    pub fn from_text(line: &str) -> TokenSequence {
        TokenSequence(line.split_whitespace().map(|w| w.parse().unwrap()).collect())
    }

    /// Checks the sequence-level invariants against a length limit.
    pub fn is_well_formed(&self, max_len: usize) -> bool {
        let ends = self.0.iter().filter(|t| **t == Token::End).count();
        self.0.len() <= max_len && (ends == 0 || (ends == 1 && self.0.last() == Some(&Token::End)))
    }

    pub fn bar_count(&self) -> usize {
        self.0.iter().filter(|t| **t == Token::Bar).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::Step;

    #[test]
    fn text_round_trip() {
        let toks = [
            "time_4/4", "time_6/8", "key_-3", "key_0", "bar", "staff_1", "staff_2", "voice_1", "voice_5",
            "dur_12", "dur_192", "note_C4", "note_F#4", "note_Gb4", "note_Bbb3", "rest", "tie", "END", "UNK",
            "PAD", "SEP",
        ];
        for t in toks {
            let tok: Token = t.parse().unwrap();
            assert!(!matches!(tok, Token::Word(_)), "{t} parsed as word");
            assert_eq!(tok.to_string(), t);
        }
    }

    #[test]
    fn non_grammar_text_is_word() {
        for w in ["Easy", "Easy:", "dur_0", "dur_193", "dur_012", "note_H4", "key_8", "time_3/5", "staff_3", "0.21", "voice_0"] {
            assert_eq!(w.parse::<Token>().unwrap(), Token::Word(w.to_string()), "{w}");
        }
    }

    #[test]
    fn note_token_spelling() {
        let t: Token = "note_B#7".parse().unwrap();
        assert_eq!(t, Token::Note(Pitch::new(Step::B, 1, 7)));
    }
}
