//! Linear token grammar for two-staff scores.
//!
//! Per measure the grammar is
//!
//! ```text
//! [time_N/D] [key_K] bar
//!   staff_1 (voice_v (dur_d (note_P+ [tie] | rest))+)+
//!   staff_2 (voice_v (dur_d (note_P+ [tie] | rest))+)+
//! ```
//!
//! with time and key emitted for the first measure and whenever they change,
//! durations in twelfths of a quarter, chord notes ascending, and END closing
//! the sequence.

mod grammar;
mod token;
mod vocab;

use std::collections::BTreeMap;

use num_integer::Integer;
use num_traits::{ToPrimitive, Zero};
use thiserror::Error;

pub use grammar::{GrammarConfig, GrammarState};
pub use token::{Token, TokenSequence, MAX_DUR_UNITS, UNITS_PER_QUARTER};
pub use vocab::{build_vocab, decode, encode, VocabError, Vocabulary, END_ID, PAD_ID, SEP_ID, UNK_ID};

use crate::score::{Content, Measure, NoteEvent, Pitch, Quarters, ScoreFragment, TimeSig};
use crate::Warning;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TokenizeError {
    #[error("measure {measure}: duration {duration} is not a multiple of 1/12 quarter in [1/12, 16]")]
    DurationNotRepresentable { measure: usize, duration: String },
    #[error("no complete measure could be recovered: {0}")]
    Unparseable(String),
}

/// Duration in grammar units (twelfths of a quarter), if representable.
pub fn duration_units(d: Quarters) -> Option<u16> {
    let units = d * Quarters::from_integer(UNITS_PER_QUARTER);
    if !units.is_integer() {
        return None;
    }
    let u = units.to_integer();
    if u < 1 || u > MAX_DUR_UNITS as i64 {
        return None;
    }
    Some(u as u16)
}

pub fn units_to_quarters(units: i64) -> Quarters {
    Quarters::new(units, UNITS_PER_QUARTER)
}

/// Linearizes a fragment. Voices are emitted in ascending order per staff,
/// events in onset order.
pub fn tokenize(f: &ScoreFragment) -> Result<TokenSequence, TokenizeError> {
    let mut out = Vec::new();
    let mut prev: Option<(TimeSig, i8)> = None;
    for (mi, m) in f.measures.iter().enumerate() {
        match prev {
            None => {
                out.push(Token::Time(m.time_sig));
                out.push(Token::Key(m.key_fifths));
            }
            Some((ts, key)) => {
                if ts != m.time_sig {
                    out.push(Token::Time(m.time_sig));
                }
                if key != m.key_fifths {
                    out.push(Token::Key(m.key_fifths));
                }
            }
        }
        prev = Some((m.time_sig, m.key_fifths));
        out.push(Token::Bar);

        let mut streams: BTreeMap<(u8, u8), Vec<&NoteEvent>> = BTreeMap::new();
        for e in &m.events {
            streams.entry(e.stream()).or_default().push(e);
        }
        for staff in [1u8, 2] {
            out.push(Token::Staff(staff));
            for (&(_, voice), evs) in streams.range((staff, 0)..=(staff, u8::MAX)) {
                out.push(Token::Voice(voice));
                let mut evs = evs.clone();
                evs.sort_by_key(|e| e.onset);
                for e in evs {
                    let d = duration_units(e.duration).ok_or_else(|| TokenizeError::DurationNotRepresentable {
                        measure: mi,
                        duration: e.duration.to_string(),
                    })?;
                    out.push(Token::Dur(d));
                    match &e.content {
                        Content::Rest => out.push(Token::Rest),
                        Content::Notes(ps) => {
                            out.extend(ps.iter().map(|p| Token::Note(*p)));
                            if e.tie_start {
                                out.push(Token::Tie);
                            }
                        }
                    }
                }
            }
        }
    }
    out.push(Token::End);
    Ok(TokenSequence(out))
}

/// Output of [`detokenize`]: the recovered fragment and every repair made.
#[derive(Debug, Clone)]
pub struct Detokenized {
    pub fragment: ScoreFragment,
    pub warnings: Vec<Warning>,
}

#[derive(Debug, Default)]
struct DraftEvent {
    units: u16,
    pitches: Vec<Pitch>,
    rest: bool,
    tie: bool,
}

#[derive(Debug, Default)]
struct DraftMeasure {
    time: Option<TimeSig>,
    key: Option<i8>,
    /// staff -> voice -> events
    staves: BTreeMap<u8, BTreeMap<u8, Vec<DraftEvent>>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Expect {
    /// Right after `bar`.
    Staff,
    /// After `staff_s`.
    Voice,
    /// Event boundary inside a voice.
    Event,
    /// After `dur_d`.
    Content,
    /// After one or more notes.
    Chord,
    /// After `tie`.
    Tied,
}

/// Rebuilds a fragment from raw token output, repairing what it can.
///
/// Every complete, grammatical measure prefix is recovered. Under-filled
/// voices are padded with rests, over-filled voices truncated at capacity,
/// missing staves filled with a whole-measure rest, dangling ties dropped;
/// each repair adds a warning. A short first measure whose voices all agree
/// on its length is a pickup and needs no repair.
pub fn detokenize(t: &TokenSequence) -> Result<Detokenized, TokenizeError> {
    let toks = t.tokens();
    let mut warnings = Vec::new();
    let mut drafts: Vec<DraftMeasure> = Vec::new();
    let mut cur_time: Option<TimeSig> = None;
    let mut cur_key: Option<i8> = None;
    let mut saw_end = false;
    let mut i = 0;

    'measures: while i < toks.len() {
        // header
        let mut header_time = None;
        let mut header_key = None;
        while i < toks.len() {
            match &toks[i] {
                Token::Time(ts) => header_time = Some(*ts),
                Token::Key(k) => header_key = Some(*k),
                Token::Pad => {}
                _ => break,
            }
            i += 1;
        }
        match toks.get(i) {
            None => break,
            Some(Token::End) => {
                saw_end = true;
                i += 1;
                break;
            }
            Some(Token::Bar) => i += 1,
            Some(other) => {
                warnings.push(Warning::new(drafts.len(), format!("ungrammatical token `{}` at position {}; stopped", other, i)));
                break;
            }
        }
        if header_time.is_some() {
            cur_time = header_time;
        }
        if header_key.is_some() {
            cur_key = header_key;
        }
        let mut draft = DraftMeasure { time: cur_time, key: cur_key, ..Default::default() };
        let mut expect = Expect::Staff;
        let mut staff = 0u8;
        let mut voice = 0u8;

        loop {
            let tok = toks.get(i);
            let is_terminator = matches!(tok, None | Some(Token::Bar | Token::Time(_) | Token::Key(_) | Token::End));
            if is_terminator {
                if matches!(expect, Expect::Content) {
                    warnings.push(Warning::new(drafts.len(), "measure ends inside an event; dropped".to_string()));
                    break 'measures;
                }
                drafts.push(draft);
                continue 'measures;
            }
            let tok = tok.unwrap();
            let bad = |w: &mut Vec<Warning>, n: usize| {
                w.push(Warning::new(n, format!("ungrammatical token `{}` at position {}; measure dropped", tok, i)));
            };
            match (expect, tok) {
                (_, Token::Pad) => {}
                (Expect::Content, Token::Rest) => {
                    let ev = current_event(&mut draft, staff, voice);
                    ev.rest = true;
                    expect = Expect::Event;
                }
                (Expect::Content | Expect::Chord, Token::Note(p)) => {
                    if !p.is_valid() {
                        bad(&mut warnings, drafts.len());
                        break 'measures;
                    }
                    current_event(&mut draft, staff, voice).pitches.push(*p);
                    expect = Expect::Chord;
                }
                (Expect::Chord, Token::Tie) => {
                    current_event(&mut draft, staff, voice).tie = true;
                    expect = Expect::Tied;
                }
                (Expect::Event | Expect::Chord | Expect::Tied, Token::Dur(d)) if voice > 0 => {
                    draft.staves.get_mut(&staff).unwrap().get_mut(&voice).unwrap().push(DraftEvent {
                        units: *d,
                        ..Default::default()
                    });
                    expect = Expect::Content;
                }
                (Expect::Voice | Expect::Event | Expect::Chord | Expect::Tied, Token::Voice(v)) if staff > 0 => {
                    let voices = draft.staves.get_mut(&staff).unwrap();
                    if voices.keys().next_back().is_some_and(|last| *last >= *v) {
                        bad(&mut warnings, drafts.len());
                        break 'measures;
                    }
                    voices.insert(*v, Vec::new());
                    voice = *v;
                    expect = Expect::Event;
                }
                (Expect::Staff | Expect::Voice | Expect::Event | Expect::Chord | Expect::Tied, Token::Staff(s)) => {
                    if *s <= staff {
                        bad(&mut warnings, drafts.len());
                        break 'measures;
                    }
                    staff = *s;
                    voice = 0;
                    draft.staves.insert(staff, BTreeMap::new());
                    expect = Expect::Voice;
                }
                _ => {
                    bad(&mut warnings, drafts.len());
                    break 'measures;
                }
            }
            i += 1;
        }
    }

    if !saw_end {
        warnings.push(Warning::new(drafts.len().saturating_sub(1), "no END".to_string()));
    } else if toks[i..].iter().any(|t| *t != Token::Pad) {
        warnings.push(Warning::new(drafts.len().saturating_sub(1), "tokens after END ignored".to_string()));
    }
    if drafts.is_empty() {
        return Err(TokenizeError::Unparseable(
            warnings.first().map(|w| w.message.clone()).unwrap_or_else(|| "empty sequence".into()),
        ));
    }

    let mut measures = Vec::with_capacity(drafts.len());
    let mut start = Quarters::zero();
    for (mi, d) in drafts.into_iter().enumerate() {
        let m = finish_measure(mi, d, start, &mut warnings);
        start += m.length();
        measures.push(m);
    }
    let mut fragment = ScoreFragment::new(measures);
    for mi in fragment.normalize_ties() {
        warnings.push(Warning::new(mi, "dangling tie dropped".to_string()));
    }
    fragment.divisions = lcm_divisions(&fragment);
    Ok(Detokenized { fragment, warnings })
}

fn current_event(d: &mut DraftMeasure, staff: u8, voice: u8) -> &mut DraftEvent {
    d.staves.get_mut(&staff).unwrap().get_mut(&voice).unwrap().last_mut().unwrap()
}

fn finish_measure(mi: usize, d: DraftMeasure, start: Quarters, warnings: &mut Vec<Warning>) -> Measure {
    let time = d.time.unwrap_or_else(|| {
        if mi == 0 {
            warnings.push(Warning::new(mi, "no time signature; assuming 4/4".to_string()));
        }
        TimeSig::default()
    });
    let key = d.key.unwrap_or_else(|| {
        if mi == 0 {
            warnings.push(Warning::new(mi, "no key signature; assuming 0".to_string()));
        }
        0
    });
    let cap_units = (time.capacity() * Quarters::from_integer(UNITS_PER_QUARTER)).to_integer();
    let mut m = Measure::new(mi, time, key);

    let lengths: Vec<i64> = d
        .staves
        .values()
        .flat_map(|vs| vs.values())
        .map(|evs| evs.iter().map(|e| e.units as i64).sum())
        .collect();
    let pickup = mi == 0
        && d.staves.len() == 2
        && d.staves.values().all(|vs| !vs.is_empty())
        && !lengths.is_empty()
        && lengths.iter().all(|&l| l == lengths[0] && l > 0 && l < cap_units);
    let target = if pickup { lengths[0] } else { cap_units };

    for staff in [1u8, 2] {
        let voices = d.staves.get(&staff).filter(|v| !v.is_empty());
        let Some(voices) = voices else {
            warnings.push(Warning::new(mi, format!("staff {} missing; filled with rest", staff)));
            push_rests(&mut m, start, 0, target, staff, 1);
            continue;
        };
        for (&voice, evs) in voices {
            let mut cursor = 0i64;
            for e in evs {
                if cursor >= target {
                    warnings.push(Warning::new(mi, format!("staff {} voice {} over capacity; truncated", staff, voice)));
                    break;
                }
                let mut units = e.units as i64;
                if cursor + units > target {
                    warnings.push(Warning::new(mi, format!("staff {} voice {} over capacity; truncated", staff, voice)));
                    units = target - cursor;
                }
                let onset = start + units_to_quarters(cursor);
                let dur = units_to_quarters(units);
                let ev = if e.rest {
                    NoteEvent::rest(onset, dur, staff, voice)
                } else {
                    let mut ps = e.pitches.clone();
                    ps.sort();
                    let before = ps.len();
                    ps.dedup_by_key(|p| p.midi_number());
                    if ps.len() != before {
                        warnings.push(Warning::new(mi, "duplicate chord pitch removed".to_string()));
                    }
                    let mut ev = NoteEvent::notes(onset, dur, ps, staff, voice);
                    ev.tie_start = e.tie;
                    ev
                };
                m.events.push(ev);
                cursor += units;
            }
            if cursor < target {
                warnings.push(Warning::new(mi, format!("staff {} voice {} under-filled; padded with rest", staff, voice)));
                push_rests(&mut m, start, cursor, target, staff, voice);
            }
        }
    }
    m.sort_events();
    m
}

/// Fills `[from, to)` (grammar units, relative to `start`) with rests no
/// longer than the largest duration token.
fn push_rests(m: &mut Measure, start: Quarters, mut from: i64, to: i64, staff: u8, voice: u8) {
    while from < to {
        let len = (to - from).min(MAX_DUR_UNITS as i64);
        m.events.push(NoteEvent::rest(start + units_to_quarters(from), units_to_quarters(len), staff, voice));
        from += len;
    }
}

/// Smallest divisions-per-quarter value expressing every onset and duration.
pub fn lcm_divisions(f: &ScoreFragment) -> u32 {
    let mut l: i64 = 1;
    for e in f.events() {
        l = l.lcm(e.duration.denom()).lcm(e.onset.denom());
    }
    l.to_u32().unwrap_or(u32::MAX)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::{validate, Step};

    fn q(n: i64) -> Quarters {
        Quarters::from_integer(n)
    }
    fn p(s: &str) -> Pitch {
        Pitch::parse_spelling(s).unwrap()
    }
    fn text(t: &TokenSequence) -> Vec<String> {
        t.tokens().iter().map(|t| t.to_string()).collect()
    }
    fn frag(events: Vec<NoteEvent>) -> ScoreFragment {
        let mut m = Measure::new(0, TimeSig::new(4, 4), 0);
        m.events = events;
        m.sort_events();
        ScoreFragment::new(vec![m])
    }

    #[test]
    fn single_quarter_example() {
        let f = frag(vec![
            NoteEvent::notes(q(0), q(1), vec![p("C4")], 1, 1),
            NoteEvent::rest(q(1), q(3), 1, 1),
            NoteEvent::rest(q(0), q(4), 2, 1),
        ]);
        let t = tokenize(&f).unwrap();
        let expect = [
            "time_4/4", "key_0", "bar", "staff_1", "voice_1", "dur_12", "note_C4", "dur_36", "rest", "staff_2",
            "voice_1", "dur_48", "rest", "END",
        ];
        assert_eq!(text(&t), expect);
    }

    #[test]
    fn chord_ascending_and_tie() {
        let f = frag(vec![
            NoteEvent::notes(q(0), q(2), vec![p("E4"), p("C4")], 1, 1),
            NoteEvent::rest(q(2), q(2), 1, 1),
            NoteEvent::rest(q(0), q(4), 2, 1),
        ]);
        let s = tokenize(&f).unwrap().to_text();
        assert!(s.contains("dur_24 note_C4 note_E4 dur_24"), "{s}");

        let mut a = NoteEvent::notes(q(0), q(1), vec![p("C4")], 1, 1);
        a.tie_start = true;
        let mut b = NoteEvent::notes(q(1), q(1), vec![p("C4")], 1, 1);
        b.tie_stop = true;
        let f = frag(vec![a, b, NoteEvent::rest(q(2), q(2), 1, 1), NoteEvent::rest(q(0), q(4), 2, 1)]);
        let s = tokenize(&f).unwrap().to_text();
        assert!(s.contains("dur_12 note_C4 tie dur_12 note_C4"), "{s}");
        let back = detokenize(&TokenSequence::from_text(&s)).unwrap();
        assert!(back.warnings.is_empty(), "{:?}", back.warnings);
        assert!(back.fragment.content_eq(&f));
    }

    #[test]
    fn non_representable_duration() {
        // quintuplet sixteenth: 1/5 quarter
        let f = frag(vec![
            NoteEvent::notes(q(0), Quarters::new(1, 5), vec![p("C4")], 1, 1),
            NoteEvent::rest(Quarters::new(1, 5), Quarters::new(19, 5), 1, 1),
            NoteEvent::rest(q(0), q(4), 2, 1),
        ]);
        assert!(matches!(tokenize(&f), Err(TokenizeError::DurationNotRepresentable { measure: 0, .. })));
    }

    #[test]
    fn missing_end_is_lenient() {
        let f = frag(vec![NoteEvent::notes(q(0), q(4), vec![p("G4")], 1, 1), NoteEvent::rest(q(0), q(4), 2, 1)]);
        let mut t = tokenize(&f).unwrap();
        t.0.pop();
        let back = detokenize(&t).unwrap();
        assert!(back.fragment.content_eq(&f));
        assert_eq!(back.warnings.len(), 1);
        assert_eq!(back.warnings[0].message, "no END");
    }

    #[test]
    fn under_filled_last_measure_padded() {
        // 3 quarters of content under 4/4 in staff 1
        let t = TokenSequence::from_text(
            "time_4/4 key_0 bar staff_1 voice_1 dur_12 note_C4 dur_12 note_D4 dur_12 note_E4 staff_2 voice_1 dur_48 rest bar staff_1 voice_1 dur_36 note_C4 staff_2 voice_1 dur_48 rest END",
        );
        let back = detokenize(&t).unwrap();
        let f = &back.fragment;
        assert_eq!(f.measures.len(), 2);
        assert_eq!(validate(f), vec![]);
        let last = &f.measures[1];
        let rest = last.events.iter().find(|e| e.staff == 1 && e.content.is_rest()).unwrap();
        assert_eq!(rest.onset, q(7));
        assert_eq!(rest.duration, q(1));
        // measure 0 under-filled in one staff only: padded, not a pickup
        assert!(back.warnings.iter().any(|w| w.measure == 0 && w.message.contains("padded")));
        assert!(back.warnings.iter().any(|w| w.measure == 1 && w.message.contains("padded")));
    }

    #[test]
    fn over_filled_truncated() {
        let t = TokenSequence::from_text(
            "time_3/4 key_0 bar staff_1 voice_1 dur_24 note_C4 dur_24 note_D4 staff_2 voice_1 dur_36 rest END",
        );
        let back = detokenize(&t).unwrap();
        assert_eq!(validate(&back.fragment), vec![]);
        let d = &back.fragment.measures[0].events.iter().find(|e| e.staff == 1 && e.onset == q(2)).unwrap();
        assert_eq!(d.duration, q(1));
        assert!(back.warnings.iter().any(|w| w.message.contains("truncated")));
    }

    #[test]
    fn ungrammatical_suffix_keeps_prefix() {
        let t = TokenSequence::from_text(
            "time_2/4 key_1 bar staff_1 voice_1 dur_24 note_G4 staff_2 voice_1 dur_24 rest bar staff_1 dur_12 END",
        );
        let back = detokenize(&t).unwrap();
        assert_eq!(back.fragment.measures.len(), 1);
        assert_eq!(back.fragment.measures[0].key_fifths, 1);
        assert!(!back.warnings.is_empty());
    }

    #[test]
    fn unparseable() {
        for s in ["", "END", "Easy SEP bar", "time_4/4 key_0 bar staff_1 voice_1 dur_12 END"] {
            assert!(matches!(detokenize(&TokenSequence::from_text(s)), Err(TokenizeError::Unparseable(_))), "{s}");
        }
    }

    #[test]
    fn pickup_round_trip() {
        let mut m0 = Measure::new(0, TimeSig::new(3, 4), -2);
        m0.events = vec![
            NoteEvent::notes(q(0), q(1), vec![Pitch::new(Step::B, -1, 4)], 1, 1),
            NoteEvent::rest(q(0), q(1), 2, 5),
        ];
        let mut m1 = Measure::new(1, TimeSig::new(3, 4), -2);
        m1.events = vec![
            NoteEvent::notes(q(1), q(3), vec![p("D5"), p("F5")], 1, 1),
            NoteEvent::notes(q(1), q(3), vec![p("Bb2")], 2, 5),
        ];
        let mut f = ScoreFragment::new(vec![m0, m1]);
        f.canonicalize();
        assert_eq!(validate(&f), vec![]);
        let back = detokenize(&tokenize(&f).unwrap()).unwrap();
        assert!(back.warnings.is_empty(), "{:?}", back.warnings);
        assert!(back.fragment.content_eq(&f));
    }

    #[test]
    fn triplets_divisions() {
        let third = Quarters::new(1, 3);
        let f = frag(vec![
            NoteEvent::notes(q(0), third, vec![p("C4")], 1, 1),
            NoteEvent::notes(third, third, vec![p("D4")], 1, 1),
            NoteEvent::notes(third * 2, third, vec![p("E4")], 1, 1),
            NoteEvent::rest(q(1), q(3), 1, 1),
            NoteEvent::rest(q(0), q(4), 2, 1),
        ]);
        assert_eq!(lcm_divisions(&f), 3);
        assert!(tokenize(&f).unwrap().to_text().contains("dur_4 note_C4 dur_4 note_D4"));
    }
}
