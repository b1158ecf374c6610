//! In-memory model of a two-staff piano score.
//!
//! Time is exact: onsets and durations are rationals in quarter-note units,
//! measured from the start of the fragment. Staff 1 is the right hand and
//! staff 2 the left hand. Voices are scoped to their staff, so `(staff, voice)`
//! identifies one monophonic-in-time event stream.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_rational::Rational64;
use num_traits::{Signed, Zero};

/// Quarter-note time. Exact, never floating point.
pub type Quarters = Rational64;

/// Right hand / left hand. `Rh` is staff 1, `Lh` is staff 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Hand {
    Rh,
    Lh,
}

impl Hand {
    pub fn staff(self) -> u8 {
        match self {
            Hand::Rh => 1,
            Hand::Lh => 2,
        }
    }

    pub const BOTH: [Hand; 2] = [Hand::Rh, Hand::Lh];
}

/// Diatonic letter name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Step {
    C,
    D,
    E,
    F,
    G,
    A,
    B,
}

impl Step {
    pub const ALL: [Step; 7] = [Step::C, Step::D, Step::E, Step::F, Step::G, Step::A, Step::B];

    /// Semitones above C.
    pub fn semitone(self) -> i32 {
        match self {
            Step::C => 0,
            Step::D => 2,
            Step::E => 4,
            Step::F => 5,
            Step::G => 7,
            Step::A => 9,
            Step::B => 11,
        }
    }

    /// Position on the line of fifths relative to C (F = -1, ..., B = 5).
    pub fn fifths(self) -> i32 {
        match self {
            Step::F => -1,
            Step::C => 0,
            Step::G => 1,
            Step::D => 2,
            Step::A => 3,
            Step::E => 4,
            Step::B => 5,
        }
    }

    pub fn from_fifths(f: i32) -> Step {
        match f.rem_euclid(7) {
            6 => Step::F,
            0 => Step::C,
            1 => Step::G,
            2 => Step::D,
            3 => Step::A,
            4 => Step::E,
            _ => Step::B,
        }
    }

    /// 0 for C up to 6 for B.
    pub fn index(self) -> i32 {
        self as i32
    }

    pub fn from_char(c: char) -> Option<Step> {
        Some(match c {
            'C' => Step::C,
            'D' => Step::D,
            'E' => Step::E,
            'F' => Step::F,
            'G' => Step::G,
            'A' => Step::A,
            'B' => Step::B,
            _ => return None,
        })
    }

    pub fn as_char(self) -> char {
        match self {
            Step::C => 'C',
            Step::D => 'D',
            Step::E => 'E',
            Step::F => 'F',
            Step::G => 'G',
            Step::A => 'A',
            Step::B => 'B',
        }
    }
}

/// A spelled pitch: letter, chromatic alteration and octave (C4 is middle C).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Pitch {
    pub step: Step,
    pub alter: i8,
    pub octave: i8,
}

impl Pitch {
    pub fn new(step: Step, alter: i8, octave: i8) -> Self {
        Pitch { step, alter, octave }
    }

    /// MIDI note number: `12 * (octave + 1) + semitone(step) + alter`.
    pub fn midi_number(&self) -> i32 {
        12 * (self.octave as i32 + 1) + self.step.semitone() + self.alter as i32
    }

    /// Position on the line of fifths (C = 0, G = 1, F# = 6, Bb = -2, ...).
    pub fn line_of_fifths(&self) -> i32 {
        self.step.fifths() + 7 * self.alter as i32
    }

    pub fn pitch_class(&self) -> i32 {
        self.midi_number().rem_euclid(12)
    }

    pub fn is_valid(&self) -> bool {
        (-2..=2).contains(&self.alter)
            && (0..=8).contains(&self.octave)
            && (0..=127).contains(&self.midi_number())
    }

    /// Spelling in token form, e.g. `C4`, `F#4`, `Bbb3`.
    pub fn spelling(&self) -> String {
        let acc = match self.alter {
            a if a > 0 => "#".repeat(a as usize),
            a if a < 0 => "b".repeat((-a) as usize),
            _ => String::new(),
        };
        format!("{}{}{}", self.step.as_char(), acc, self.octave)
    }

    pub fn parse_spelling(s: &str) -> Option<Pitch> {
        let mut chars = s.chars();
        let step = Step::from_char(chars.next()?)?;
        let rest: &str = chars.as_str();
        let acc_len = rest.chars().take_while(|c| *c == '#' || *c == 'b').count();
        let (acc, oct) = rest.split_at(acc_len);
        let alter = if acc.is_empty() {
            0
        } else if acc.chars().all(|c| c == '#') {
            acc.len() as i8
        } else if acc.chars().all(|c| c == 'b') {
            -(acc.len() as i8)
        } else {
            return None;
        };
        if oct.is_empty() || !oct.chars().all(|c| c.is_ascii_digit() || c == '-') {
            return None;
        }
        let octave: i8 = oct.parse().ok()?;
        Some(Pitch { step, alter, octave })
    }
}

impl Ord for Pitch {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.midi_number(), self.step.index(), self.alter)
            .cmp(&(other.midi_number(), other.step.index(), other.alter))
    }
}

impl PartialOrd for Pitch {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Pitch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.spelling())
    }
}

/// What an event sounds: a chord (one or more pitches, ascending) or a rest.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Content {
    Rest,
    Notes(Vec<Pitch>),
}

impl Content {
    /// Builds a chord, sorting pitches ascending and dropping exact duplicates.
    pub fn chord(mut pitches: Vec<Pitch>) -> Content {
        pitches.sort();
        pitches.dedup();
        Content::Notes(pitches)
    }

    pub fn is_rest(&self) -> bool {
        matches!(self, Content::Rest)
    }

    pub fn pitches(&self) -> &[Pitch] {
        match self {
            Content::Rest => &[],
            Content::Notes(p) => p,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NoteEvent {
    pub onset: Quarters,
    pub duration: Quarters,
    pub content: Content,
    pub voice: u8,
    pub staff: u8,
    pub tie_start: bool,
    pub tie_stop: bool,
}

impl NoteEvent {
    pub fn rest(onset: Quarters, duration: Quarters, staff: u8, voice: u8) -> Self {
        NoteEvent {
            onset,
            duration,
            content: Content::Rest,
            voice,
            staff,
            tie_start: false,
            tie_stop: false,
        }
    }

    pub fn notes(onset: Quarters, duration: Quarters, pitches: Vec<Pitch>, staff: u8, voice: u8) -> Self {
        NoteEvent {
            onset,
            duration,
            content: Content::chord(pitches),
            voice,
            staff,
            tie_start: false,
            tie_stop: false,
        }
    }

    pub fn end(&self) -> Quarters {
        self.onset + self.duration
    }

    pub fn stream(&self) -> (u8, u8) {
        (self.staff, self.voice)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TimeSig {
    pub numerator: u8,
    pub denominator: u8,
}

impl TimeSig {
    pub fn new(numerator: u8, denominator: u8) -> Self {
        TimeSig { numerator, denominator }
    }

    /// Capacity of a full measure in quarter notes: `numerator * 4 / denominator`.
    pub fn capacity(&self) -> Quarters {
        Quarters::new(self.numerator as i64 * 4, self.denominator.max(1) as i64)
    }

    pub fn is_valid(&self) -> bool {
        self.numerator >= 1 && matches!(self.denominator, 1 | 2 | 4 | 8 | 16)
    }
}

impl Default for TimeSig {
    fn default() -> Self {
        TimeSig::new(4, 4)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Measure {
    pub index: usize,
    pub time_sig: TimeSig,
    pub key_fifths: i8,
    /// Events starting in this measure, onsets absolute from the fragment start.
    pub events: Vec<NoteEvent>,
}

impl Measure {
    pub fn new(index: usize, time_sig: TimeSig, key_fifths: i8) -> Self {
        Measure { index, time_sig, key_fifths, events: Vec::new() }
    }

    /// Puts events in canonical order: staff, voice, onset.
    pub fn sort_events(&mut self) {
        self.events.sort_by(|a, b| (a.staff, a.voice, a.onset).cmp(&(b.staff, b.voice, b.onset)));
    }

    /// Sum of event durations per `(staff, voice)` stream.
    pub fn voice_lengths(&self) -> BTreeMap<(u8, u8), Quarters> {
        let mut lengths = BTreeMap::new();
        for e in &self.events {
            *lengths.entry(e.stream()).or_insert_with(Quarters::zero) += e.duration;
        }
        lengths
    }

    /// Actual length: the full time-signature capacity, except for a measure-0
    /// pickup whose voices are all shorter, in which case the content length.
    pub fn length(&self) -> Quarters {
        let cap = self.time_sig.capacity();
        if self.index != 0 {
            return cap;
        }
        let longest = self.voice_lengths().values().copied().max().unwrap_or(cap);
        if longest.is_zero() {
            cap
        } else {
            longest.min(cap)
        }
    }

    pub fn is_pickup(&self) -> bool {
        self.length() < self.time_sig.capacity()
    }

    pub fn voices_on(&self, staff: u8) -> BTreeSet<u8> {
        self.events.iter().filter(|e| e.staff == staff).map(|e| e.voice).collect()
    }
}

/// A two-staff piano excerpt. Full pieces use the same type with any number
/// of measures; training fragments hold at most 16.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreFragment {
    pub measures: Vec<Measure>,
    /// Parse-time resolution in divisions per quarter.
    pub divisions: u32,
    pub title: Option<String>,
    pub source_id: Option<String>,
}

impl ScoreFragment {
    pub fn new(measures: Vec<Measure>) -> Self {
        ScoreFragment { measures, divisions: 1, title: None, source_id: None }
    }

    /// Start offset of every measure, plus the total length as a final entry.
    pub fn measure_starts(&self) -> Vec<Quarters> {
        let mut starts = Vec::with_capacity(self.measures.len() + 1);
        let mut t = Quarters::zero();
        for m in &self.measures {
            starts.push(t);
            t += m.length();
        }
        starts.push(t);
        starts
    }

    /// Total length in quarter notes.
    pub fn total_quarters(&self) -> Quarters {
        self.measures.iter().map(|m| m.length()).fold(Quarters::zero(), |a, b| a + b)
    }

    pub fn events(&self) -> impl Iterator<Item = &NoteEvent> {
        self.measures.iter().flat_map(|m| m.events.iter())
    }

    /// Equality on musical content: measures, time and key signatures, and
    /// every event field. Divisions and metadata are ignored.
    pub fn content_eq(&self, other: &ScoreFragment) -> bool {
        self.measures == other.measures
    }

    pub fn canonicalize(&mut self) {
        for (i, m) in self.measures.iter_mut().enumerate() {
            m.index = i;
            m.sort_events();
        }
    }

    /// Distinct onsets carrying at least one pitched note on the hand's staff,
    /// with simultaneous pitches of all voices merged into one MIDI set.
    pub fn hand_onsets(&self, hand: Hand) -> Vec<(Quarters, BTreeSet<i32>)> {
        let staff = hand.staff();
        let mut by_onset: BTreeMap<Quarters, BTreeSet<i32>> = BTreeMap::new();
        for e in self.events().filter(|e| e.staff == staff) {
            if let Content::Notes(ps) = &e.content {
                by_onset.entry(e.onset).or_default().extend(ps.iter().map(|p| p.midi_number()));
            }
        }
        by_onset.into_iter().filter(|(_, s)| !s.is_empty()).collect()
    }

    /// Pitch multiset of a hand: every sounding pitch of every event, chord
    /// members counted individually.
    pub fn hand_pitches(&self, hand: Hand) -> Vec<i32> {
        let staff = hand.staff();
        self.events()
            .filter(|e| e.staff == staff)
            .flat_map(|e| e.content.pitches().iter().map(|p| p.midi_number()))
            .collect()
    }

    /// All events of each `(staff, voice)` stream in time order, across measures.
    pub fn streams(&self) -> BTreeMap<(u8, u8), Vec<&NoteEvent>> {
        let mut streams: BTreeMap<(u8, u8), Vec<&NoteEvent>> = BTreeMap::new();
        for e in self.events() {
            streams.entry(e.stream()).or_default().push(e);
        }
        for evs in streams.values_mut() {
            evs.sort_by_key(|e| e.onset);
        }
        streams
    }

    /// Recomputes tie flags so they are consistent: a tie start survives only
    /// if the next event of its stream begins exactly where it ends and shares
    /// a MIDI pitch; tie stops mirror the surviving starts. Returns the
    /// measure index of every dropped tie start.
    pub fn normalize_ties(&mut self) -> Vec<usize> {
        // (measure, event index) per stream in time order
        let mut streams: BTreeMap<(u8, u8), Vec<(usize, usize)>> = BTreeMap::new();
        for (mi, m) in self.measures.iter().enumerate() {
            for (ei, e) in m.events.iter().enumerate() {
                streams.entry(e.stream()).or_default().push((mi, ei));
            }
        }
        let mut dropped = Vec::new();
        for locs in streams.values_mut() {
            locs.sort_by_key(|&(mi, ei)| self.measures[mi].events[ei].onset);
            let mut prev_tied = false;
            for k in 0..locs.len() {
                let (mi, ei) = locs[k];
                let keep = {
                    let e = &self.measures[mi].events[ei];
                    e.tie_start
                        && !e.content.is_rest()
                        && locs.get(k + 1).is_some_and(|&(nm, ne)| {
                            let n = &self.measures[nm].events[ne];
                            n.onset == e.end() && shares_pitch(&e.content, &n.content)
                        })
                };
                let e = &mut self.measures[mi].events[ei];
                if e.tie_start && !keep {
                    dropped.push(mi);
                }
                e.tie_start = keep;
                e.tie_stop = prev_tied;
                prev_tied = keep;
            }
        }
        dropped
    }
}

fn shares_pitch(a: &Content, b: &Content) -> bool {
    let a: BTreeSet<i32> = a.pitches().iter().map(|p| p.midi_number()).collect();
    b.pitches().iter().any(|p| a.contains(&p.midi_number()))
}

/// Free-function form of [`Pitch::midi_number`].
pub fn midi_number(p: &Pitch) -> i32 {
    p.midi_number()
}

/// Sum of time-signature capacities (pickup measures count their content).
pub fn total_quarters(f: &ScoreFragment) -> Quarters {
    f.total_quarters()
}

pub fn hand_onsets(f: &ScoreFragment, hand: Hand) -> Vec<(Quarters, BTreeSet<i32>)> {
    f.hand_onsets(hand)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Rule {
    Pitch,
    Duration,
    Staff,
    Voice,
    Chord,
    TimeSignature,
    Key,
    Index,
    Bounds,
    Overlap,
    Capacity,
    MissingStaff,
    Tie,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Rule::Pitch => "pitch",
            Rule::Duration => "duration",
            Rule::Staff => "staff",
            Rule::Voice => "voice",
            Rule::Chord => "chord",
            Rule::TimeSignature => "time",
            Rule::Key => "key",
            Rule::Index => "index",
            Rule::Bounds => "bounds",
            Rule::Overlap => "overlap",
            Rule::Capacity => "capacity",
            Rule::MissingStaff => "missing-staff",
            Rule::Tie => "tie",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub measure: usize,
    /// `(staff, voice)` when the rule concerns one stream.
    pub voice: Option<(u8, u8)>,
    pub rule: Rule,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.voice {
            Some((s, v)) => write!(f, "measure {} staff {} voice {}: {}: {}", self.measure, s, v, self.rule, self.detail),
            None => write!(f, "measure {}: {}: {}", self.measure, self.rule, self.detail),
        }
    }
}

/// Checks every structural invariant; never aborts. Empty result means valid.
pub fn validate(f: &ScoreFragment) -> Vec<Violation> {
    let mut out = Vec::new();
    let starts = f.measure_starts();
    let mut push = |measure: usize, voice: Option<(u8, u8)>, rule: Rule, detail: String| {
        out.push(Violation { measure, voice, rule, detail })
    };

    for (mi, m) in f.measures.iter().enumerate() {
        if m.index != mi {
            push(mi, None, Rule::Index, format!("index {} at position {}", m.index, mi));
        }
        if !m.time_sig.is_valid() {
            push(mi, None, Rule::TimeSignature, format!("{}/{}", m.time_sig.numerator, m.time_sig.denominator));
        }
        if !(-7..=7).contains(&m.key_fifths) {
            push(mi, None, Rule::Key, format!("fifths {}", m.key_fifths));
        }
        let (start, end) = (starts[mi], starts[mi + 1]);
        for e in &m.events {
            let sv = Some(e.stream());
            if e.staff != 1 && e.staff != 2 {
                push(mi, sv, Rule::Staff, format!("staff {}", e.staff));
            }
            if e.voice == 0 {
                push(mi, sv, Rule::Voice, "voice 0".into());
            }
            if !e.duration.is_positive() {
                push(mi, sv, Rule::Duration, format!("duration {}", e.duration));
            }
            if e.onset < start || e.end() > end {
                push(mi, sv, Rule::Bounds, format!("event [{}, {}) outside measure [{}, {})", e.onset, e.end(), start, end));
            }
            match &e.content {
                Content::Rest => {
                    if e.tie_start || e.tie_stop {
                        push(mi, sv, Rule::Tie, "tied rest".into());
                    }
                }
                Content::Notes(ps) => {
                    if ps.is_empty() {
                        push(mi, sv, Rule::Chord, "empty pitch set".into());
                    }
                    for p in ps {
                        if !p.is_valid() {
                            push(mi, sv, Rule::Pitch, format!("{:?}", p));
                        }
                    }
                    let midis: BTreeSet<i32> = ps.iter().map(|p| p.midi_number()).collect();
                    if midis.len() != ps.len() {
                        push(mi, sv, Rule::Chord, "duplicate pitch in chord".into());
                    }
                    if ps.windows(2).any(|w| w[0] > w[1]) {
                        push(mi, sv, Rule::Chord, "chord not ascending".into());
                    }
                }
            }
        }

        // per-stream ordering, overlap, capacity
        let mut by_stream: BTreeMap<(u8, u8), Vec<&NoteEvent>> = BTreeMap::new();
        for e in &m.events {
            by_stream.entry(e.stream()).or_default().push(e);
        }
        let cap = m.time_sig.capacity();
        let length = m.length();
        for (&sv, evs) in &by_stream {
            if evs.windows(2).any(|w| w[0].onset > w[1].onset) {
                push(mi, Some(sv), Rule::Overlap, "events not sorted by onset".into());
            }
            let mut sorted = evs.clone();
            sorted.sort_by_key(|e| e.onset);
            for w in sorted.windows(2) {
                if w[1].onset < w[0].end() {
                    push(mi, Some(sv), Rule::Overlap, format!("event at {} overlaps event at {}", w[1].onset, w[0].onset));
                }
            }
            let total = evs.iter().fold(Quarters::zero(), |a, e| a + e.duration);
            let expected = if mi == 0 { length } else { cap };
            if total != expected {
                push(mi, Some(sv), Rule::Capacity, format!("voice holds {} of {} quarters", total, expected));
            }
        }
        for staff in [1u8, 2] {
            if !by_stream.keys().any(|(s, _)| *s == staff) {
                push(mi, None, Rule::MissingStaff, format!("staff {} has no events", staff));
            }
        }
    }

    // tie consistency across the whole fragment
    let mut canon = f.clone();
    canon.normalize_ties();
    for (mi, (a, b)) in f.measures.iter().zip(&canon.measures).enumerate() {
        for (ea, eb) in a.events.iter().zip(&b.events) {
            if ea.tie_start != eb.tie_start || ea.tie_stop != eb.tie_stop {
                push(mi, Some(ea.stream()), Rule::Tie, format!("inconsistent tie at {}", ea.onset));
            }
        }
    }
    out
}
