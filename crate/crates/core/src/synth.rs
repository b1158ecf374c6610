//! Seeded synthetic scores: arbitrary valid fragments for property tests, and
//! graded piano exercises whose style depends on the requested difficulty.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::difficulty::DifficultyLabel;
use crate::score::{Content, Measure, NoteEvent, Pitch, Quarters, ScoreFragment, Step, TimeSig};
use crate::tokenizer::units_to_quarters;

const TIME_SIGS: [(u8, u8); 8] = [(4, 4), (3, 4), (2, 4), (6, 8), (3, 8), (2, 2), (5, 4), (12, 8)];

fn capacity_units(ts: TimeSig) -> i64 {
    (ts.capacity() * Quarters::from_integer(12)).to_integer()
}

/// Pitch of a diatonic index (`7 * octave + step`) spelled in `key`.
pub fn diatonic_pitch(d: i32, key: i8) -> Pitch {
    let step = Step::ALL[d.rem_euclid(7) as usize];
    let x = key as i32 - 1 - step.fifths();
    let alter = -((-x).div_euclid(7));
    Pitch::new(step, alter as i8, d.div_euclid(7) as i8)
}

fn fill_durations<R: Rng>(rng: &mut R, total: i64, choices: &[i64]) -> Vec<i64> {
    let mut out = Vec::new();
    let mut left = total;
    while left > 0 {
        let fits: Vec<i64> = choices.iter().copied().filter(|&c| c <= left).collect();
        let d = fits.choose(rng).copied().unwrap_or(left);
        out.push(d);
        left -= d;
    }
    out
}

fn random_pitch<R: Rng>(rng: &mut R, staff: u8) -> Pitch {
    let octaves = if staff == 1 { 4..=6 } else { 1..=4 };
    let alter = match rng.gen_range(0..20) {
        0 => -2,
        1 => 2,
        2..=5 => -1,
        6..=9 => 1,
        _ => 0,
    };
    Pitch::new(Step::ALL[rng.gen_range(0..7)], alter, rng.gen_range(octaves))
}

fn random_chord<R: Rng>(rng: &mut R, staff: u8) -> Vec<Pitch> {
    let n = [1, 1, 1, 2, 3][rng.gen_range(0..5)];
    let mut ps: Vec<Pitch> = Vec::new();
    for _ in 0..n {
        let p = random_pitch(rng, staff);
        if p.is_valid() && !ps.iter().any(|q| q.midi_number() == p.midi_number()) {
            ps.push(p);
        }
    }
    if ps.is_empty() {
        ps.push(Pitch::new(Step::C, 0, if staff == 1 { 5 } else { 3 }));
    }
    ps
}

/// A random valid fragment exercising the full representation: pickups,
/// meter and key changes, several voices per staff, chords, triplet and
/// dotted values, double accidentals, and ties across beats and bar lines.
/// Every duration is a multiple of 1/12 quarter.
pub fn random_score<R: Rng>(rng: &mut R, measures: usize) -> ScoreFragment {
    let (n, d) = TIME_SIGS[rng.gen_range(0..TIME_SIGS.len())];
    let mut ts = TimeSig::new(n, d);
    let mut key: i8 = rng.gen_range(-7..=7);
    let mut out = Vec::new();
    let mut start = Quarters::from_integer(0);
    let durs = [1, 2, 3, 4, 5, 6, 8, 9, 12, 16, 18, 24, 36, 48];
    for mi in 0..measures.max(1) {
        if mi > 0 && rng.gen_bool(0.15) {
            let (n, d) = TIME_SIGS[rng.gen_range(0..TIME_SIGS.len())];
            ts = TimeSig::new(n, d);
        }
        if mi > 0 && rng.gen_bool(0.15) {
            key = rng.gen_range(-7..=7);
        }
        let cap = capacity_units(ts);
        let length = if mi == 0 && cap > 1 && rng.gen_bool(0.3) { rng.gen_range(1..cap) } else { cap };
        let mut m = Measure::new(mi, ts, key);
        for staff in [1u8, 2] {
            let mut voices = vec![1u8, 2, 3];
            voices.shuffle(rng);
            voices.truncate(rng.gen_range(1..=2));
            for voice in voices {
                let mut t = 0;
                for u in fill_durations(rng, length, &durs) {
                    let onset = start + units_to_quarters(t);
                    let dur = units_to_quarters(u);
                    let e = if rng.gen_bool(0.2) {
                        NoteEvent::rest(onset, dur, staff, voice)
                    } else {
                        let mut e = NoteEvent::notes(onset, dur, random_chord(rng, staff), staff, voice);
                        e.tie_start = rng.gen_bool(0.25);
                        e
                    };
                    m.events.push(e);
                    t += u;
                }
            }
        }
        m.sort_events();
        start += units_to_quarters(length);
        out.push(m);
    }
    let mut f = ScoreFragment::new(out);
    share_tied_pitches(&mut f);
    f.normalize_ties();
    f
}

/// Makes each tie-start event's successor contain one of its pitches so the
/// tie survives normalization.
fn share_tied_pitches(f: &mut ScoreFragment) {
    let streams: Vec<Vec<(Quarters, u8, u8)>> = f
        .streams()
        .into_values()
        .map(|evs| evs.iter().map(|e| (e.onset, e.staff, e.voice)).collect())
        .collect();
    for stream in streams {
        for w in stream.windows(2) {
            let (a, b) = (find(f, w[0]), find(f, w[1]));
            let (Some(a), Some(b)) = (a, b) else { continue };
            let prev = &f.measures[a.0].events[a.1];
            if !prev.tie_start || prev.content.is_rest() || prev.end() != w[1].0 {
                continue;
            }
            let p = prev.content.pitches()[0];
            let next = &mut f.measures[b.0].events[b.1];
            if let Content::Notes(ps) = &next.content {
                if !ps.iter().any(|q| q.midi_number() == p.midi_number()) {
                    let mut ps = ps.clone();
                    ps.push(p);
                    next.content = Content::chord(ps);
                }
            }
        }
    }
}

fn find(f: &ScoreFragment, (onset, staff, voice): (Quarters, u8, u8)) -> Option<(usize, usize)> {
    f.measures.iter().enumerate().find_map(|(mi, m)| {
        m.events
            .iter()
            .position(|e| e.onset == onset && e.staff == staff && e.voice == voice)
            .map(|ei| (mi, ei))
    })
}

struct Style {
    keys: i8,
    rh_durs: &'static [i64],
    lh_durs: &'static [i64],
    rh_span: (i32, i32),
    lh_span: (i32, i32),
    max_leap: i32,
    chord_prob: f64,
    rest_prob: f64,
    chromatic_prob: f64,
}

fn style(level: DifficultyLabel) -> Style {
    match level {
        DifficultyLabel::Easy => Style {
            keys: 1,
            rh_durs: &[12, 24, 24, 48],
            lh_durs: &[24, 36, 48],
            rh_span: (28, 32),
            lh_span: (21, 25),
            max_leap: 1,
            chord_prob: 0.0,
            rest_prob: 0.04,
            chromatic_prob: 0.0,
        },
        DifficultyLabel::Medium => Style {
            keys: 3,
            rh_durs: &[6, 6, 12, 12, 18, 24],
            lh_durs: &[12, 12, 24],
            rh_span: (28, 38),
            lh_span: (15, 25),
            max_leap: 3,
            chord_prob: 0.25,
            rest_prob: 0.06,
            chromatic_prob: 0.05,
        },
        DifficultyLabel::Advanced => Style {
            keys: 5,
            rh_durs: &[3, 3, 6, 6, 12],
            lh_durs: &[6, 6, 12],
            rh_span: (27, 45),
            lh_span: (8, 28),
            max_leap: 7,
            chord_prob: 0.35,
            rest_prob: 0.08,
            chromatic_prob: 0.2,
        },
    }
}

fn walk<R: Rng>(rng: &mut R, d: i32, span: (i32, i32), max_leap: i32) -> i32 {
    let step = rng.gen_range(-max_leap..=max_leap);
    let next = d + step;
    if next < span.0 || next > span.1 {
        d - step
    } else {
        next
    }
    .clamp(span.0, span.1)
}

/// A piano piece in one of three styles. Harder styles use wider keys and
/// ranges, shorter and more varied durations, larger leaps, chords, and
/// chromatic inflections; one voice per staff; meter 2/4, 3/4 or 4/4.
pub fn exercise_piece<R: Rng>(rng: &mut R, level: DifficultyLabel, measures: usize) -> ScoreFragment {
    let s = style(level);
    let (n, d) = [(2, 4), (3, 4), (4, 4)][rng.gen_range(0..3)];
    let ts = TimeSig::new(n, d);
    let key: i8 = rng.gen_range(-s.keys..=s.keys);
    let cap = capacity_units(ts);
    let mut pos = [rng.gen_range(s.rh_span.0..=s.rh_span.1), rng.gen_range(s.lh_span.0..=s.lh_span.1)];
    let mut out = Vec::new();
    for mi in 0..measures {
        let start = units_to_quarters(cap * mi as i64);
        let mut m = Measure::new(mi, ts, key);
        for (h, staff) in [1u8, 2].into_iter().enumerate() {
            let (durs, span) = if staff == 1 { (s.rh_durs, s.rh_span) } else { (s.lh_durs, s.lh_span) };
            let mut t = 0;
            for u in fill_durations(rng, cap, durs) {
                let onset = start + units_to_quarters(t);
                let dur = units_to_quarters(u);
                t += u;
                if rng.gen_bool(s.rest_prob) {
                    m.events.push(NoteEvent::rest(onset, dur, staff, 1));
                    continue;
                }
                pos[h] = walk(rng, pos[h], span, s.max_leap);
                let mut p = diatonic_pitch(pos[h], key);
                if rng.gen_bool(s.chromatic_prob) && p.alter == 0 {
                    p.alter = if rng.gen_bool(0.5) { 1 } else { -1 };
                }
                let mut chord = vec![p];
                if rng.gen_bool(s.chord_prob) {
                    let gaps: &[i32] = if staff == 1 { &[2, 4] } else { &[4, 7] };
                    for &g in gaps.iter().take(if rng.gen_bool(0.5) { 1 } else { 2 }) {
                        let q = diatonic_pitch(pos[h] + if staff == 1 { -g } else { g }, key);
                        if q.is_valid() && q.midi_number() != p.midi_number() {
                            chord.push(q);
                        }
                    }
                }
                m.events.push(NoteEvent::notes(onset, dur, chord, staff, 1));
            }
        }
        m.sort_events();
        out.push(m);
    }
    ScoreFragment::new(out)
}
