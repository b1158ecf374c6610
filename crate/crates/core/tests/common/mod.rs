#![allow(dead_code)]

use num_rational::Rational64;
use sightgen::score::{Measure, NoteEvent, Pitch, ScoreFragment, TimeSig};

pub fn q(n: i64, d: i64) -> Rational64 {
    Rational64::new(n, d)
}

pub fn p(s: &str) -> Pitch {
    Pitch::parse_spelling(s).unwrap_or_else(|| panic!("bad spelling {s}"))
}

/// One voice per staff laid out left to right in 4/4. An empty pitch list is
/// a rest. Each hand's last measure is padded with a rest.
pub fn two_hands(key: i8, rh: &[(&[&str], Rational64)], lh: &[(&[&str], Rational64)]) -> ScoreFragment {
    let cap = q(4, 1);
    let bars = |evs: &[(&[&str], Rational64)]| {
        let total: Rational64 = evs.iter().map(|e| e.1).sum();
        (total / cap).ceil().to_integer().max(1) as usize
    };
    let n = bars(rh).max(bars(lh));
    let mut measures: Vec<Measure> = (0..n).map(|i| Measure::new(i, TimeSig::new(4, 4), key)).collect();
    for (staff, evs) in [(1u8, rh), (2u8, lh)] {
        let mut t = q(0, 1);
        for (pitches, dur) in evs {
            let m = (t / cap).to_integer() as usize;
            assert!(t + dur <= cap * (m as i64 + 1), "event crosses a barline");
            let e = if pitches.is_empty() {
                NoteEvent::rest(t, *dur, staff, 1)
            } else {
                NoteEvent::notes(t, *dur, pitches.iter().map(|s| p(s)).collect(), staff, 1)
            };
            measures[m].events.push(e);
            t += dur;
        }
        while t < cap * n as i64 {
            let m = (t / cap).to_integer();
            let end = cap * (m + 1);
            measures[m as usize].events.push(NoteEvent::rest(t, end - t, staff, 1));
            t = end;
        }
    }
    for m in &mut measures {
        m.sort_events();
    }
    ScoreFragment::new(measures)
}

/// `n` measures of 4/4, each holding whole-note `rh` and `lh` pitches.
pub fn whole_notes(n: usize, key: i8, rh: &str, lh: &str) -> ScoreFragment {
    let rh_evs: Vec<(&[&str], Rational64)> = vec![(std::slice::from_ref(&rh), q(4, 1)); n];
    let lh_evs: Vec<(&[&str], Rational64)> = vec![(std::slice::from_ref(&lh), q(4, 1)); n];
    two_hands(key, &rh_evs, &lh_evs)
}
