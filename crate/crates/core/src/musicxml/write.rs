use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use super::MusicXmlError;
use crate::score::{NoteEvent, Quarters, ScoreFragment};
use crate::tokenizer::lcm_divisions;

/// Note type names by duration in quarters, longest first.
const TYPES: [(i64, i64, &str); 9] = [
    (16, 1, "long"),
    (8, 1, "breve"),
    (4, 1, "whole"),
    (2, 1, "half"),
    (1, 1, "quarter"),
    (1, 2, "eighth"),
    (1, 4, "16th"),
    (1, 8, "32nd"),
    (1, 16, "64th"),
];

/// Graphic note type, dot count, and whether a 3:2 tuplet ratio applies.
fn note_type(d: Quarters) -> Option<(&'static str, usize, bool)> {
    for (tuplet, scaled) in [(false, d), (true, d * Quarters::new(3, 2))] {
        for (n, m, name) in TYPES {
            let base = Quarters::new(n, m);
            for (dots, factor) in [(0, Quarters::from_integer(1)), (1, Quarters::new(3, 2)), (2, Quarters::new(7, 4))] {
                if scaled == base * factor {
                    return Some((name, dots, tuplet));
                }
            }
        }
    }
    None
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// MIDI pitches tied into and out of each event, keyed by (staff, voice, onset).
type TieSets = BTreeMap<(u8, u8, Quarters), (BTreeSet<i32>, BTreeSet<i32>)>;

fn tie_sets(f: &ScoreFragment) -> TieSets {
    let mut out = TieSets::new();
    for ((staff, voice), evs) in f.streams() {
        for w in evs.windows(2) {
            if w[0].tie_start {
                let a: BTreeSet<i32> = w[0].content.pitches().iter().map(|p| p.midi_number()).collect();
                let b: BTreeSet<i32> = w[1].content.pitches().iter().map(|p| p.midi_number()).collect();
                let shared: BTreeSet<i32> = a.intersection(&b).copied().collect();
                out.entry((staff, voice, w[0].onset)).or_default().1 = shared.clone();
                out.entry((staff, voice, w[1].onset)).or_default().0 = shared;
            }
        }
    }
    out
}

fn write_note(out: &mut String, e: &NoteEvent, divisions: i64, ties: &TieSets, measure: usize) -> Result<(), MusicXmlError> {
    let dur = e.duration * Quarters::from_integer(divisions);
    if !dur.is_integer() {
        return Err(MusicXmlError::NonRepresentable {
            measure,
            detail: format!("duration {} at {} divisions", e.duration, divisions),
        });
    }
    let xml_voice = if e.staff == 2 { e.voice as u32 + 4 } else { e.voice as u32 };
    let empty = (BTreeSet::new(), BTreeSet::new());
    let (tied_in, tied_out) = ties.get(&(e.staff, e.voice, e.onset)).unwrap_or(&empty);
    let kind = note_type(e.duration);
    let pitches: Vec<Option<_>> = if e.content.is_rest() { vec![None] } else { e.content.pitches().iter().map(Some).collect() };
    for (i, p) in pitches.iter().enumerate() {
        out.push_str("      <note>\n");
        if i > 0 {
            out.push_str("        <chord/>\n");
        }
        let (stop, start) = match p {
            Some(p) => {
                let _ = write!(out, "        <pitch>\n          <step>{}</step>\n", p.step.as_char());
                if p.alter != 0 {
                    let _ = writeln!(out, "          <alter>{}</alter>", p.alter);
                }
                let _ = write!(out, "          <octave>{}</octave>\n        </pitch>\n", p.octave);
                let m = p.midi_number();
                (e.tie_stop && tied_in.contains(&m), e.tie_start && tied_out.contains(&m))
            }
            None => {
                out.push_str("        <rest/>\n");
                (false, false)
            }
        };
        let _ = writeln!(out, "        <duration>{}</duration>", dur.to_integer());
        if stop {
            out.push_str("        <tie type=\"stop\"/>\n");
        }
        if start {
            out.push_str("        <tie type=\"start\"/>\n");
        }
        let _ = writeln!(out, "        <voice>{}</voice>", xml_voice);
        if let Some((name, dots, tuplet)) = kind {
            let _ = writeln!(out, "        <type>{}</type>", name);
            for _ in 0..dots {
                out.push_str("        <dot/>\n");
            }
            if tuplet {
                out.push_str(
                    "        <time-modification>\n          <actual-notes>3</actual-notes>\n          <normal-notes>2</normal-notes>\n        </time-modification>\n",
                );
            }
        }
        let _ = writeln!(out, "        <staff>{}</staff>", e.staff);
        if stop || start {
            out.push_str("        <notations>\n");
            if stop {
                out.push_str("          <tied type=\"stop\"/>\n");
            }
            if start {
                out.push_str("          <tied type=\"start\"/>\n");
            }
            out.push_str("        </notations>\n");
        }
        out.push_str("      </note>\n");
    }
    Ok(())
}

/// Writes a score-partwise 4.0 document with one two-staff piano part.
/// Divisions are the least common multiple of all duration and onset
/// denominators; voices are written in staff then voice order, joined by
/// backups of one measure length. Output is byte-deterministic.
pub fn serialize(f: &ScoreFragment) -> Result<Vec<u8>, MusicXmlError> {
    let divisions = lcm_divisions(f) as i64;
    if divisions == u32::MAX as i64 {
        return Err(MusicXmlError::NonRepresentable { measure: 0, detail: "divisions overflow".into() });
    }
    let ties = tie_sets(f);
    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\" standalone=\"no\"?>\n");
    out.push_str("<!DOCTYPE score-partwise PUBLIC \"-//Recordare//DTD MusicXML 4.0 Partwise//EN\" \"http://www.musicxml.org/dtds/partwise.dtd\">\n");
    out.push_str("<score-partwise version=\"4.0\">\n");
    if let Some(t) = &f.title {
        let _ = write!(out, "  <work>\n    <work-title>{}</work-title>\n  </work>\n", escape(t));
    }
    out.push_str("  <part-list>\n    <score-part id=\"P1\">\n      <part-name>Piano</part-name>\n    </score-part>\n  </part-list>\n");
    out.push_str("  <part id=\"P1\">\n");

    let pickup = f.measures.first().is_some_and(|m| m.is_pickup());
    let mut prev: Option<(crate::score::TimeSig, i8)> = None;
    for (mi, m) in f.measures.iter().enumerate() {
        let number = if pickup { mi } else { mi + 1 };
        if mi == 0 && pickup {
            let _ = writeln!(out, "    <measure number=\"{}\" implicit=\"yes\">", number);
        } else {
            let _ = writeln!(out, "    <measure number=\"{}\">", number);
        }
        let key_changed = prev.is_none_or(|(_, k)| k != m.key_fifths);
        let time_changed = prev.is_none_or(|(t, _)| t != m.time_sig);
        if key_changed || time_changed {
            out.push_str("      <attributes>\n");
            if prev.is_none() {
                let _ = writeln!(out, "        <divisions>{}</divisions>", divisions);
            }
            if key_changed {
                let _ = write!(out, "        <key>\n          <fifths>{}</fifths>\n        </key>\n", m.key_fifths);
            }
            if time_changed {
                let _ = write!(
                    out,
                    "        <time>\n          <beats>{}</beats>\n          <beat-type>{}</beat-type>\n        </time>\n",
                    m.time_sig.numerator, m.time_sig.denominator
                );
            }
            if prev.is_none() {
                out.push_str("        <staves>2</staves>\n");
                out.push_str("        <clef number=\"1\">\n          <sign>G</sign>\n          <line>2</line>\n        </clef>\n");
                out.push_str("        <clef number=\"2\">\n          <sign>F</sign>\n          <line>4</line>\n        </clef>\n");
            }
            out.push_str("      </attributes>\n");
        }
        prev = Some((m.time_sig, m.key_fifths));

        let mut streams: BTreeMap<(u8, u8), Vec<&NoteEvent>> = BTreeMap::new();
        for e in &m.events {
            streams.entry(e.stream()).or_default().push(e);
        }
        let length = (m.length() * Quarters::from_integer(divisions)).to_integer();
        for (k, evs) in streams.values_mut().enumerate() {
            if k > 0 {
                let _ = write!(out, "      <backup>\n        <duration>{}</duration>\n      </backup>\n", length);
            }
            evs.sort_by_key(|e| e.onset);
            for e in evs.iter() {
                write_note(&mut out, e, divisions, &ties, mi)?;
            }
        }
        out.push_str("    </measure>\n");
    }
    out.push_str("  </part>\n</score-partwise>\n");
    Ok(out.into_bytes())
}
