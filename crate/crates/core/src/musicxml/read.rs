use std::collections::{BTreeMap, BTreeSet};

use num_traits::{Signed, Zero};
use roxmltree::{Document, Node, ParsingOptions};

use super::{MusicXmlError, ParseReport};
use crate::score::{validate, Content, Measure, NoteEvent, Pitch, Quarters, ScoreFragment, Step, TimeSig};
use crate::Warning;

/// Note children that only restate pitch or duration for engraving.
const PRESENTATION: &[&str] = &["type", "dot", "stem", "beam", "accidental", "notehead", "time-modification", "instrument"];
const NOTE_DATA: &[&str] = &["chord", "pitch", "rest", "unpitched", "duration", "voice", "staff", "tie", "notations"];

struct Reader {
    warnings: Vec<Warning>,
    skipped: BTreeMap<String, usize>,
    reported: BTreeSet<(usize, String)>,
    divisions: i64,
    time: Option<TimeSig>,
    key: Option<i8>,
    staves: Option<u32>,
}

impl Reader {
    fn warn(&mut self, measure: usize, message: impl Into<String>) {
        self.warnings.push(Warning::new(measure, message));
    }

    /// Counts a skipped element; warns once per element name per measure.
    fn skip(&mut self, measure: usize, name: &str) {
        *self.skipped.entry(name.to_string()).or_default() += 1;
        if self.reported.insert((measure, name.to_string())) {
            self.warn(measure, format!("skipped unsupported element <{}>", name));
        }
    }
}

/// Event under construction, onset relative to the measure start.
struct RawEvent {
    onset: Quarters,
    duration: Quarters,
    pitches: Option<Vec<Pitch>>,
    xml_voice: String,
    staff: u8,
    segment: usize,
    tie_start: bool,
    tie_stop: bool,
}

fn elements<'a, 'i>(n: Node<'a, 'i>) -> impl Iterator<Item = Node<'a, 'i>> {
    n.children().filter(|c| c.is_element())
}

fn child<'a, 'i>(n: Node<'a, 'i>, name: &str) -> Option<Node<'a, 'i>> {
    elements(n).find(|c| c.has_tag_name(name))
}

fn child_text<'a>(n: Node<'a, '_>, name: &str) -> Option<&'a str> {
    child(n, name).and_then(|c| c.text()).map(str::trim)
}

fn unsupported(msg: impl Into<String>) -> MusicXmlError {
    MusicXmlError::UnsupportedStructure(msg.into())
}

/// Parses an uncompressed score-partwise document holding one two-staff part.
/// Irregular content is repaired with warnings so the returned score always
/// validates: gaps and short voices are filled with rests, overlong voices
/// truncated, dangling ties dropped.
pub fn parse(document: &[u8]) -> Result<ParseReport, MusicXmlError> {
    let text = std::str::from_utf8(document).map_err(|e| MusicXmlError::MalformedXml(e.to_string()))?;
    let text = text.trim_start_matches('\u{feff}');
    let opts = ParsingOptions { allow_dtd: true, ..ParsingOptions::default() };
    let doc = Document::parse_with_options(text, opts).map_err(|e| MusicXmlError::MalformedXml(e.to_string()))?;
    let root = doc.root_element();
    match root.tag_name().name() {
        "score-partwise" => {}
        "score-timewise" => return Err(unsupported("score-timewise documents are not supported")),
        other => return Err(unsupported(format!("root element <{}> is not a score", other))),
    }
    let parts: Vec<Node> = elements(root).filter(|n| n.has_tag_name("part")).collect();
    if parts.len() != 1 {
        return Err(unsupported(format!("expected exactly one part, found {}", parts.len())));
    }
    let title = child(root, "work")
        .and_then(|w| child_text(w, "work-title"))
        .or_else(|| child_text(root, "movement-title"))
        .filter(|t| !t.is_empty())
        .map(str::to_string);

    let mut r = Reader {
        warnings: Vec::new(),
        skipped: BTreeMap::new(),
        reported: BTreeSet::new(),
        divisions: 0,
        time: None,
        key: None,
        staves: None,
    };
    let mut measures = Vec::new();
    let mut start = Quarters::zero();
    for node in elements(parts[0]) {
        let mi = measures.len();
        if !node.has_tag_name("measure") {
            r.skip(mi, node.tag_name().name());
            continue;
        }
        let m = read_measure(&mut r, node, mi, start)?;
        start += m.length();
        measures.push(m);
    }
    if measures.is_empty() {
        return Err(unsupported("part has no measures"));
    }

    let mut score = ScoreFragment::new(measures);
    score.divisions = r.divisions.max(1) as u32;
    score.title = title;
    for mi in score.normalize_ties() {
        r.warn(mi, "tie without a matching continuation dropped");
    }
    if let Some(v) = validate(&score).into_iter().next() {
        return Err(unsupported(format!("unrepairable content: {}", v)));
    }
    Ok(ParseReport { score, warnings: r.warnings, skipped_elements: r.skipped })
}

fn duration_of(r: &Reader, n: Node, mi: usize) -> Result<Quarters, MusicXmlError> {
    let raw = child_text(n, "duration").ok_or_else(|| MusicXmlError::InconsistentTiming {
        measure: mi,
        detail: format!("<{}> without duration", n.tag_name().name()),
    })?;
    let d: i64 = match raw.parse() {
        Ok(d) => d,
        Err(_) => raw
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite() && v.fract() == 0.0)
            .map(|v| v as i64)
            .ok_or_else(|| MusicXmlError::InconsistentTiming { measure: mi, detail: format!("bad duration {:?}", raw) })?,
    };
    if d < 0 {
        return Err(MusicXmlError::InconsistentTiming { measure: mi, detail: format!("negative duration {}", d) });
    }
    Ok(Quarters::new(d, r.divisions.max(1)))
}

fn read_attributes(r: &mut Reader, n: Node, mi: usize) -> Result<(), MusicXmlError> {
    for c in elements(n) {
        match c.tag_name().name() {
            "divisions" => {
                let d: i64 = c.text().and_then(|t| t.trim().parse().ok()).filter(|&d| d > 0).ok_or_else(|| {
                    MusicXmlError::InconsistentTiming { measure: mi, detail: "divisions must be a positive integer".into() }
                })?;
                r.divisions = d;
            }
            "key" => {
                if let Some(f) = child_text(c, "fifths") {
                    let k: i8 = f
                        .parse()
                        .ok()
                        .filter(|k| (-7..=7).contains(k))
                        .ok_or_else(|| unsupported(format!("key fifths {:?}", f)))?;
                    r.key = Some(k);
                } else {
                    r.skip(mi, "key");
                }
            }
            "time" => {
                if child(c, "senza-misura").is_some() {
                    r.skip(mi, "senza-misura");
                    continue;
                }
                let beats = child_text(c, "beats").unwrap_or("");
                let beat_type = child_text(c, "beat-type").unwrap_or("");
                let num: Option<u32> = beats.split('+').map(|b| b.trim().parse::<u32>().ok()).sum();
                let ts = match (num, beat_type.parse::<u8>()) {
                    (Some(n), Ok(d)) if n <= u8::MAX as u32 => TimeSig::new(n as u8, d),
                    _ => return Err(unsupported(format!("time signature {}/{}", beats, beat_type))),
                };
                if !ts.is_valid() {
                    return Err(unsupported(format!("time signature {}/{}", beats, beat_type)));
                }
                if beats.contains('+') {
                    r.warn(mi, format!("compound meter {} read as {}/{}", beats, ts.numerator, ts.denominator));
                }
                r.time = Some(ts);
            }
            "staves" => {
                r.staves = c.text().and_then(|t| t.trim().parse().ok());
                if r.staves != Some(2) {
                    return Err(unsupported(format!("expected 2 staves, found {}", c.text().unwrap_or("?"))));
                }
            }
            "clef" => {}
            "transpose" => {
                if child_text(c, "chromatic").and_then(|t| t.parse::<i32>().ok()).unwrap_or(0) != 0 {
                    return Err(unsupported("transposing instrument"));
                }
                r.skip(mi, "transpose");
            }
            other => r.skip(mi, other),
        }
    }
    Ok(())
}

fn read_pitch(n: Node) -> Option<Pitch> {
    let step = Step::from_char(child_text(n, "step")?.chars().next()?)?;
    let alter = match child_text(n, "alter") {
        None => 0,
        Some(a) => {
            let v: f64 = a.parse().ok()?;
            if v.fract() != 0.0 {
                return None;
            }
            v as i8
        }
    };
    let octave: i8 = child_text(n, "octave")?.parse().ok()?;
    let p = Pitch::new(step, alter, octave);
    p.is_valid().then_some(p)
}

fn read_note(
    r: &mut Reader,
    n: Node,
    mi: usize,
    cursor: &mut Quarters,
    segment: usize,
    events: &mut Vec<RawEvent>,
) -> Result<(), MusicXmlError> {
    if child(n, "grace").is_some() {
        r.skip(mi, "grace");
        return Ok(());
    }
    if child(n, "cue").is_some() {
        r.skip(mi, "cue");
        return Ok(());
    }
    for c in elements(n) {
        let name = c.tag_name().name();
        if name == "notations" {
            for k in elements(c).filter(|k| !k.has_tag_name("tied")) {
                r.skip(mi, k.tag_name().name());
            }
        } else if !NOTE_DATA.contains(&name) && !PRESENTATION.contains(&name) {
            r.skip(mi, name);
        }
    }

    let is_chord = child(n, "chord").is_some();
    let duration = duration_of(r, n, mi)?;
    let staff: u8 = match child_text(n, "staff") {
        None => 1,
        Some(s) => s.parse().ok().filter(|s| *s == 1 || *s == 2).ok_or_else(|| unsupported(format!("staff {:?}", s)))?,
    };
    let xml_voice = child_text(n, "voice").unwrap_or("1").to_string();
    let mut tie_start = false;
    let mut tie_stop = false;
    let ties: Vec<Node> = elements(n).filter(|c| c.has_tag_name("tie")).collect();
    let tied: Vec<Node> = child(n, "notations").map(|c| elements(c).filter(|k| k.has_tag_name("tied")).collect()).unwrap_or_default();
    for t in if ties.is_empty() { tied } else { ties } {
        match t.attribute("type") {
            Some("start") => tie_start = true,
            Some("stop") => tie_stop = true,
            _ => {}
        }
    }

    let pitch = if let Some(p) = child(n, "pitch") {
        match read_pitch(p) {
            Some(p) => Some(p),
            None => {
                r.warn(mi, "unsupported pitch (microtone or out of range) read as a rest");
                None
            }
        }
    } else if child(n, "unpitched").is_some() {
        r.skip(mi, "unpitched");
        None
    } else {
        None
    };

    if is_chord {
        let Some(prev) = events.last_mut() else {
            r.warn(mi, "chord note without a preceding note ignored");
            return Ok(());
        };
        if prev.staff != staff {
            return Err(unsupported(format!("measure {}: chord spans both staves", mi)));
        }
        if prev.duration != duration {
            r.warn(mi, "chord member duration differs from its chord; first duration kept");
        }
        match (&mut prev.pitches, pitch) {
            (Some(ps), Some(p)) => ps.push(p),
            (None, Some(_)) => r.warn(mi, "chord note attached to a rest ignored"),
            _ => {}
        }
        prev.tie_start |= tie_start;
        prev.tie_stop |= tie_stop;
        return Ok(());
    }
    if duration.is_zero() {
        r.warn(mi, "zero-duration note ignored");
        return Ok(());
    }
    let is_rest = child(n, "rest").is_some() || child(n, "pitch").is_none();
    events.push(RawEvent {
        onset: *cursor,
        duration,
        pitches: if is_rest { None } else { pitch.map(|p| vec![p]) },
        xml_voice,
        staff,
        segment,
        tie_start,
        tie_stop,
    });
    *cursor += duration;
    Ok(())
}

/// Local voice numbers per staff: staff-2 voices written as 5..8 map back to
/// 1..4 unless that would merge two distinct voices.
fn voice_map(events: &[RawEvent]) -> BTreeMap<(u8, String), u8> {
    let mut map = BTreeMap::new();
    for staff in [1u8, 2] {
        let xml: BTreeSet<&str> = events.iter().filter(|e| e.staff == staff).map(|e| e.xml_voice.as_str()).collect();
        let numeric: Vec<(String, u32)> =
            xml.iter().map(|v| (v.to_string(), v.parse::<u32>().ok().filter(|&n| n >= 1).unwrap_or(0))).collect();
        let direct: BTreeSet<u32> = numeric.iter().map(|(_, n)| *n).collect();
        let mut used = BTreeSet::new();
        for (name, n) in numeric {
            let mut local = if staff == 2 && n > 4 && !direct.contains(&(n - 4)) { n - 4 } else { n };
            if local == 0 || local > u8::MAX as u32 || used.contains(&local) {
                local = (1..).find(|k| !used.contains(k) && !direct.contains(k)).unwrap();
            }
            used.insert(local);
            map.insert((staff, name), local as u8);
        }
    }
    map
}

fn read_measure(r: &mut Reader, node: Node, mi: usize, start: Quarters) -> Result<Measure, MusicXmlError> {
    let mut events: Vec<RawEvent> = Vec::new();
    let mut cursor = Quarters::zero();
    let mut segment = 0;
    for c in elements(node) {
        match c.tag_name().name() {
            "attributes" => read_attributes(r, c, mi)?,
            "note" => {
                if r.divisions == 0 {
                    r.warn(mi, "no divisions declared; assuming 1 per quarter");
                    r.divisions = 1;
                }
                read_note(r, c, mi, &mut cursor, segment, &mut events)?
            }
            "backup" => {
                cursor -= duration_of(r, c, mi)?;
                if cursor.is_negative() {
                    return Err(MusicXmlError::InconsistentTiming { measure: mi, detail: "backup before measure start".into() });
                }
                segment += 1;
            }
            "forward" => cursor += duration_of(r, c, mi)?,
            "barline" => {}
            other => r.skip(mi, other),
        }
    }
    if r.staves != Some(2) {
        return Err(unsupported("expected 2 staves, found 1"));
    }
    let time = r.time.unwrap_or_else(|| {
        r.warnings.push(Warning::new(mi, "no time signature; assuming 4/4"));
        TimeSig::default()
    });
    r.time = Some(time);
    let key = r.key.unwrap_or_else(|| {
        r.warnings.push(Warning::new(mi, "no key signature; assuming 0 fifths"));
        0
    });
    r.key = Some(key);

    let mut staves_of: BTreeMap<(usize, &str), BTreeSet<u8>> = BTreeMap::new();
    for e in &events {
        staves_of.entry((e.segment, e.xml_voice.as_str())).or_default().insert(e.staff);
    }
    if let Some(((_, v), _)) = staves_of.iter().find(|(_, s)| s.len() > 1) {
        return Err(unsupported(format!("measure {}: voice {} crosses staves", mi, v)));
    }

    let cap = time.capacity();
    let longest = events.iter().map(|e| e.onset + e.duration).max().unwrap_or_else(Quarters::zero);
    let length = if mi == 0 && longest.is_positive() && longest < cap { longest } else { cap };

    let voices = voice_map(&events);
    let mut streams: BTreeMap<(u8, u8), Vec<RawEvent>> = BTreeMap::new();
    for e in events {
        let v = voices[&(e.staff, e.xml_voice.clone())];
        streams.entry((e.staff, v)).or_default().push(e);
    }
    for staff in [1u8, 2] {
        if !streams.keys().any(|(s, _)| *s == staff) {
            r.warn(mi, format!("staff {} is empty; filled with a rest", staff));
            streams.insert((staff, 1), Vec::new());
        }
    }

    let mut m = Measure::new(mi, time, key);
    for ((staff, voice), mut evs) in streams {
        evs.sort_by_key(|e| e.onset);
        let mut t = Quarters::zero();
        for e in evs {
            if e.onset < t {
                r.warn(mi, format!("staff {} voice {}: overlapping event at {} dropped", staff, voice, e.onset));
                continue;
            }
            if e.onset >= length {
                r.warn(mi, format!("staff {} voice {}: event beyond the measure end dropped", staff, voice));
                continue;
            }
            if e.onset > t {
                r.warn(mi, format!("staff {} voice {}: gap filled with a rest", staff, voice));
                m.events.push(NoteEvent::rest(start + t, e.onset - t, staff, voice));
            }
            let mut duration = e.duration;
            let mut tie_start = e.tie_start;
            if e.onset + duration > length {
                r.warn(mi, format!("staff {} voice {}: event truncated at the measure end", staff, voice));
                duration = length - e.onset;
                tie_start = false;
            }
            let mut ev = match e.pitches {
                Some(ps) => NoteEvent::notes(start + e.onset, duration, ps, staff, voice),
                None => NoteEvent::rest(start + e.onset, duration, staff, voice),
            };
            if let Content::Notes(ps) = &ev.content {
                let midis: BTreeSet<i32> = ps.iter().map(|p| p.midi_number()).collect();
                if midis.len() != ps.len() {
                    r.warn(mi, "enharmonic duplicate in chord dropped");
                    let mut seen = BTreeSet::new();
                    let kept: Vec<Pitch> = ps.iter().copied().filter(|p| seen.insert(p.midi_number())).collect();
                    ev.content = Content::Notes(kept);
                }
            }
            ev.tie_start = tie_start && !ev.content.is_rest();
            ev.tie_stop = e.tie_stop && !ev.content.is_rest();
            t = e.onset + duration;
            m.events.push(ev);
        }
        if t < length {
            if t.is_positive() {
                r.warn(mi, format!("staff {} voice {}: under-filled voice padded with a rest", staff, voice));
            }
            m.events.push(NoteEvent::rest(start + t, length - t, staff, voice));
        }
    }
    m.sort_events();
    Ok(m)
}
