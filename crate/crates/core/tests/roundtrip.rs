use std::collections::BTreeMap;

use num_rational::Rational64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sightgen::musicxml::{parse, serialize, MusicXmlError};
use sightgen::score::{validate, Content, Measure, NoteEvent, Pitch, ScoreFragment, Step, TimeSig};
use sightgen::synth::random_score;
use sightgen::tokenizer::{detokenize, tokenize};

fn q(n: i64, d: i64) -> Rational64 {
    Rational64::new(n, d)
}

fn doc(body: &str, staves: u32) -> String {
    format!(
        r#"<?xml version="1.0" encoding="UTF-8"?>
<!DOCTYPE score-partwise PUBLIC "-//Recordare//DTD MusicXML 4.0 Partwise//EN" "http://www.musicxml.org/dtds/partwise.dtd">
<score-partwise version="4.0">
  <part-list><score-part id="P1"><part-name>Piano</part-name></score-part></part-list>
  <part id="P1">
    <measure number="1">
      <attributes><divisions>1</divisions><key><fifths>0</fifths></key>
        <time><beats>4</beats><beat-type>4</beat-type></time><staves>{staves}</staves></attributes>
      {body}
    </measure>
  </part>
</score-partwise>"#
    )
}

fn note(step: char, octave: i8, dur: u32, voice: u32, staff: u32) -> String {
    format!(
        "<note><pitch><step>{step}</step><octave>{octave}</octave></pitch><duration>{dur}</duration><voice>{voice}</voice><type>quarter</type><staff>{staff}</staff></note>"
    )
}

#[test]
fn minimal_document() {
    let r = parse(doc(&note('C', 4, 1, 1, 1), 2).as_bytes()).unwrap();
    let f = &r.score;
    assert_eq!(f.measures.len(), 1);
    let rh: Vec<&NoteEvent> = f.events().filter(|e| e.staff == 1 && !e.content.is_rest()).collect();
    assert_eq!(rh.len(), 1);
    let e = rh[0];
    assert_eq!((e.onset, e.duration, e.voice, e.staff), (q(0, 1), q(1, 1), 1, 1));
    assert_eq!(e.content, Content::Notes(vec![Pitch::new(Step::C, 0, 4)]));
    // the rest of the bar and the silent left hand are repaired with warnings
    assert!(!r.warnings.is_empty());
    assert!(validate(f).is_empty());
}

#[test]
fn staff_count_must_be_two() {
    assert!(matches!(parse(doc("", 3).as_bytes()), Err(MusicXmlError::UnsupportedStructure(_))));
    assert!(matches!(parse(doc("", 1).as_bytes()), Err(MusicXmlError::UnsupportedStructure(_))));
}

#[test]
fn malformed_and_negative_cursor() {
    assert!(matches!(parse(b"<score-partwise><part>"), Err(MusicXmlError::MalformedXml(_))));
    let body = format!("{}<backup><duration>2</duration></backup>", note('C', 4, 1, 1, 1));
    assert!(matches!(parse(doc(&body, 2).as_bytes()), Err(MusicXmlError::InconsistentTiming { .. })));
}

/// Independent cursor simulation over the raw note/backup/forward stream.
fn simulate(events: &[(&str, u32, u32)]) -> Vec<(u32, i64)> {
    let mut cursor = 0i64;
    let mut out = Vec::new();
    for &(kind, dur, staff) in events {
        match kind {
            "note" => {
                out.push((staff, cursor));
                cursor += dur as i64;
            }
            "backup" => cursor -= dur as i64,
            _ => cursor += dur as i64,
        }
    }
    out
}

#[test]
fn backup_interleaves_staves() {
    let stream = [
        ("note", 1, 1),
        ("note", 1, 1),
        ("note", 2, 1),
        ("backup", 4, 0),
        ("note", 2, 2),
        ("note", 2, 2),
    ];
    let mut body = String::new();
    for &(kind, dur, staff) in &stream {
        if kind == "note" {
            body += &note('E', if staff == 1 { 5 } else { 3 }, dur, if staff == 1 { 1 } else { 5 }, staff);
        } else {
            body += &format!("<backup><duration>{dur}</duration></backup>");
        }
    }
    let r = parse(doc(&body, 2).as_bytes()).unwrap();
    assert!(r.warnings.is_empty(), "{:?}", r.warnings);
    let mut got: Vec<(u32, i64)> =
        r.score.events().map(|e| (e.staff as u32, e.onset.to_integer())).collect();
    let mut want = simulate(&stream);
    got.sort();
    want.sort();
    assert_eq!(got, want);
    // staff 2 shares onset 0 and 2 with staff 1
    assert!(r.score.events().any(|e| e.staff == 2 && e.onset == q(2, 1)));
    assert!(r.score.events().all(|e| e.voice == 1));
}

#[test]
fn chord_crossing_staves_is_rejected() {
    let body = format!(
        "{}<note><chord/><pitch><step>C</step><octave>3</octave></pitch><duration>4</duration><voice>1</voice><staff>2</staff></note>",
        note('C', 4, 4, 1, 1)
    );
    assert!(matches!(parse(doc(&body, 2).as_bytes()), Err(MusicXmlError::UnsupportedStructure(_))));
}

#[test]
fn grace_and_unknown_elements_are_counted() {
    let body = format!(
        "<direction><direction-type><words>dolce</words></direction-type></direction>\
         <note><grace/><pitch><step>D</step><octave>4</octave></pitch><voice>1</voice><staff>1</staff></note>{}",
        note('C', 4, 4, 1, 1)
    );
    let r = parse(doc(&body, 2).as_bytes()).unwrap();
    assert_eq!(r.skipped_elements.get("grace"), Some(&1));
    assert_eq!(r.skipped_elements.get("direction"), Some(&1));
    assert!(r.warnings.iter().all(|w| w.measure == 0));
}

fn two_staff(events: Vec<NoteEvent>, ts: TimeSig) -> ScoreFragment {
    let mut m = Measure::new(0, ts, 0);
    m.events = events;
    m.sort_events();
    ScoreFragment::new(vec![m])
}

#[test]
fn spelling_is_preserved() {
    let f = two_staff(
        vec![
            NoteEvent::notes(q(0, 1), q(4, 1), vec![Pitch::new(Step::F, 1, 4)], 1, 1),
            NoteEvent::rest(q(0, 1), q(4, 1), 2, 1),
        ],
        TimeSig::new(4, 4),
    );
    let xml = String::from_utf8(serialize(&f).unwrap()).unwrap();
    assert!(xml.contains("<step>F</step>\n          <alter>1</alter>"));
    assert!(parse(xml.as_bytes()).unwrap().score.content_eq(&f));
}

#[test]
fn triplet_divisions() {
    let mut events: Vec<NoteEvent> = (0..3)
        .map(|i| NoteEvent::notes(q(i, 3), q(1, 3), vec![Pitch::new(Step::G, 0, 4)], 1, 1))
        .collect();
    events.push(NoteEvent::notes(q(1, 1), q(1, 1), vec![Pitch::new(Step::A, 0, 4)], 1, 1));
    events.push(NoteEvent::rest(q(0, 1), q(2, 1), 2, 1));
    let f = two_staff(events, TimeSig::new(2, 4));
    let xml = String::from_utf8(serialize(&f).unwrap()).unwrap();
    let div: i64 = xml.split("<divisions>").nth(1).unwrap().split('<').next().unwrap().parse().unwrap();
    assert_eq!(div % 3, 0);
    for d in xml.split("<duration>").skip(1) {
        assert!(d.split('<').next().unwrap().parse::<i64>().is_ok());
    }
    assert!(parse(xml.as_bytes()).unwrap().score.content_eq(&f));
}

#[test]
fn serialization_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let f = random_score(&mut rng, 8);
    assert_eq!(serialize(&f).unwrap(), serialize(&f.clone()).unwrap());
}

#[test]
fn random_scores_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..60 {
        let f = random_score(&mut rng, 1 + i % 16);
        assert!(validate(&f).is_empty());
        let xml = serialize(&f).unwrap();
        let r = parse(&xml).unwrap();
        assert!(r.score.content_eq(&f), "musicxml round trip {i}");
        assert!(r.warnings.is_empty(), "{i}: {:?}", r.warnings);
        let t = tokenize(&f).unwrap();
        let d = detokenize(&t).unwrap();
        assert!(d.warnings.is_empty(), "{i}: {:?}", d.warnings);
        assert!(d.fragment.content_eq(&f), "token round trip {i}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn round_trip_property(seed in any::<u64>(), measures in 1usize..17) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_score(&mut rng, measures);
        let back = parse(&serialize(&f).unwrap()).unwrap().score;
        prop_assert!(back.content_eq(&f));
        let tokens = tokenize(&f).unwrap();
        prop_assert!(detokenize(&tokens).unwrap().fragment.content_eq(&f));
    }

    #[test]
    fn parse_never_returns_invalid(seed in any::<u64>()) {
        // drop random lines of a valid document; whatever parses must validate
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_score(&mut rng, 3);
        let xml = String::from_utf8(serialize(&f).unwrap()).unwrap();
        let lines: Vec<&str> = xml.lines().collect();
        let drop = (seed as usize) % lines.len();
        let mutated: String = lines.iter().enumerate().filter(|(i, _)| *i != drop).map(|(_, l)| *l).collect::<Vec<_>>().join("\n");
        if let Ok(r) = parse(mutated.as_bytes()) {
            prop_assert!(validate(&r.score).is_empty());
            let by_measure: BTreeMap<usize, usize> = r.warnings.iter().fold(BTreeMap::new(), |mut m, w| { *m.entry(w.measure).or_default() += 1; m });
            prop_assert!(by_measure.keys().all(|&m| m < r.score.measures.len().max(1)));
        }
    }
}
