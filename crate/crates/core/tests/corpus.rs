mod common;

use std::collections::BTreeSet;

use common::{p, q, two_hands, whole_notes};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sightgen::corpus::{
    balance, build_dataset, read_manifest, segment, transpose, tritone_fifths, write_manifest, CorpusError, DatasetConfig,
    SourcePiece, SplitName,
};
use sightgen::difficulty::{extract_descriptors, DifficultyLabel, Labeler};
use sightgen::score::{validate, ScoreFragment};
use sightgen::synth::exercise_piece;
use sightgen::tokenizer::detokenize;

fn rh_pitches(f: &ScoreFragment) -> Vec<String> {
    f.events().filter(|e| e.staff == 1).flat_map(|e| e.content.pitches().iter().map(|p| p.spelling())).collect()
}

#[test]
fn segmentation_windows() {
    for (n, expected) in [(35, 2), (16, 1), (15, 0), (32, 2), (0, 0)] {
        let piece = whole_notes(n, 0, "C4", "C3");
        let (frags, warnings) = segment(&piece);
        assert_eq!(frags.len(), expected, "{n} measures");
        assert!(warnings.is_empty());
        for f in &frags {
            assert_eq!(f.measures.len(), 16);
            assert!(validate(f).is_empty());
            assert_eq!(f.total_quarters(), q(64, 1));
        }
    }
    // a 16-measure piece is its own single window
    let piece = whole_notes(16, 2, "D4", "D3");
    assert_eq!(segment(&piece).0, vec![piece]);
}

#[test]
fn second_window_is_rebased() {
    let mut rh: Vec<(&[&str], _)> = vec![(&["C4"][..], q(4, 1)); 16];
    rh.extend(vec![(&["G4"][..], q(4, 1)); 16]);
    let lh = vec![(&[][..], q(4, 1)); 32];
    let (frags, _) = segment(&two_hands(0, &rh, &lh));
    assert_eq!(frags.len(), 2);
    let first = frags[1].measures[0].events.iter().find(|e| e.staff == 1).unwrap();
    assert_eq!(first.onset, q(0, 1));
    assert_eq!(first.content.pitches(), &[p("G4")]);
    assert_eq!(frags[1].measures[0].index, 0);
}

#[test]
fn tie_across_boundary_is_cut_with_warning() {
    let mut piece = whole_notes(32, 0, "C4", "C3");
    let last = piece.measures[15].events.iter_mut().find(|e| e.staff == 1).unwrap();
    last.tie_start = true;
    let next = piece.measures[16].events.iter_mut().find(|e| e.staff == 1).unwrap();
    next.tie_stop = true;
    assert!(validate(&piece).is_empty());
    let (frags, warnings) = segment(&piece);
    assert_eq!(frags.len(), 2);
    assert!(!warnings.is_empty());
    assert!(frags.iter().flat_map(|f| f.events()).all(|e| !e.tie_start && !e.tie_stop));
}

#[test]
fn key_shift_sign() {
    assert_eq!(tritone_fifths(0), -6);
    assert_eq!(tritone_fifths(6), -6);
    assert_eq!(tritone_fifths(-6), 6);
    assert_eq!(tritone_fifths(1), -6);
    assert_eq!(tritone_fifths(-1), 6);
    for k in -7i8..=7 {
        let shifted = k as i32 + tritone_fifths(k);
        assert!(shifted.abs() <= 6, "key {k}");
        assert!(shifted.abs() <= (k as i32 - tritone_fifths(k)).abs());
    }
}

/// Line-of-fifths oracle: a tritone moves a pitch six fifths along the line,
/// so the new spelling is the old one plus or minus six fifths, and the
/// octave follows from the semitone count.
fn oracle(spelling: &str, key: i8, semitones: i32) -> Option<String> {
    const LINE: [char; 7] = ['F', 'C', 'G', 'D', 'A', 'E', 'B'];
    let pitch = p(spelling);
    let lof = LINE.iter().position(|&c| c == pitch.step.as_char()).unwrap() as i32 - 1 + 7 * pitch.alter as i32;
    let shift = if (key as i32 + 6).abs() < (key as i32 - 6).abs() { 6 } else { -6 };
    let target = lof + shift;
    let idx = (target + 1).rem_euclid(7);
    let alter = (target + 1).div_euclid(7);
    if alter.abs() >= 2 {
        return None;
    }
    let step = LINE[idx as usize];
    let base = match step {
        'C' => 0,
        'D' => 2,
        'E' => 4,
        'F' => 5,
        'G' => 7,
        'A' => 9,
        _ => 11,
    };
    let midi = pitch.midi_number() + semitones;
    let octave = (midi - base - alter) / 12 - 1;
    let acc = match alter {
        -1 => "b",
        1 => "#",
        _ => "",
    };
    Some(format!("{step}{acc}{octave}"))
}

#[test]
fn transposition_examples() {
    let f = whole_notes(1, 0, "C4", "C3");
    let up = transpose(&f, 6).unwrap();
    assert_eq!(up.measures[0].key_fifths, -6);
    assert_eq!(rh_pitches(&up), vec!["Gb4"]);

    let f = whole_notes(1, 6, "F#4", "F#3");
    let up = transpose(&f, 6).unwrap();
    assert_eq!(up.measures[0].key_fifths, 0);
    assert_eq!(rh_pitches(&up), vec!["C5"]);

    // D# moves six fifths flatward to A natural
    let f = whole_notes(1, 0, "D#4", "C3");
    let up = transpose(&f, 6).unwrap();
    assert_eq!(rh_pitches(&up), vec!["A4"]);
    assert_eq!(up.measures[0].events.iter().find(|e| e.staff == 1).unwrap().content.pitches()[0].midi_number(), 69);

    // Fb would need B double-flat
    assert!(transpose(&whole_notes(1, 0, "Fb4", "C3"), 6).is_none());
    assert!(transpose(&whole_notes(1, 0, "Fb4", "C3"), -6).is_none());
    // Cb in Gb major goes up to F, not E#
    let down = transpose(&whole_notes(1, -6, "Cb5", "Gb3"), -6).unwrap();
    assert_eq!(down.measures[0].key_fifths, 0);
    assert_eq!(rh_pitches(&down), vec!["F4"]);
}

#[test]
fn transposition_matches_oracle() {
    let names = ["C", "D", "E", "F", "G", "A", "B"];
    let accs = ["b", "", "#"];
    for key in -7i8..=7 {
        for n in names {
            for a in accs {
                for semis in [6, -6] {
                    let s = format!("{n}{a}4");
                    let out = transpose(&whole_notes(1, key, &s, "C3"), semis);
                    let expected = oracle(&s, key, semis);
                    match (out, expected) {
                        (Some(f), Some(e)) => {
                            assert_eq!(rh_pitches(&f), vec![e.clone()], "{s} key {key} {semis}");
                            assert_eq!(f.measures[0].key_fifths as i32, key as i32 + tritone_fifths(key));
                        }
                        (None, None) => {}
                        (o, e) => panic!("{s} key {key} {semis}: {:?} vs {e:?}", o.map(|f| rh_pitches(&f))),
                    }
                }
            }
        }
    }
}

#[test]
fn transposition_keeps_rhythm_and_shifts_every_pitch() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut kept = 0;
    for i in 0..100 {
        let f = exercise_piece(&mut rng, DifficultyLabel::ALL[i % 3], 4);
        for s in [6, -6] {
            let Some(t) = transpose(&f, s) else { continue };
            kept += 1;
            assert!(validate(&t).is_empty());
            for (a, b) in f.events().zip(t.events()) {
                assert_eq!((a.onset, a.duration, a.voice, a.staff), (b.onset, b.duration, b.voice, b.staff));
                let am: Vec<i32> = a.content.pitches().iter().map(|p| p.midi_number() + s).collect();
                let bm: Vec<i32> = b.content.pitches().iter().map(|p| p.midi_number()).collect();
                assert_eq!(am, bm);
                assert!(b.content.pitches().iter().all(|p| p.alter.abs() < 2));
            }
        }
    }
    assert!(kept >= 50, "{kept}");
}

#[test]
fn balance_downsamples_to_minority() {
    let mut items = Vec::new();
    for (label, n) in [(DifficultyLabel::Easy, 100), (DifficultyLabel::Medium, 50), (DifficultyLabel::Advanced, 20)] {
        items.extend((0..n).map(|i| (label, i)));
    }
    let out = balance(items.clone(), |x| x.0, 7).unwrap();
    for l in DifficultyLabel::ALL {
        assert_eq!(out.iter().filter(|x| x.0 == l).count(), 20);
    }
    // survivors stay in input order
    let pos: Vec<usize> = out.iter().map(|x| items.iter().position(|y| y == x).unwrap()).collect();
    assert!(pos.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(out, balance(items.clone(), |x| x.0, 7).unwrap());
    assert_ne!(out, balance(items.clone(), |x| x.0, 8).unwrap());
    let no_adv: Vec<_> = items.into_iter().filter(|x| x.0 != DifficultyLabel::Advanced).collect();
    assert_eq!(balance(no_adv, |x| x.0, 0), Err(CorpusError::EmptySplit(DifficultyLabel::Advanced)));
}

fn labeler() -> Labeler {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut raw, mut y) = (Vec::new(), Vec::new());
    for i in 0..90 {
        let c = DifficultyLabel::ALL[i % 3];
        raw.push(extract_descriptors(&exercise_piece(&mut rng, c, 16)).0);
        y.push(c);
    }
    Labeler::fit(&raw, &y).unwrap()
}

fn sources(n: usize, bars: usize) -> Vec<SourcePiece> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    (0..n)
        .map(|i| SourcePiece { id: format!("piece{i:03}"), score: exercise_piece(&mut rng, DifficultyLabel::ALL[i % 3], bars) })
        .collect()
}

#[test]
fn dataset_is_deterministic_and_split_by_piece() {
    let lab = labeler();
    let src = sources(24, 40);
    let cfg = DatasetConfig { seed: 4, ..Default::default() };
    let (a, _) = build_dataset(&src, &lab, &cfg).unwrap();
    let (b, _) = build_dataset(&src, &lab, &cfg).unwrap();
    let text = write_manifest(&a);
    assert_eq!(text, write_manifest(&b));
    let (other, _) = build_dataset(&src, &lab, &DatasetConfig { seed: 5, ..cfg.clone() }).unwrap();
    assert_ne!(text, write_manifest(&other));

    let train: BTreeSet<&str> = a.train.iter().map(|r| r.provenance.source.as_str()).collect();
    let val: BTreeSet<&str> = a.validation.iter().map(|r| r.provenance.source.as_str()).collect();
    assert!(!train.is_empty() && !val.is_empty());
    assert!(train.is_disjoint(&val));
    assert!(a.validation.iter().all(|r| r.provenance.transpose == 0));

    let counts: Vec<usize> = DifficultyLabel::ALL.iter().map(|&l| a.train.iter().filter(|r| r.label == l).count()).collect();
    assert!(counts.iter().all(|&c| c == counts[0] && c > 0), "{counts:?}");

    let (header, records) = read_manifest(&text).unwrap();
    assert_eq!((header.train, header.validation), (a.train.len(), a.validation.len()));
    assert_eq!(records.iter().filter(|r| r.split == SplitName::Train).count(), a.train.len());
    for (m, r) in records.iter().zip(a.train.iter().chain(&a.validation)) {
        assert_eq!(m.token_sequence(), r.tokens);
        assert_eq!(m.features, r.descriptors);
    }
}

#[test]
fn records_are_consistent() {
    let lab = labeler();
    let (split, _) = build_dataset(&sources(9, 32), &lab, &DatasetConfig::default()).unwrap();
    for r in split.train.iter().chain(&split.validation) {
        let back = detokenize(&r.tokens).unwrap();
        assert!(back.warnings.is_empty());
        assert!(back.fragment.content_eq(&r.fragment));
        let raw = extract_descriptors(&r.fragment);
        assert_eq!(raw.0, r.raw_descriptors);
        assert_eq!(lab.label(&raw), r.label);
        assert!(r.descriptors.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn augmentation_at_most_triples() {
    let lab = labeler();
    let src = sources(12, 33);
    let plain = DatasetConfig { augment: false, balance: false, ..Default::default() };
    let aug = DatasetConfig { augment: true, ..plain.clone() };
    let (a, _) = build_dataset(&src, &lab, &plain).unwrap();
    let (b, log) = build_dataset(&src, &lab, &aug).unwrap();
    assert!(b.train.len() > a.train.len());
    assert!(b.train.len() <= 3 * a.train.len());
    assert_eq!(b.train.len() + log.discarded_transpositions + log.untokenizable, 3 * a.train.len());
    assert_eq!(a.validation, b.validation);
    for r in &b.train {
        assert!(r.fragment.events().flat_map(|e| e.content.pitches()).all(|p| p.alter.abs() < 2));
        assert!([-6, 0, 6].contains(&r.provenance.transpose));
    }
}

#[test]
fn too_few_sources() {
    let lab = labeler();
    assert_eq!(build_dataset(&sources(2, 16), &lab, &DatasetConfig::default()), Err(CorpusError::TooFewSources(2)));
}
