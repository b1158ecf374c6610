//! Dataset construction: segmentation into fixed-length fragments,
//! tritone transposition, labeling, piece-level splitting and balancing.

use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::difficulty::{extract_descriptors, DifficultyLabel, Labeler, NUM_FEATURES};
use crate::score::{Measure, Pitch, ScoreFragment, Step};
use crate::tokenizer::{tokenize, TokenSequence};
use crate::Warning;

pub const FRAGMENT_MEASURES: usize = 16;
pub const MANIFEST_FORMAT: &str = "sightgen-manifest";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CorpusError {
    #[error("need at least 3 source pieces, got {0}")]
    TooFewSources(usize),
    #[error("class {0} has no training fragments")]
    EmptySplit(DifficultyLabel),
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
}

/// Cuts a piece into consecutive non-overlapping windows of `len` measures,
/// dropping a shorter remainder. Onsets are rebased to each window start and
/// ties leaving a window are cut; each cut is reported.
pub fn segment_with(s: &ScoreFragment, len: usize) -> (Vec<ScoreFragment>, Vec<Warning>) {
    let starts = s.measure_starts();
    let mut out = Vec::new();
    let mut warnings = Vec::new();
    for w in 0..s.measures.len() / len.max(1) {
        let first = w * len;
        let offset = starts[first];
        let measures: Vec<Measure> = s.measures[first..first + len]
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let mut m = m.clone();
                m.index = i;
                for e in &mut m.events {
                    e.onset -= offset;
                }
                m
            })
            .collect();
        let mut f = ScoreFragment { measures, divisions: s.divisions, title: s.title.clone(), source_id: s.source_id.clone() };
        for mi in f.normalize_ties() {
            warnings.push(Warning::new(first + mi, "tie across the fragment boundary cut"));
        }
        out.push(f);
    }
    (out, warnings)
}

pub fn segment(s: &ScoreFragment) -> (Vec<ScoreFragment>, Vec<Warning>) {
    segment_with(s, FRAGMENT_MEASURES)
}

/// Key shift in fifths for a tritone transposition of `key`: whichever of
/// +6 and -6 lands closer to C, preferring -6 (flats) on a tie.
pub fn tritone_fifths(key: i8) -> i32 {
    let (up, down) = (key as i32 + 6, key as i32 - 6);
    if up.abs() < down.abs() {
        6
    } else {
        -6
    }
}

fn respell(p: Pitch, fifths: i32, semitones: i32) -> Option<Pitch> {
    let lof = p.line_of_fifths() + fifths;
    let step = Step::from_fifths(lof);
    let alter = (lof - step.fifths()) / 7;
    if alter.abs() >= 2 {
        return None;
    }
    let target = p.midi_number() + semitones;
    let octave = (target - step.semitone() - alter).div_euclid(12) - 1;
    let q = Pitch::new(step, alter as i8, i8::try_from(octave).ok()?);
    (q.is_valid() && q.midi_number() == target).then_some(q)
}

/// Transposes by a tritone (`semitones` is +6 or -6). Each measure's key moves
/// six fifths toward C and every pitch is respelled along the same interval.
/// Returns `None` (discarded) if any pitch would need a double accidental or
/// leave the keyboard range.
pub fn transpose(f: &ScoreFragment, semitones: i32) -> Option<ScoreFragment> {
    assert!(semitones == 6 || semitones == -6, "only tritone transpositions are supported");
    let mut out = f.clone();
    for m in &mut out.measures {
        let shift = tritone_fifths(m.key_fifths);
        m.key_fifths = (m.key_fifths as i32 + shift) as i8;
        for e in &mut m.events {
            if let crate::score::Content::Notes(ps) = &mut e.content {
                for p in ps.iter_mut() {
                    *p = respell(*p, shift, semitones)?;
                }
                ps.sort();
            }
        }
    }
    Some(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub start_measure: usize,
    pub transpose: i32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FragmentRecord {
    pub fragment: ScoreFragment,
    pub tokens: TokenSequence,
    pub raw_descriptors: [f64; NUM_FEATURES],
    pub descriptors: [f64; NUM_FEATURES],
    pub label: DifficultyLabel,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<FragmentRecord>,
    pub validation: Vec<FragmentRecord>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub min_count: u64,
    pub seed: u64,
    pub split_ratio: f64,
    pub augment: bool,
    pub balance: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig { min_count: 50, seed: 0, split_ratio: 0.8, augment: true, balance: true }
    }
}

/// A parsed source piece.
#[derive(Debug, Clone, PartialEq)]
pub struct SourcePiece {
    pub id: String,
    pub score: ScoreFragment,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BuildLog {
    /// Source id and warning.
    pub warnings: Vec<(String, Warning)>,
    pub discarded_transpositions: usize,
    pub untokenizable: usize,
    /// Train class counts before balancing.
    pub train_counts: [usize; DifficultyLabel::COUNT],
}

fn make_record(
    fragment: ScoreFragment,
    provenance: Provenance,
    labeler: &Labeler,
) -> Result<FragmentRecord, crate::tokenizer::TokenizeError> {
    let tokens = tokenize(&fragment)?;
    let raw = extract_descriptors(&fragment);
    Ok(FragmentRecord {
        tokens,
        raw_descriptors: raw.0,
        descriptors: labeler.normalize(&raw),
        label: labeler.label(&raw),
        fragment,
        provenance,
    })
}

fn process_piece(piece: &SourcePiece, train: bool, augment: bool, labeler: &Labeler) -> (Vec<FragmentRecord>, BuildLog) {
    let mut log = BuildLog::default();
    let (fragments, warnings) = segment(&piece.score);
    log.warnings.extend(warnings.into_iter().map(|w| (piece.id.clone(), w)));
    let mut records = Vec::new();
    for (w, f) in fragments.into_iter().enumerate() {
        let start = w * FRAGMENT_MEASURES;
        let mut variants = vec![(0, Some(f.clone()))];
        if train && augment {
            variants.push((-6, transpose(&f, -6)));
            variants.push((6, transpose(&f, 6)));
        }
        for (semitones, v) in variants {
            let Some(v) = v else {
                log.discarded_transpositions += 1;
                continue;
            };
            let prov = Provenance { source: piece.id.clone(), start_measure: start, transpose: semitones };
            match make_record(v, prov, labeler) {
                Ok(r) => records.push(r),
                Err(e) => {
                    log.untokenizable += 1;
                    log.warnings.push((piece.id.clone(), Warning::new(start, format!("fragment skipped: {}", e))));
                }
            }
        }
    }
    (records, log)
}

/// Piece indices assigned to the training side: a seeded shuffle with
/// `round(n * ratio)` pieces (at least one on each side) for training.
pub fn split_pieces(n: usize, ratio: f64, seed: u64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64 * ratio).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let mut is_train = vec![false; n];
    for &i in &order[..n_train] {
        is_train[i] = true;
    }
    is_train
}

/// Downsamples every class to the minority count, keeping the original order
/// of the survivors.
pub fn balance<T>(items: Vec<T>, label: impl Fn(&T) -> DifficultyLabel, seed: u64) -> Result<Vec<T>, CorpusError> {
    let mut by_class: BTreeMap<DifficultyLabel, Vec<usize>> = BTreeMap::new();
    for (i, it) in items.iter().enumerate() {
        by_class.entry(label(it)).or_default().push(i);
    }
    for l in DifficultyLabel::ALL {
        if !by_class.contains_key(&l) {
            return Err(CorpusError::EmptySplit(l));
        }
    }
    let min = by_class.values().map(Vec::len).min().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; items.len()];
    for idxs in by_class.values() {
        let mut chosen = index::sample(&mut rng, idxs.len(), min).into_vec();
        chosen.sort_unstable();
        for c in chosen {
            keep[idxs[c]] = true;
        }
    }
    Ok(items.into_iter().zip(keep).filter(|(_, k)| *k).map(|(it, _)| it).collect())
}

/// Segment, augment the training pieces with both tritone transpositions,
/// tokenize, describe, label, split by piece, and balance the training side.
/// Per-piece work runs in parallel; the result is independent of the thread
/// count.
pub fn build_dataset(sources: &[SourcePiece], labeler: &Labeler, cfg: &DatasetConfig) -> Result<(DatasetSplit, BuildLog), CorpusError> {
    if sources.len() < 3 {
        return Err(CorpusError::TooFewSources(sources.len()));
    }
    let is_train = split_pieces(sources.len(), cfg.split_ratio, cfg.seed);
    let results: Vec<(Vec<FragmentRecord>, BuildLog)> = sources
        .par_iter()
        .zip(is_train.par_iter())
        .map(|(p, &t)| process_piece(p, t, cfg.augment, labeler))
        .collect();

    let mut log = BuildLog::default();
    let mut train = Vec::new();
    let mut validation = Vec::new();
    for ((records, l), &t) in results.into_iter().zip(&is_train) {
        log.warnings.extend(l.warnings);
        log.discarded_transpositions += l.discarded_transpositions;
        log.untokenizable += l.untokenizable;
        if t {
            train.extend(records);
        } else {
            validation.extend(records);
        }
    }
    train.sort_by(|a, b| a.provenance.cmp(&b.provenance));
    validation.sort_by(|a, b| a.provenance.cmp(&b.provenance));
    for r in &train {
        log.train_counts[r.label.index()] += 1;
    }
    let train = if cfg.balance {
        balance(train, |r| r.label, cfg.seed)?
    } else {
        if let Some(l) = DifficultyLabel::ALL.into_iter().find(|l| log.train_counts[l.index()] == 0) {
            return Err(CorpusError::EmptySplit(l));
        }
        train
    };
    Ok((DatasetSplit { train, validation, seed: cfg.seed }, log))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Validation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestHeader {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub train: usize,
    pub validation: usize,
}

/// One manifest line: token text, normalized features, label, provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub split: SplitName,
    pub source: String,
    pub start_measure: usize,
    pub transpose: i32,
    pub label: DifficultyLabel,
    pub features: [f64; NUM_FEATURES],
    pub tokens: String,
}

impl ManifestRecord {
    pub fn from_record(split: SplitName, r: &FragmentRecord) -> Self {
        ManifestRecord {
            split,
            source: r.provenance.source.clone(),
            start_measure: r.provenance.start_measure,
            transpose: r.provenance.transpose,
            label: r.label,
            features: r.descriptors,
            tokens: r.tokens.to_text(),
        }
    }

    pub fn token_sequence(&self) -> TokenSequence {
        TokenSequence::from_text(&self.tokens)
    }
}

pub fn write_manifest(split: &DatasetSplit) -> String {
    let header = ManifestHeader {
        format: MANIFEST_FORMAT.into(),
        version: MANIFEST_VERSION,
        seed: split.seed,
        train: split.train.len(),
        validation: split.validation.len(),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for (name, records) in [(SplitName::Train, &split.train), (SplitName::Validation, &split.validation)] {
        for r in records {
            out.push_str(&serde_json::to_string(&ManifestRecord::from_record(name, r)).expect("record serializes"));
            out.push('\n');
        }
    }
    out
}

pub fn read_manifest(text: &str) -> Result<(ManifestHeader, Vec<ManifestRecord>), CorpusError> {
    let err = |line: usize, message: String| CorpusError::Manifest { line, message };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or_else(|| err(1, "empty manifest".into()))?;
    let header: ManifestHeader = serde_json::from_str(first).map_err(|e| err(1, e.to_string()))?;
    if header.format != MANIFEST_FORMAT || header.version != MANIFEST_VERSION {
        return Err(err(1, format!("unsupported manifest {} v{}", header.format, header.version)));
    }
    let records = lines
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| err(i + 1, e.to_string())))
        .collect::<Result<Vec<ManifestRecord>, _>>()?;
    Ok((header, records))
}

/// Class-conditional mean of normalized features over training records.
pub fn class_means<'a>(records: impl IntoIterator<Item = (&'a [f64; NUM_FEATURES], DifficultyLabel)>) -> [[f64; NUM_FEATURES]; 3] {
    let mut sums = [[0.0; NUM_FEATURES]; 3];
    let mut counts = [0usize; 3];
    for (f, l) in records {
        counts[l.index()] += 1;
        for j in 0..NUM_FEATURES {
            sums[l.index()][j] += f[j];
        }
    }
    for c in 0..3 {
        if counts[c] > 0 {
            for v in &mut sums[c] {
                *v /= counts[c] as f64;
            }
        }
    }
    sums
}
