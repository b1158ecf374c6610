use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};

use crate::score::{Hand, ScoreFragment};

pub const NUM_FEATURES: usize = 12;

/// Column order shared by descriptor vectors, CSV files, and prompts.
pub const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "pitch_entropy_RH",
    "pitch_entropy_LH",
    "pitch_range_RH",
    "pitch_range_LH",
    "avg_pitch_RH",
    "avg_pitch_LH",
    "displacement_RH",
    "displacement_LH",
    "avg_ioi_RH",
    "avg_ioi_LH",
    "pitch_set_lz_RH",
    "pitch_set_lz_LH",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Feature {
    PitchEntropy,
    PitchRange,
    AvgPitch,
    Displacement,
    AvgIoi,
    PitchSetLz,
}

impl Feature {
    pub const ALL: [Feature; 6] = [
        Feature::PitchEntropy,
        Feature::PitchRange,
        Feature::AvgPitch,
        Feature::Displacement,
        Feature::AvgIoi,
        Feature::PitchSetLz,
    ];

    pub fn column(self, hand: Hand) -> usize {
        2 * self as usize + usize::from(hand == Hand::Lh)
    }
}

/// The twelve raw descriptors, in [`FEATURE_NAMES`] order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescriptorVector(pub [f64; NUM_FEATURES]);

impl DescriptorVector {
    pub fn get(&self, feature: Feature, hand: Hand) -> f64 {
        self.0[feature.column(hand)]
    }
}

impl fmt::Display for DescriptorVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (name, v)) in FEATURE_NAMES.iter().zip(self.0).enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{}={:.4}", name, v)?;
        }
        Ok(())
    }
}

/// Number of phrases in the Lempel-Ziv (1976) parse of `s`, counting a
/// trailing incomplete phrase. Kaspar-Schuster scan.
pub fn lz76<T: Eq>(s: &[T]) -> usize {
    let n = s.len();
    if n <= 1 {
        return n;
    }
    let (mut c, mut l, mut i, mut k, mut kmax) = (1, 1, 0, 1, 1);
    loop {
        if s[i + k - 1] == s[l + k - 1] {
            k += 1;
            if l + k > n {
                c += 1;
                break;
            }
        } else {
            kmax = kmax.max(k);
            i += 1;
            if i == l {
                c += 1;
                l += kmax;
                if l + 1 > n {
                    break;
                }
                i = 0;
                k = 1;
                kmax = 1;
            } else {
                k = 1;
            }
        }
    }
    c
}

fn entropy_bits(values: &[i32]) -> f64 {
    let mut counts: BTreeMap<i32, usize> = BTreeMap::new();
    for &v in values {
        *counts.entry(v).or_default() += 1;
    }
    let n = values.len() as f64;
    -counts.values().map(|&c| c as f64 / n).map(|p| p * p.log2()).sum::<f64>()
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    s / n as f64
}

fn hand_features(f: &ScoreFragment, hand: Hand) -> [f64; 6] {
    let onsets = f.hand_onsets(hand);
    let total = f.total_quarters().to_f64().unwrap_or(0.0);
    if onsets.is_empty() {
        return [0.0, 0.0, 0.0, 0.0, total, 0.0];
    }
    let pitches: Vec<i32> = onsets.iter().flat_map(|(_, s)| s.iter().copied()).collect();
    let lo = *pitches.iter().min().unwrap();
    let hi = *pitches.iter().max().unwrap();
    let centers: Vec<f64> = onsets.iter().map(|(_, s)| mean(s.iter().map(|&p| p as f64))).collect();
    let displacement = if centers.len() < 2 {
        0.0
    } else {
        mean(centers.windows(2).map(|w| (w[1] - w[0]).abs()))
    };
    let avg_ioi = if onsets.len() < 2 {
        total
    } else {
        let span = onsets[onsets.len() - 1].0 - onsets[0].0;
        (span / (onsets.len() as i64 - 1)).to_f64().unwrap_or(0.0)
    };
    let symbols: Vec<u16> = onsets.iter().map(|(_, s)| pitch_class_mask(s)).collect();
    [
        entropy_bits(&pitches),
        (hi - lo) as f64,
        mean(pitches.iter().map(|&p| p as f64)),
        displacement,
        avg_ioi,
        lz76(&symbols) as f64,
    ]
}

fn pitch_class_mask(set: &BTreeSet<i32>) -> u16 {
    set.iter().fold(0, |m, p| m | 1 << p.rem_euclid(12))
}

/// Per-hand descriptors computed over the hand's onset list: entropy (bits)
/// and mean of the MIDI pitch multiset, pitch range, mean absolute movement of
/// the onset pitch-set centers, mean inter-onset interval in quarters, and the
/// LZ76 phrase count of the pitch-class-set sequence. A silent hand is all
/// zeros except its IOI, which is the fragment length; a hand with a single
/// onset also reports the fragment length as its IOI.
pub fn extract_descriptors(f: &ScoreFragment) -> DescriptorVector {
    let mut out = [0.0; NUM_FEATURES];
    for hand in Hand::BOTH {
        for (feature, v) in Feature::ALL.iter().zip(hand_features(f, hand)) {
            out[feature.column(hand)] = v;
        }
    }
    DescriptorVector(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lz76_known_values() {
        assert_eq!(lz76::<u8>(&[]), 0);
        assert_eq!(lz76(b"a"), 1);
        assert_eq!(lz76(b"aaaa"), 2);
        assert_eq!(lz76(b"ab"), 2);
        assert_eq!(lz76(b"abab"), 3);
        // 0 | 001 | 10 | 100 | 1000 | 101
        assert_eq!(lz76(b"0001101001000101"), 6);
    }

    #[test]
    fn entropy_of_uniform() {
        assert!((entropy_bits(&[60, 64, 67]) - 3f64.log2()).abs() < 1e-15);
        assert_eq!(entropy_bits(&[60, 60]), 0.0);
    }

    #[test]
    fn column_layout() {
        for (i, name) in FEATURE_NAMES.iter().enumerate() {
            let f = Feature::ALL[i / 2];
            let hand = if i % 2 == 0 { Hand::Rh } else { Hand::Lh };
            assert_eq!(f.column(hand), i, "{name}");
        }
    }
}
