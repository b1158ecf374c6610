use serde::{Deserialize, Serialize};

use super::{DifficultyError, NUM_FEATURES};

/// Per-feature min-max scaling fitted on training descriptors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub min: [f64; NUM_FEATURES],
    pub max: [f64; NUM_FEATURES],
}

impl Normalizer {
    pub fn fit(rows: &[[f64; NUM_FEATURES]]) -> Result<Normalizer, DifficultyError> {
        if rows.len() < 2 {
            return Err(DifficultyError::InsufficientData(rows.len()));
        }
        let mut min = [f64::INFINITY; NUM_FEATURES];
        let mut max = [f64::NEG_INFINITY; NUM_FEATURES];
        for r in rows {
            for j in 0..NUM_FEATURES {
                min[j] = min[j].min(r[j]);
                max[j] = max[j].max(r[j]);
            }
        }
        Ok(Normalizer { min, max })
    }

    /// Scales into [0, 1] with clamping; a constant feature maps to 0.5.
    pub fn apply(&self, v: &[f64; NUM_FEATURES]) -> [f64; NUM_FEATURES] {
        std::array::from_fn(|j| {
            let span = self.max[j] - self.min[j];
            if span > 0.0 {
                ((v[j] - self.min[j]) / span).clamp(0.0, 1.0)
            } else {
                0.5
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn boundaries_and_clamp() {
        let mut a = [0.0; NUM_FEATURES];
        let mut b = [0.0; NUM_FEATURES];
        a[0] = 2.0;
        b[0] = 6.0;
        let n = Normalizer::fit(&[a, b]).unwrap();
        let mut v = [0.0; NUM_FEATURES];
        v[0] = 2.0;
        assert_eq!(n.apply(&v)[0], 0.0);
        v[0] = 4.0;
        assert_eq!(n.apply(&v)[0], 0.5);
        v[0] = 9.0;
        assert_eq!(n.apply(&v)[0], 1.0);
        v[0] = -1.0;
        assert_eq!(n.apply(&v)[0], 0.0);
        assert_eq!(n.apply(&v)[1], 0.5);
    }

    #[test]
    fn needs_two_rows() {
        assert_eq!(Normalizer::fit(&[[0.0; NUM_FEATURES]]), Err(DifficultyError::InsufficientData(1)));
    }
}
