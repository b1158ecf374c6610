use num_traits::Float;
use serde::{Deserialize, Serialize};

use super::DifficultyError;

/// Gaussian naive Bayes with per-class, per-feature variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianNb<T> {
    pub priors: Vec<T>,
    pub means: Vec<Vec<T>>,
    pub variances: Vec<Vec<T>>,
    pub epsilon: T,
}

fn t<T: Float>(v: f64) -> T {
    T::from(v).unwrap()
}

impl<T: Float> GaussianNb<T> {
    pub fn num_classes(&self) -> usize {
        self.priors.len()
    }

    pub fn num_features(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    /// Priors are class frequencies; means and population variances per class
    /// and feature, floored at `1e-9` times the largest feature variance of
    /// the pooled data (or `1e-9` when every feature is constant).
    pub fn fit<R: AsRef<[T]>>(x: &[R], y: &[usize], n_classes: usize) -> Result<Self, DifficultyError> {
        assert_eq!(x.len(), y.len(), "one label per row");
        let d = x.first().map_or(0, |r| r.as_ref().len());
        let mut counts = vec![0usize; n_classes];
        for &c in y {
            counts[c] += 1;
        }
        if let Some((class, &count)) = counts.iter().enumerate().find(|(_, &n)| n < 2) {
            return Err(DifficultyError::ClassTooSmall { class, count });
        }

        let max_var = (0..d)
            .map(|j| variance(x.iter().map(|r| r.as_ref()[j])))
            .fold(T::zero(), T::max);
        let epsilon = if max_var > T::zero() { t::<T>(1e-9) * max_var } else { t(1e-9) };

        let n = t::<T>(y.len() as f64);
        let mut priors = Vec::with_capacity(n_classes);
        let mut means = Vec::with_capacity(n_classes);
        let mut variances = Vec::with_capacity(n_classes);
        for (c, &count) in counts.iter().enumerate() {
            priors.push(t::<T>(count as f64) / n);
            let rows: Vec<&[T]> = x.iter().zip(y).filter(|(_, &l)| l == c).map(|(r, _)| r.as_ref()).collect();
            means.push((0..d).map(|j| mean(rows.iter().map(|r| r[j]))).collect());
            variances.push((0..d).map(|j| variance(rows.iter().map(|r| r[j])).max(epsilon)).collect());
        }
        Ok(GaussianNb { priors, means, variances, epsilon })
    }

    /// Unnormalized `log pi_c + sum_f log N(v_f; mu_cf, var_cf)` per class.
    pub fn joint_log_likelihood(&self, v: &[T]) -> Vec<T> {
        let half = t::<T>(0.5);
        let two_pi = t::<T>(2.0 * std::f64::consts::PI);
        (0..self.num_classes())
            .map(|c| {
                let mut s = self.priors[c].ln();
                for (j, &x) in v.iter().enumerate() {
                    let var = self.variances[c][j];
                    let diff = x - self.means[c][j];
                    s = s - half * (two_pi * var).ln() - diff * diff / (t::<T>(2.0) * var);
                }
                s
            })
            .collect()
    }

    /// Log-posterior per class, normalized with log-sum-exp.
    pub fn log_posterior(&self, v: &[T]) -> Vec<T> {
        let jll = self.joint_log_likelihood(v);
        let m = jll.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = m + jll.iter().map(|&s| (s - m).exp()).fold(T::zero(), |a, b| a + b).ln();
        jll.into_iter().map(|s| s - lse).collect()
    }

    /// Most probable class; ties go to the lower index.
    pub fn predict(&self, v: &[T]) -> usize {
        argmax(&self.joint_log_likelihood(v))
    }
}

pub(crate) fn argmax<T: PartialOrd + Copy>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn mean<T: Float>(xs: impl Iterator<Item = T>) -> T {
    let (s, n) = xs.fold((T::zero(), 0usize), |(s, n), x| (s + x, n + 1));
    s / t(n as f64)
}

fn variance<T: Float>(xs: impl Iterator<Item = T> + Clone) -> T {
    let m = mean(xs.clone());
    mean(xs.map(|x| (x - m) * (x - m)))
}
