use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Example, ModelConfig, NnError, Transformer};
use crate::scalar::Scalar;
use crate::tokenizer::{END_ID, SEP_ID};

pub const FD_STEP: f64 = 1e-3;

/// Standard deviation of the noise added to a fresh initialization so the
/// check runs away from the degenerate small-weight regime.
pub const PARAM_NOISE: f64 = 0.1;

/// Entries where both gradients are below this magnitude are zero
/// directions (the key bias, for one, cannot change attention weights) and
/// are compared absolutely.
pub const ZERO_GUARD: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckCase {
    pub beta: f64,
    pub detach: bool,
    /// `|a - n| / max(|a|, |n|)` over the whole gradient vector.
    pub rel_error: f64,
    /// Largest per-entry relative error, for diagnostics.
    pub max_entry_rel_error: f64,
    pub worst_entry: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub precision: String,
    pub tolerance: f64,
    /// Largest gradient-vector relative error over all cases.
    pub max_rel_error: f64,
    /// Largest absolute error over zero-direction entries.
    pub max_abs_error_guarded: f64,
    pub checked: usize,
    pub guarded: usize,
    pub cases: Vec<GradCheckCase>,
    pub passed: bool,
}

fn param_mut(m: &mut Transformer<f64>, group: usize, ti: usize, i: usize) -> &mut f64 {
    let set = if group == 0 { &mut m.lm } else { &mut m.aux };
    &mut set.tensors[ti].data[i]
}

/// A random batch shaped like training data: prompt, SEP, body, END.
pub fn random_batch<R: Rng>(rng: &mut R, cfg: &ModelConfig, size: usize) -> Vec<Example> {
    let v = cfg.vocab_size as u32;
    (0..size)
        .map(|_| {
            let len = rng.gen_range(5..=cfg.max_len.max(5));
            let sep = rng.gen_range(1..len - 2);
            let ids: Vec<u32> = (0..len)
                .map(|t| match t {
                    _ if t == sep => SEP_ID,
                    _ if t == len - 1 => END_ID,
                    _ => rng.gen_range(4..v),
                })
                .collect();
            Example::new(ids, rng.gen_range(0..cfg.num_classes)).unwrap()
        })
        .collect()
}

/// Compares analytic gradients (computed at precision `T`) against f64
/// central differences over every parameter, for both detach modes and beta
/// in {0, 0.1, 1}. When detached, the language-model gradient is that of the
/// CE term alone, so that is what the differences of those entries measure.
pub fn grad_check<T: Scalar>(cfg: &ModelConfig, tolerance: f64, seed: u64) -> Result<GradCheckReport, NnError> {
    let mut cfg = cfg.clone();
    cfg.dropout = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, PARAM_NOISE).unwrap();
    let mut cases = Vec::new();
    let (mut checked, mut guarded, mut max_abs) = (0, 0, 0.0f64);
    for detach in [true, false] {
        for beta in [0.0, 0.1, 1.0] {
            let mut point = Transformer::<f64>::new(cfg.clone(), rng.gen())?;
            for t in point.lm.tensors.iter_mut().chain(point.aux.tensors.iter_mut()) {
                for x in &mut t.data {
                    *x += noise.sample(&mut rng);
                }
            }
            let model: Transformer<T> = point.cast();
            let mut probe: Transformer<f64> = model.cast();
            let batch = random_batch(&mut rng, &cfg, 3);
            let (_, grads) = model.batch_gradients(&batch, beta, detach, None)?;
            let mut case = GradCheckCase { beta, detach, rel_error: 0.0, max_entry_rel_error: 0.0, worst_entry: String::new() };
            let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
            for group in 0..2 {
                let lm_beta = if group == 0 && detach { 0.0 } else { beta };
                let n_tensors = if group == 0 { probe.lm.tensors.len() } else { probe.aux.tensors.len() };
                for ti in 0..n_tensors {
                    let (name, len) = {
                        let t = if group == 0 { &probe.lm.tensors[ti] } else { &probe.aux.tensors[ti] };
                        (t.name.clone(), t.data.len())
                    };
                    for i in 0..len {
                        let orig = *param_mut(&mut probe, group, ti, i);
                        *param_mut(&mut probe, group, ti, i) = orig + FD_STEP;
                        let up = probe.batch_loss(&batch, lm_beta)?;
                        *param_mut(&mut probe, group, ti, i) = orig - FD_STEP;
                        let down = probe.batch_loss(&batch, lm_beta)?;
                        *param_mut(&mut probe, group, ti, i) = orig;
                        let numeric = (up - down) / (2.0 * FD_STEP);
                        let g = if group == 0 { &grads.lm.tensors[ti] } else { &grads.aux.tensors[ti] };
                        let analytic = g.data[i].as_f64();
                        let err = (analytic - numeric).abs();
                        diff2 += err * err;
                        a2 += analytic * analytic;
                        n2 += numeric * numeric;
                        checked += 1;
                        let scale = analytic.abs().max(numeric.abs());
                        if scale < ZERO_GUARD {
                            guarded += 1;
                            max_abs = max_abs.max(err);
                        } else if err / scale > case.max_entry_rel_error {
                            case.max_entry_rel_error = err / scale;
                            case.worst_entry = format!("{name}[{i}]");
                        }
                    }
                }
            }
            let scale = f64::max(a2, n2).sqrt();
            case.rel_error = if scale == 0.0 { 0.0 } else { diff2.sqrt() / scale };
            if scale == 0.0 {
                max_abs = max_abs.max(diff2.sqrt());
            }
            cases.push(case);
        }
    }
    let max_rel_error = cases.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        precision: std::any::type_name::<T>().to_string(),
        tolerance,
        max_rel_error,
        max_abs_error_guarded: max_abs,
        checked,
        guarded,
        passed: max_rel_error < tolerance,
        cases,
    })
}
