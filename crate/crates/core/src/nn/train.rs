use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{clip_grad_norm, cosine_lr, AdamW};
use super::{Example, ModelConfig, NnError, Transformer};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the auxiliary difficulty loss.
    pub beta: f64,
    /// Stop the auxiliary gradient at the END hidden state.
    pub detach_aux: bool,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_steps: usize,
    pub weight_decay: f64,
    pub grad_clip: f64,
    /// Evaluate every this many epochs.
    pub eval_every: usize,
    /// Stop after this many consecutive evaluations without improvement.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            beta: 0.1,
            detach_aux: true,
            lr: 1e-3,
            batch_size: 16,
            epochs: 30,
            warmup_steps: 100,
            weight_decay: 0.01,
            grad_clip: 1.0,
            eval_every: 2,
            patience: 2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::InvalidConfig(m.to_string()));
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("beta must be finite and >= 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be > 0");
        }
        if self.epochs == 0 || self.eval_every == 0 || self.patience == 0 {
            return bad("epochs, eval_every and patience must be >= 1");
        }
        Ok(())
    }
}

/// One evaluation of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub epoch: usize,
    pub step: usize,
    pub train_ce: f64,
    pub val_ce: f64,
    pub aux_accuracy: f64,
    pub lr: f64,
    /// External score used for model selection (higher is better).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    /// Validation CE of the kept model after this evaluation.
    pub best_val_ce: f64,
    pub improved: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// The best model seen at an evaluation.
    pub model: Transformer<T>,
    pub log: Vec<EvalRecord>,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub steps: usize,
}

pub type Scorer<'a, T> = &'a mut dyn FnMut(&Transformer<T>) -> f64;

fn mix(seed: u64, step: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (step as u64).wrapping_add(0xD1B5_4A32_D192_ED03)
}

pub fn train<T: Scalar>(
    train_set: &[Example],
    val_set: &[Example],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>, NnError> {
    train_with(train_set, val_set, model_cfg, cfg, None, &mut |_| {})
}

/// Trains from a seeded initialization. With a scorer, model selection and
/// early stopping follow the score instead of validation CE.
pub fn train_with<T: Scalar>(
    train_set: &[Example],
    val_set: &[Example],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    mut scorer: Option<Scorer<'_, T>>,
    on_eval: &mut dyn FnMut(&EvalRecord),
) -> Result<TrainOutcome<T>, NnError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let val_set = if val_set.is_empty() { train_set } else { val_set };
    let mut model = Transformer::<T>::new(model_cfg.clone(), cfg.seed)?;
    let mut opt_lm = AdamW::new(&model.lm, cfg.weight_decay);
    let mut opt_aux = AdamW::new(&model.aux, cfg.weight_decay);
    let steps_per_epoch = train_set.len().div_ceil(cfg.batch_size);
    let total = steps_per_epoch * cfg.epochs;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut log = Vec::new();
    let mut best: Option<(f64, f64, usize, Transformer<T>)> = None;
    let mut stale = 0;
    let mut step = 0;
    let mut lr = cosine_lr(cfg.lr, 0, cfg.warmup_steps, total);
    let (mut ce_sum, mut ce_tokens) = (0.0, 0usize);
    let mut epochs_run = 0;
    for epoch in 1..=cfg.epochs {
        epochs_run = epoch;
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Example> = chunk.iter().map(|&i| train_set[i].clone()).collect();
            let (loss, mut grads) = model.batch_gradients(&batch, cfg.beta, cfg.detach_aux, Some(mix(cfg.seed, step)))?;
            if !loss.total.is_finite() {
                return Err(NnError::NonFiniteLoss { epoch, step, ce: loss.ce, aux: loss.aux });
            }
            clip_grad_norm(&mut grads.lm, cfg.grad_clip);
            clip_grad_norm(&mut grads.aux, cfg.grad_clip);
            lr = cosine_lr(cfg.lr, step, cfg.warmup_steps, total);
            opt_lm.step(&mut model.lm, &grads.lm, lr);
            opt_aux.step(&mut model.aux, &grads.aux, lr);
            ce_sum += loss.ce * loss.tokens as f64;
            ce_tokens += loss.tokens;
            step += 1;
        }
        if epoch % cfg.eval_every != 0 && epoch != cfg.epochs {
            continue;
        }
        let stats = model.evaluate(val_set)?;
        if !stats.ce.is_finite() {
            return Err(NnError::NonFiniteLoss { epoch, step, ce: stats.ce, aux: stats.aux });
        }
        let score = scorer.as_mut().map(|s| s(&model));
        let metric = score.map_or(stats.ce, |s| -s);
        let improved = best.as_ref().is_none_or(|b| metric < b.0);
        if improved {
            best = Some((metric, stats.ce, epoch, model.clone()));
            stale = 0;
        } else {
            stale += 1;
        }
        let record = EvalRecord {
            epoch,
            step,
            train_ce: ce_sum / ce_tokens.max(1) as f64,
            val_ce: stats.ce,
            aux_accuracy: stats.aux_accuracy,
            lr,
            score,
            best_val_ce: best.as_ref().map_or(stats.ce, |b| b.1),
            improved,
        };
        on_eval(&record);
        log.push(record);
        ce_sum = 0.0;
        ce_tokens = 0;
        if stale >= cfg.patience {
            break;
        }
    }
    let (_, _, best_epoch, model) = best.expect("at least one evaluation runs");
    Ok(TrainOutcome { model, log, best_epoch, epochs_run, steps: step })
}
