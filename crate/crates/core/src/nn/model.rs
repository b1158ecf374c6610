use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::ops::{
    gelu, gelu_grad, layer_norm, layer_norm_backward, linear, linear_backward, log_sum_exp, softmax_prefix, LnCache,
};
use super::params::*;
use super::{ModelConfig, NnError};
use crate::prompt::prompt_mask;
use crate::scalar::{gemm, Scalar, View, ViewMut};
use crate::tokenizer::END_ID;

/// Decoder-only transformer with an auxiliary classifier read at END.
#[derive(Debug, Clone, PartialEq)]
pub struct Transformer<T> {
    pub cfg: ModelConfig,
    /// Language-model parameters.
    pub lm: ParamSet<T>,
    /// Difficulty head, `d_model -> num_classes`.
    pub aux: ParamSet<T>,
}

/// Gradients with the same two-group layout as the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub lm: ParamSet<T>,
    pub aux: ParamSet<T>,
}

impl<T: Scalar> Gradients<T> {
    pub fn add_assign(&mut self, other: &Self) {
        self.lm.add_assign(&other.lm);
        self.aux.add_assign(&other.aux);
    }
}

/// One training sequence: prompt, SEP, music tokens, END.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub ids: Vec<u32>,
    /// True at positions whose token is a prediction target.
    pub mask: Vec<bool>,
    pub label: usize,
}

impl Example {
    pub fn new(ids: Vec<u32>, label: usize) -> Result<Self, NnError> {
        let mask = prompt_mask(&ids).map_err(|_| NnError::MissingSep)?;
        Ok(Example { ids, mask, label })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput<T> {
    /// `len x vocab`, row `t` scores the token at `t + 1`.
    pub logits: Vec<T>,
    pub end_hidden: Vec<T>,
}

/// Loss terms of one batch; `ce` is a mean over target tokens, `aux` a mean
/// over sequences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLoss {
    pub ce: f64,
    pub aux: f64,
    pub total: f64,
    pub aux_correct: usize,
    pub tokens: usize,
    pub sequences: usize,
}

/// Result of the auxiliary classifier on one END state. Gradients are those
/// of the unweighted loss; `grad_hidden` is `None` when detached.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxOutput<T> {
    pub loss: f64,
    pub probs: Vec<f64>,
    pub grad_head: ParamSet<T>,
    pub grad_hidden: Option<Vec<T>>,
}

pub fn loss_total(ce: f64, aux: f64, beta: f64) -> f64 {
    ce + beta * aux
}

/// Mean of `-log softmax(row)[target]` over rows whose mask is set.
pub fn loss_ce<T: Scalar>(logits: &[T], vocab: usize, targets: &[u32], mask: &[bool]) -> Result<f64, NnError> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (r, (&t, &m)) in targets.iter().zip(mask).enumerate() {
        if !m {
            continue;
        }
        let row = &logits[r * vocab..(r + 1) * vocab];
        sum += log_sum_exp(row) - row[t as usize].as_f64();
        n += 1;
    }
    if n == 0 {
        return Err(NnError::EmptyMask);
    }
    Ok(sum / n as f64)
}

/// Next-token targets and their mask for a sequence's logits rows.
pub fn shift_targets(ids: &[u32], mask: &[bool]) -> (Vec<u32>, Vec<bool>) {
    let n = ids.len();
    let mut targets: Vec<u32> = ids[1.min(n)..].to_vec();
    let mut m: Vec<bool> = mask[1.min(n)..].to_vec();
    if n > 0 {
        targets.push(0);
        m.push(false);
    }
    (targets, m)
}

pub fn loss_aux<T: Scalar>(head: &ParamSet<T>, end_hidden: &[T], label: usize, detach: bool) -> AuxOutput<T> {
    let (w, b) = (&head.tensors[0].data, &head.tensors[1].data);
    let c = b.len();
    let z = linear(end_hidden, end_hidden.len(), w, b);
    let lse = log_sum_exp(&z);
    let probs: Vec<f64> = z.iter().map(|v| (v.as_f64() - lse).exp()).collect();
    let loss = lse - z[label].as_f64();
    let dz: Vec<T> =
        probs.iter().enumerate().map(|(k, &p)| T::from_f64_lossy(p - if k == label { 1.0 } else { 0.0 })).collect();
    let mut grad_head = head.zeros_like();
    let (gw, gb) = grad_head.tensors.split_at_mut(1);
    for (i, &h) in end_hidden.iter().enumerate() {
        for k in 0..c {
            gw[0].data[i * c + k] += h * dz[k];
        }
    }
    gb[0].data.copy_from_slice(&dz);
    let grad_hidden = (!detach).then(|| {
        (0..end_hidden.len()).map(|i| (0..c).map(|k| w[i * c + k] * dz[k]).sum::<T>()).collect()
    });
    AuxOutput { loss, probs, grad_head, grad_hidden }
}

struct LayerCache<T> {
    ln1: LnCache<T>,
    h1: Vec<T>,
    qkv: Vec<T>,
    probs: Vec<T>,
    att: Vec<T>,
    drop1: Option<Vec<T>>,
    ln2: LnCache<T>,
    h2: Vec<T>,
    u: Vec<T>,
    g: Vec<T>,
    drop2: Option<Vec<T>>,
}

struct Cache<T> {
    drop0: Option<Vec<T>>,
    layers: Vec<LayerCache<T>>,
    lnf: LnCache<T>,
    xf: Vec<T>,
    logits: Vec<T>,
}

fn dropout_mask<T: Scalar>(n: usize, p: f64, rng: &mut Option<&mut ChaCha8Rng>) -> Option<Vec<T>> {
    let rng = rng.as_mut()?;
    if p <= 0.0 {
        return None;
    }
    let keep = T::from_f64_lossy(1.0 / (1.0 - p));
    Some((0..n).map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep }).collect())
}

fn apply_mask<T: Scalar>(x: &mut [T], mask: &Option<Vec<T>>) {
    if let Some(m) = mask {
        for (v, &k) in x.iter_mut().zip(m) {
            *v *= k;
        }
    }
}

impl<T: Scalar> Transformer<T> {
    /// Randomly initialized model.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self, NnError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (lm, aux) = init_params(&cfg, &mut rng);
        Ok(Transformer { cfg, lm, aux })
    }

    /// Model with every parameter zero except unit norm gains.
    pub fn zeroed(cfg: ModelConfig) -> Result<Self, NnError> {
        cfg.validate()?;
        let mut lm = lm_layout::<T>(&cfg);
        for t in &mut lm.tensors {
            if t.name.ends_with(".g") {
                t.data.fill(T::one());
            }
        }
        let aux = aux_layout(&cfg);
        Ok(Transformer { cfg, lm, aux })
    }

    pub fn cast<U: Scalar>(&self) -> Transformer<U> {
        Transformer { cfg: self.cfg.clone(), lm: self.lm.cast(), aux: self.aux.cast() }
    }

    pub fn zero_gradients(&self) -> Gradients<T> {
        Gradients { lm: self.lm.zeros_like(), aux: self.aux.zeros_like() }
    }

    pub(crate) fn t(&self, slot: usize) -> &[T] {
        &self.lm.tensors[slot].data
    }

    pub(crate) fn check_ids(&self, ids: &[u32]) -> Result<(), NnError> {
        if ids.len() > self.cfg.max_len {
            return Err(NnError::SequenceTooLong { len: ids.len(), max: self.cfg.max_len });
        }
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= self.cfg.vocab_size) {
            return Err(NnError::TokenOutOfRange(bad));
        }
        Ok(())
    }

    /// Logits and END hidden state of each sequence `ids[i][..lengths[i]]`;
    /// anything past a sequence's length is ignored.
    pub fn forward(&self, ids: &[Vec<u32>], lengths: &[usize]) -> Result<Vec<ForwardOutput<T>>, NnError> {
        ids.iter()
            .zip(lengths)
            .map(|(seq, &len)| {
                let seq = &seq[..len.min(seq.len())];
                self.check_ids(seq)?;
                let end = seq.iter().position(|&t| t == END_ID).ok_or(NnError::MissingEnd)?;
                let cache = self.forward_cached(seq, None);
                let d = self.cfg.d_model;
                Ok(ForwardOutput { end_hidden: cache.xf[end * d..(end + 1) * d].to_vec(), logits: cache.logits })
            })
            .collect()
    }

    /// Logits of every position of a sequence that need not contain END.
    pub fn logits(&self, ids: &[u32]) -> Result<Vec<T>, NnError> {
        self.check_ids(ids)?;
        Ok(self.forward_cached(ids, None).logits)
    }

    /// Auxiliary class probabilities for an END hidden state.
    pub fn aux_probs(&self, end_hidden: &[T]) -> Vec<f64> {
        loss_aux(&self.aux, end_hidden, 0, true).probs
    }

    fn forward_cached(&self, ids: &[u32], mut rng: Option<&mut ChaCha8Rng>) -> Cache<T> {
        let cfg = &self.cfg;
        let (n, d, f, v, heads) = (ids.len(), cfg.d_model, cfg.d_ff, cfg.vocab_size, cfg.heads);
        let dh = d / heads;
        let p = cfg.dropout;
        let (tok, pos) = (self.t(TOK), self.t(POS));
        let mut x = vec![T::zero(); n * d];
        for (t, &id) in ids.iter().enumerate() {
            let id = id as usize;
            for c in 0..d {
                x[t * d + c] = tok[id * d + c] + pos[t * d + c];
            }
        }
        let drop0 = dropout_mask(n * d, p, &mut rng);
        apply_mask(&mut x, &drop0);
        let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let w = |k| self.t(layer_slot(l, k));
            let (h1, ln1) = layer_norm(&x, d, w(LN1_G), w(LN1_B));
            let qkv = linear(&h1, d, w(W_QKV), w(B_QKV));
            let mut probs = vec![T::zero(); heads * n * n];
            let mut att = vec![T::zero(); n * d];
            for h in 0..heads {
                let pr = &mut probs[h * n * n..(h + 1) * n * n];
                gemm(
                    n,
                    dh,
                    n,
                    scale,
                    View::strided(&qkv, h * dh, 3 * d, 1),
                    View::strided(&qkv, d + h * dh, 1, 3 * d),
                    T::zero(),
                    ViewMut::rows(pr, 0, n),
                );
                for i in 0..n {
                    softmax_prefix(&mut pr[i * n..(i + 1) * n], i + 1);
                }
                gemm(
                    n,
                    n,
                    dh,
                    T::one(),
                    View::rows(pr, 0, n),
                    View::strided(&qkv, 2 * d + h * dh, 3 * d, 1),
                    T::zero(),
                    ViewMut::strided(&mut att, h * dh, d, 1),
                );
            }
            let mut o = linear(&att, d, w(W_O), w(B_O));
            let drop1 = dropout_mask(n * d, p, &mut rng);
            apply_mask(&mut o, &drop1);
            for (a, b) in x.iter_mut().zip(&o) {
                *a += *b;
            }
            let (h2, ln2) = layer_norm(&x, d, w(LN2_G), w(LN2_B));
            let u = linear(&h2, d, w(W_1), w(B_1));
            let g: Vec<T> = u.iter().map(|&z| gelu(z)).collect();
            let mut m = linear(&g, f, w(W_2), w(B_2));
            let drop2 = dropout_mask(n * d, p, &mut rng);
            apply_mask(&mut m, &drop2);
            for (a, b) in x.iter_mut().zip(&m) {
                *a += *b;
            }
            layers.push(LayerCache { ln1, h1, qkv, probs, att, drop1, ln2, h2, u, g, drop2 });
        }
        let fs = final_slot(cfg);
        let (xf, lnf) = layer_norm(&x, d, self.t(fs), self.t(fs + 1));
        let logits = linear(&xf, d, self.t(fs + 2), self.t(fs + 3));
        debug_assert_eq!(logits.len(), n * v);
        Cache { drop0, layers, lnf, xf, logits }
    }

    /// Backpropagates `dlogits` plus an optional gradient on the final hidden
    /// states, accumulating into `grads` (language-model layout).
    fn backward(&self, ids: &[u32], cache: &Cache<T>, dlogits: &[T], mut dxf: Vec<T>, grads: &mut ParamSet<T>) {
        let cfg = &self.cfg;
        let (n, d, f, heads) = (ids.len(), cfg.d_model, cfg.d_ff, cfg.heads);
        let dh = d / heads;
        let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
        let fs = final_slot(cfg);
        let g = &mut grads.tensors;
        {
            let (a, b) = g.split_at_mut(fs + 3);
            let back = linear_backward(&cache.xf, d, self.t(fs + 2), dlogits, &mut a[fs + 2].data, &mut b[0].data);
            for (x, y) in dxf.iter_mut().zip(&back) {
                *x += *y;
            }
        }
        let mut dx = vec![T::zero(); n * d];
        {
            let (a, b) = g.split_at_mut(fs + 1);
            layer_norm_backward(&dxf, &cache.lnf, self.t(fs), &mut a[fs].data, &mut b[0].data, &mut dx);
        }
        for l in (0..cfg.layers).rev() {
            let c = &cache.layers[l];
            let w = |k| self.t(layer_slot(l, k));
            let slot = |k| layer_slot(l, k);
            // MLP branch
            let mut dm = dx.clone();
            apply_mask(&mut dm, &c.drop2);
            let dg = {
                let (a, b) = g.split_at_mut(slot(B_2));
                linear_backward(&c.g, f, w(W_2), &dm, &mut a[slot(W_2)].data, &mut b[0].data)
            };
            let du: Vec<T> = dg.iter().zip(&c.u).map(|(&a, &u)| a * gelu_grad(u)).collect();
            let dh2 = {
                let (a, b) = g.split_at_mut(slot(B_1));
                linear_backward(&c.h2, d, w(W_1), &du, &mut a[slot(W_1)].data, &mut b[0].data)
            };
            {
                let (a, b) = g.split_at_mut(slot(LN2_B));
                layer_norm_backward(&dh2, &c.ln2, w(LN2_G), &mut a[slot(LN2_G)].data, &mut b[0].data, &mut dx);
            }
            // attention branch
            let mut dout = dx.clone();
            apply_mask(&mut dout, &c.drop1);
            let datt = {
                let (a, b) = g.split_at_mut(slot(B_O));
                linear_backward(&c.att, d, w(W_O), &dout, &mut a[slot(W_O)].data, &mut b[0].data)
            };
            let mut dqkv = vec![T::zero(); n * 3 * d];
            let mut dp = vec![T::zero(); n * n];
            for h in 0..heads {
                let pr = &c.probs[h * n * n..(h + 1) * n * n];
                gemm(
                    n,
                    dh,
                    n,
                    T::one(),
                    View::strided(&datt, h * dh, d, 1),
                    View::strided(&c.qkv, 2 * d + h * dh, 1, 3 * d),
                    T::zero(),
                    ViewMut::rows(&mut dp, 0, n),
                );
                gemm(
                    n,
                    n,
                    dh,
                    T::one(),
                    View::rows(pr, 0, n).t(),
                    View::strided(&datt, h * dh, d, 1),
                    T::zero(),
                    ViewMut::strided(&mut dqkv, 2 * d + h * dh, 3 * d, 1),
                );
                for i in 0..n {
                    let (prow, drow) = (&pr[i * n..(i + 1) * n], &mut dp[i * n..(i + 1) * n]);
                    let dot: T = (0..=i).map(|j| prow[j] * drow[j]).sum();
                    for j in 0..n {
                        drow[j] = if j <= i { prow[j] * (drow[j] - dot) * scale } else { T::zero() };
                    }
                }
                gemm(
                    n,
                    n,
                    dh,
                    T::one(),
                    View::rows(&dp, 0, n),
                    View::strided(&c.qkv, d + h * dh, 3 * d, 1),
                    T::zero(),
                    ViewMut::strided(&mut dqkv, h * dh, 3 * d, 1),
                );
                gemm(
                    n,
                    n,
                    dh,
                    T::one(),
                    View::rows(&dp, 0, n).t(),
                    View::strided(&c.qkv, h * dh, 3 * d, 1),
                    T::zero(),
                    ViewMut::strided(&mut dqkv, d + h * dh, 3 * d, 1),
                );
            }
            let dh1 = {
                let (a, b) = g.split_at_mut(slot(B_QKV));
                linear_backward(&c.h1, d, w(W_QKV), &dqkv, &mut a[slot(W_QKV)].data, &mut b[0].data)
            };
            {
                let (a, b) = g.split_at_mut(slot(LN1_B));
                layer_norm_backward(&dh1, &c.ln1, w(LN1_G), &mut a[slot(LN1_G)].data, &mut b[0].data, &mut dx);
            }
        }
        apply_mask(&mut dx, &cache.drop0);
        let (gt, gp) = g.split_at_mut(POS);
        for (t, &id) in ids.iter().enumerate() {
            let id = id as usize;
            for c in 0..d {
                gt[TOK].data[id * d + c] += dx[t * d + c];
                gp[0].data[t * d + c] += dx[t * d + c];
            }
        }
    }

    /// Loss and gradients of `ce + beta * aux` over a batch. Dropout is
    /// active iff `dropout_seed` is given; each sequence draws from its own
    /// stream so results do not depend on the thread count.
    pub fn batch_gradients(
        &self,
        batch: &[Example],
        beta: f64,
        detach: bool,
        dropout_seed: Option<u64>,
    ) -> Result<(BatchLoss, Gradients<T>), NnError> {
        let tokens: usize = batch.iter().map(|e| e.mask.iter().skip(1).filter(|&&m| m).count()).sum();
        if tokens == 0 {
            return Err(NnError::EmptyMask);
        }
        for e in batch {
            self.check_ids(&e.ids)?;
        }
        let inv_tokens = 1.0 / tokens as f64;
        let aux_scale = T::from_f64_lossy(beta / batch.len() as f64);
        let per: Vec<Result<(f64, f64, bool, Gradients<T>), NnError>> = batch
            .par_iter()
            .enumerate()
            .map(|(i, e)| {
                let mut rng = dropout_seed.map(|s| {
                    let mut r = ChaCha8Rng::seed_from_u64(s);
                    r.set_stream(i as u64);
                    r
                });
                self.example_gradients(e, inv_tokens, aux_scale, detach, rng.as_mut())
            })
            .collect();
        let mut grads = self.zero_gradients();
        let (mut ce, mut aux, mut correct) = (0.0, 0.0, 0);
        for r in per {
            let (c, a, ok, g) = r?;
            ce += c;
            aux += a;
            correct += ok as usize;
            grads.add_assign(&g);
        }
        let ce = ce * inv_tokens;
        let aux = aux / batch.len() as f64;
        let loss = BatchLoss {
            ce,
            aux,
            total: loss_total(ce, aux, beta),
            aux_correct: correct,
            tokens,
            sequences: batch.len(),
        };
        Ok((loss, grads))
    }

    fn example_gradients(
        &self,
        e: &Example,
        inv_tokens: f64,
        aux_scale: T,
        detach: bool,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, f64, bool, Gradients<T>), NnError> {
        let (n, d, v) = (e.ids.len(), self.cfg.d_model, self.cfg.vocab_size);
        let end = e.ids.iter().position(|&t| t == END_ID).ok_or(NnError::MissingEnd)?;
        let cache = self.forward_cached(&e.ids, rng);
        let mut dlogits = vec![T::zero(); n * v];
        let mut ce = 0.0;
        for t in 0..n.saturating_sub(1) {
            if !e.mask[t + 1] {
                continue;
            }
            let row = &cache.logits[t * v..(t + 1) * v];
            let lse = log_sum_exp(row);
            let target = e.ids[t + 1] as usize;
            ce += lse - row[target].as_f64();
            for (k, dl) in dlogits[t * v..(t + 1) * v].iter_mut().enumerate() {
                let p = (row[k].as_f64() - lse).exp() - if k == target { 1.0 } else { 0.0 };
                *dl = T::from_f64_lossy(p * inv_tokens);
            }
        }
        let out = loss_aux(&self.aux, &cache.xf[end * d..(end + 1) * d], e.label, detach);
        let correct = crate::difficulty::argmax(&out.probs) == e.label;
        let mut grads = self.zero_gradients();
        grads.aux = out.grad_head;
        grads.aux.scale(aux_scale);
        let mut dxf = vec![T::zero(); n * d];
        if let Some(gh) = out.grad_hidden {
            for (x, g) in dxf[end * d..(end + 1) * d].iter_mut().zip(gh) {
                *x += g * aux_scale;
            }
        }
        self.backward(&e.ids, &cache, &dlogits, dxf, &mut grads.lm);
        Ok((ce, out.loss, correct, grads))
    }

    /// `ce + beta * aux` without dropout.
    pub fn batch_loss(&self, batch: &[Example], beta: f64) -> Result<f64, NnError> {
        let s = self.evaluate(batch)?;
        Ok(loss_total(s.ce, s.aux, beta))
    }

    /// Token-mean CE, mean aux loss and aux accuracy without dropout.
    pub fn evaluate(&self, data: &[Example]) -> Result<EvalStats, NnError> {
        let per: Vec<Result<(f64, usize, f64, bool), NnError>> = data
            .par_iter()
            .map(|e| {
                self.check_ids(&e.ids)?;
                let (n, d, v) = (e.ids.len(), self.cfg.d_model, self.cfg.vocab_size);
                let end = e.ids.iter().position(|&t| t == END_ID).ok_or(NnError::MissingEnd)?;
                let cache = self.forward_cached(&e.ids, None);
                let mut ce = 0.0;
                let mut count = 0;
                for t in 0..n.saturating_sub(1) {
                    if e.mask[t + 1] {
                        let row = &cache.logits[t * v..(t + 1) * v];
                        ce += log_sum_exp(row) - row[e.ids[t + 1] as usize].as_f64();
                        count += 1;
                    }
                }
                let out = loss_aux(&self.aux, &cache.xf[end * d..(end + 1) * d], e.label, true);
                Ok((ce, count, out.loss, crate::difficulty::argmax(&out.probs) == e.label))
            })
            .collect();
        let (mut ce, mut tokens, mut aux, mut correct) = (0.0, 0usize, 0.0, 0usize);
        for r in per {
            let (c, k, a, ok) = r?;
            ce += c;
            tokens += k;
            aux += a;
            correct += ok as usize;
        }
        if tokens == 0 {
            return Err(NnError::EmptyMask);
        }
        Ok(EvalStats {
            ce: ce / tokens as f64,
            aux: aux / data.len() as f64,
            aux_accuracy: correct as f64 / data.len() as f64,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalStats {
    pub ce: f64,
    pub aux: f64,
    pub aux_accuracy: f64,
}
