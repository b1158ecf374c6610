use super::ops::{gelu, layer_norm, linear, softmax_prefix};
use super::params::*;
use super::{NnError, Transformer};
use crate::scalar::Scalar;

/// Incremental decoding with cached keys and values; feeding tokens one at a
/// time yields the same logits as a full forward pass over the prefix.
pub struct Decoder<'a, T> {
    model: &'a Transformer<T>,
    keys: Vec<Vec<T>>,
    values: Vec<Vec<T>>,
    pos: usize,
}

impl<'a, T: Scalar> Decoder<'a, T> {
    pub fn new(model: &'a Transformer<T>) -> Self {
        let l = model.cfg.layers;
        Decoder { model, keys: vec![Vec::new(); l], values: vec![Vec::new(); l], pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    /// Appends `token` and returns the next-token logits.
    pub fn step(&mut self, token: u32) -> Result<Vec<T>, NnError> {
        let m = self.model;
        let cfg = &m.cfg;
        if self.pos >= cfg.max_len {
            return Err(NnError::SequenceTooLong { len: self.pos + 1, max: cfg.max_len });
        }
        if token as usize >= cfg.vocab_size {
            return Err(NnError::TokenOutOfRange(token));
        }
        let (d, heads) = (cfg.d_model, cfg.heads);
        let dh = d / heads;
        let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
        let (tok, pos) = (m.t(TOK), m.t(POS));
        let (id, p) = (token as usize, self.pos);
        let mut x: Vec<T> = (0..d).map(|c| tok[id * d + c] + pos[p * d + c]).collect();
        let len = p + 1;
        let mut scores = vec![T::zero(); len];
        for l in 0..cfg.layers {
            let w = |k| m.t(layer_slot(l, k));
            let (h1, _) = layer_norm(&x, d, w(LN1_G), w(LN1_B));
            let qkv = linear(&h1, d, w(W_QKV), w(B_QKV));
            self.keys[l].extend_from_slice(&qkv[d..2 * d]);
            self.values[l].extend_from_slice(&qkv[2 * d..]);
            let (ks, vs) = (&self.keys[l], &self.values[l]);
            let mut att = vec![T::zero(); d];
            for h in 0..heads {
                let q = &qkv[h * dh..(h + 1) * dh];
                for (j, s) in scores.iter_mut().enumerate() {
                    let k = &ks[j * d + h * dh..j * d + (h + 1) * dh];
                    *s = q.iter().zip(k).map(|(&a, &b)| a * b).sum::<T>() * scale;
                }
                softmax_prefix(&mut scores, len);
                for (j, &s) in scores.iter().enumerate() {
                    let v = &vs[j * d + h * dh..j * d + (h + 1) * dh];
                    for (a, &b) in att[h * dh..(h + 1) * dh].iter_mut().zip(v) {
                        *a += s * b;
                    }
                }
            }
            let o = linear(&att, d, w(W_O), w(B_O));
            for (a, b) in x.iter_mut().zip(&o) {
                *a += *b;
            }
            let (h2, _) = layer_norm(&x, d, w(LN2_G), w(LN2_B));
            let g: Vec<T> = linear(&h2, d, w(W_1), w(B_1)).into_iter().map(gelu).collect();
            let mlp = linear(&g, cfg.d_ff, w(W_2), w(B_2));
            for (a, b) in x.iter_mut().zip(&mlp) {
                *a += *b;
            }
        }
        let fs = final_slot(cfg);
        let (xf, _) = layer_norm(&x, d, m.t(fs), m.t(fs + 1));
        self.pos += 1;
        Ok(linear(&xf, d, m.t(fs + 2), m.t(fs + 3)))
    }
}
