use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::ModelConfig;
use crate::scalar::Scalar;

/// A named dense tensor stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { name: name.into(), shape, data: vec![T::zero(); n] }
    }

    pub fn filled(name: impl Into<String>, shape: Vec<usize>, v: T) -> Self {
        let mut t = Self::zeros(name, shape);
        t.data.fill(v);
        t
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }
}

/// An ordered list of tensors: the language-model parameters or the
/// auxiliary head, or gradients and optimizer moments of the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet<T> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn zeros_like(&self) -> Self {
        ParamSet { tensors: self.tensors.iter().map(|t| Tensor::zeros(t.name.clone(), t.shape.clone())).collect() }
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, &y) in a.data.iter_mut().zip(&b.data) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for t in &mut self.tensors {
            for x in &mut t.data {
                *x *= s;
            }
        }
    }

    /// Euclidean norm over every element, accumulated in f64.
    pub fn norm(&self) -> f64 {
        self.tensors.iter().flat_map(|t| &t.data).map(|&x| x.as_f64() * x.as_f64()).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().flat_map(|t| &t.data).all(|x| x.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|&x| U::from_f64_lossy(x.as_f64())).collect(),
                })
                .collect(),
        }
    }
}

// Tensor slots inside the language-model set.
pub(crate) const TOK: usize = 0;
pub(crate) const POS: usize = 1;
pub(crate) const PER_LAYER: usize = 12;
pub(crate) const LN1_G: usize = 0;
pub(crate) const LN1_B: usize = 1;
pub(crate) const W_QKV: usize = 2;
pub(crate) const B_QKV: usize = 3;
pub(crate) const W_O: usize = 4;
pub(crate) const B_O: usize = 5;
pub(crate) const LN2_G: usize = 6;
pub(crate) const LN2_B: usize = 7;
pub(crate) const W_1: usize = 8;
pub(crate) const B_1: usize = 9;
pub(crate) const W_2: usize = 10;
pub(crate) const B_2: usize = 11;

pub(crate) fn layer_slot(layer: usize, k: usize) -> usize {
    2 + layer * PER_LAYER + k
}

pub(crate) fn final_slot(cfg: &ModelConfig) -> usize {
    2 + cfg.layers * PER_LAYER
}

/// Parameter layout of the language model with every tensor zeroed.
pub fn lm_layout<T: Scalar>(cfg: &ModelConfig) -> ParamSet<T> {
    let (d, f, v) = (cfg.d_model, cfg.d_ff, cfg.vocab_size);
    let mut ts = vec![Tensor::zeros("tok_emb", vec![v, d]), Tensor::zeros("pos_emb", vec![cfg.max_len, d])];
    for l in 0..cfg.layers {
        let n = |s: &str| format!("layer{l}.{s}");
        ts.extend([
            Tensor::zeros(n("ln1.g"), vec![d]),
            Tensor::zeros(n("ln1.b"), vec![d]),
            Tensor::zeros(n("attn.w_qkv"), vec![d, 3 * d]),
            Tensor::zeros(n("attn.b_qkv"), vec![3 * d]),
            Tensor::zeros(n("attn.w_o"), vec![d, d]),
            Tensor::zeros(n("attn.b_o"), vec![d]),
            Tensor::zeros(n("ln2.g"), vec![d]),
            Tensor::zeros(n("ln2.b"), vec![d]),
            Tensor::zeros(n("mlp.w_1"), vec![d, f]),
            Tensor::zeros(n("mlp.b_1"), vec![f]),
            Tensor::zeros(n("mlp.w_2"), vec![f, d]),
            Tensor::zeros(n("mlp.b_2"), vec![d]),
        ]);
    }
    ts.extend([
        Tensor::zeros("ln_f.g", vec![d]),
        Tensor::zeros("ln_f.b", vec![d]),
        Tensor::zeros("out.w", vec![d, v]),
        Tensor::zeros("out.b", vec![v]),
    ]);
    ParamSet { tensors: ts }
}

pub fn aux_layout<T: Scalar>(cfg: &ModelConfig) -> ParamSet<T> {
    ParamSet {
        tensors: vec![
            Tensor::zeros("aux.w", vec![cfg.d_model, cfg.num_classes]),
            Tensor::zeros("aux.b", vec![cfg.num_classes]),
        ],
    }
}

/// Normal(0, 0.02) matrices, residual projections scaled by 1/sqrt(2L),
/// unit norm gains, zero biases.
pub(crate) fn init_params<T: Scalar, R: Rng>(cfg: &ModelConfig, rng: &mut R) -> (ParamSet<T>, ParamSet<T>) {
    let mut lm = lm_layout::<T>(cfg);
    let mut aux = aux_layout::<T>(cfg);
    let base = Normal::new(0.0, 0.02).unwrap();
    let resid = Normal::new(0.0, 0.02 / (2.0 * cfg.layers.max(1) as f64).sqrt()).unwrap();
    for t in lm.tensors.iter_mut().chain(aux.tensors.iter_mut()) {
        if t.name.ends_with(".g") {
            t.data.fill(T::one());
        } else if t.ndim() == 2 {
            let dist = if t.name.ends_with("w_o") || t.name.ends_with("w_2") { resid } else { base };
            for x in &mut t.data {
                *x = T::from_f64_lossy(dist.sample(rng));
            }
        }
    }
    (lm, aux)
}
