//! Prompted sampling, exercise files, and the conditioning evaluation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::ManifestRecord;
use crate::difficulty::{extract_descriptors, DifficultyLabel, Labeler, FEATURE_NAMES, NUM_FEATURES};
use crate::musicxml::serialize;
use crate::nn::{CheckpointMeta, Decoder, Example, NnError};
use crate::prompt::{build_prompt, Prompt, PromptType};
use crate::score::{validate, ScoreFragment};
use crate::tokenizer::{
    detokenize, encode, GrammarConfig, GrammarState, Token, TokenSequence, Vocabulary, END_ID,
};
use crate::{Model, Warning};

/// Attempts per exercise before it counts as degenerate.
pub const MAX_ATTEMPTS: usize = 4;

/// Squared class-index error charged for a degenerate sample.
pub const DEGENERATE_SQUARED_ERROR: f64 = 4.0;

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),
    #[error("invalid sampler configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("i/o: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub temperature: f64,
    pub greedy: bool,
    /// Keep only the k most likely tokens; 0 disables the cut.
    pub top_k: usize,
    pub max_tokens: usize,
    pub seed: u64,
    pub bar_limit: usize,
    /// Mask tokens the score grammar does not allow next.
    pub grammar_filter: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { temperature: 1.0, greedy: false, top_k: 32, max_tokens: 1024, seed: 0, bar_limit: 16, grammar_filter: false }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), GenerateError> {
        if !self.greedy && !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(GenerateError::InvalidConfig("temperature must be > 0 unless greedy".into()));
        }
        if self.bar_limit == 0 || self.max_tokens == 0 {
            return Err(GenerateError::InvalidConfig("bar_limit and max_tokens must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    End,
    BarLimit,
    MaxTokens,
    /// The grammar filter left no admissible token.
    NoLegalToken,
}

/// Generated continuation of one prompt, END included when emitted.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub ids: Vec<u32>,
    pub tokens: TokenSequence,
    pub stop: StopReason,
}

fn pick<R: Rng>(scores: &[f64], cfg: &SamplerConfig, rng: &mut R) -> Option<usize> {
    let finite: Vec<usize> = (0..scores.len()).filter(|&i| scores[i].is_finite()).collect();
    if finite.is_empty() {
        return None;
    }
    if cfg.greedy {
        return finite.iter().copied().reduce(|a, b| if scores[b] > scores[a] { b } else { a });
    }
    let mut cand = finite;
    if cfg.top_k > 0 && cand.len() > cfg.top_k {
        cand.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        cand.truncate(cfg.top_k);
        cand.sort_unstable();
    }
    let mx = cand.iter().map(|&i| scores[i]).fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = cand.iter().map(|&i| ((scores[i] - mx) / cfg.temperature).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (k, &i) in cand.iter().enumerate() {
        u -= w[k];
        if u < 0.0 {
            return Some(i);
        }
    }
    cand.last().copied()
}

/// Decodes a continuation of `prompt` (SEP is appended) with a cached
/// decoder. Stops at END, at `max_tokens`, or before a bar that would exceed
/// `bar_limit`, in which case END is appended.
pub fn sample(model: &Model, vocab: &Vocabulary, prompt: &Prompt, cfg: &SamplerConfig) -> Result<Sample, GenerateError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    sample_with(model, vocab, prompt, cfg, &mut rng)
}

fn sample_with(
    model: &Model,
    vocab: &Vocabulary,
    prompt: &Prompt,
    cfg: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Sample, GenerateError> {
    cfg.validate()?;
    if model.cfg.vocab_size != vocab.len() {
        return Err(GenerateError::VocabMismatch(format!(
            "model has {} outputs, vocabulary has {} tokens",
            model.cfg.vocab_size,
            vocab.len()
        )));
    }
    let prompt_ids = prompt.ids(vocab);
    if prompt_ids.len() >= model.cfg.max_len {
        return Err(NnError::SequenceTooLong { len: prompt_ids.len() + 1, max: model.cfg.max_len }.into());
    }
    let budget = cfg.max_tokens.min(model.cfg.max_len - prompt_ids.len());
    let parsed = vocab.parsed();
    let mut dec = Decoder::new(model);
    let mut logits = Vec::new();
    for &id in &prompt_ids {
        logits = dec.step(id)?;
    }
    let mut grammar = GrammarState::new(GrammarConfig { bar_limit: cfg.bar_limit, ..GrammarConfig::default() });
    let mut ids = Vec::new();
    let mut bars = 0;
    let stop = loop {
        if ids.len() >= budget {
            break StopReason::MaxTokens;
        }
        let left = budget - ids.len();
        let scores: Vec<f64> = logits
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                let ok = !cfg.grammar_filter || (parsed[i].is_music() && grammar.allows_within(&parsed[i], left));
                if ok {
                    l as f64
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        let Some(next) = pick(&scores, cfg, rng) else { break StopReason::NoLegalToken };
        let tok = &parsed[next];
        if *tok == Token::Bar {
            if bars == cfg.bar_limit {
                ids.push(END_ID);
                break StopReason::BarLimit;
            }
            bars += 1;
        }
        if cfg.grammar_filter {
            grammar.accept(tok).expect("filtered token is legal");
        }
        ids.push(next as u32);
        if next as u32 == END_ID {
            break StopReason::End;
        }
        if ids.len() < budget {
            logits = dec.step(next as u32)?;
        }
    };
    let tokens = TokenSequence(ids.iter().map(|&i| parsed[i as usize].clone()).collect());
    Ok(Sample { ids, tokens, stop })
}

/// One generated exercise. `fragment` is `None` when every attempt failed
/// to detokenize.
#[derive(Debug, Clone)]
pub struct Exercise {
    pub class: DifficultyLabel,
    pub index: usize,
    pub seed: u64,
    pub prompt: Prompt,
    pub tokens: TokenSequence,
    pub fragment: Option<ScoreFragment>,
    pub warnings: Vec<Warning>,
    pub attempts: usize,
    pub stop: StopReason,
}

impl Exercise {
    pub fn is_degenerate(&self) -> bool {
        self.fragment.is_none()
    }
}

/// A model together with the vocabulary and prompt settings it was trained
/// with.
pub struct Generator<'a> {
    pub model: &'a Model,
    pub vocab: &'a Vocabulary,
    pub prompt_type: PromptType,
    pub class_means: [[f64; NUM_FEATURES]; 3],
}

impl<'a> Generator<'a> {
    /// Checks the vocabulary against the checkpoint before use.
    pub fn new(model: &'a Model, vocab: &'a Vocabulary, meta: &CheckpointMeta) -> Result<Self, GenerateError> {
        if meta.vocab_hash != vocab.hash() {
            return Err(GenerateError::VocabMismatch(format!(
                "checkpoint was trained with vocabulary {}, got {}",
                meta.vocab_hash,
                vocab.hash()
            )));
        }
        let mut class_means = [[0.5; NUM_FEATURES]; 3];
        for (dst, src) in class_means.iter_mut().zip(&meta.class_means) {
            *dst = *src;
        }
        Ok(Generator { model, vocab, prompt_type: meta.prompt_type, class_means })
    }

    /// The prompt for a class; feature prompts use the class's mean
    /// normalized training features.
    pub fn prompt(&self, class: DifficultyLabel) -> Prompt {
        build_prompt(&self.class_means[class.index()], class, self.prompt_type)
    }

    /// Samples `n` exercises with seeds `cfg.seed + first_job + i`.
    /// Unparseable outputs are redrawn from the same stream.
    pub fn generate_jobs(
        &self,
        class: DifficultyLabel,
        n: usize,
        first_job: u64,
        cfg: &SamplerConfig,
    ) -> Result<Vec<Exercise>, GenerateError> {
        cfg.validate()?;
        let prompt = self.prompt(class);
        (0..n)
            .into_par_iter()
            .map(|i| {
                let seed = cfg.seed.wrapping_add(first_job).wrapping_add(i as u64);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut attempts = 0;
                loop {
                    attempts += 1;
                    let s = sample_with(self.model, self.vocab, &prompt, cfg, &mut rng)?;
                    let parsed = detokenize(&s.tokens).ok().filter(|d| validate(&d.fragment).is_empty());
                    if parsed.is_some() || attempts == MAX_ATTEMPTS {
                        let (fragment, warnings) = match parsed {
                            Some(d) => (Some(d.fragment), d.warnings),
                            None => (None, Vec::new()),
                        };
                        return Ok(Exercise {
                            class,
                            index: i,
                            seed,
                            prompt: prompt.clone(),
                            tokens: s.tokens,
                            fragment,
                            warnings,
                            attempts,
                            stop: s.stop,
                        });
                    }
                }
            })
            .collect()
    }

    pub fn generate_exercises(
        &self,
        class: DifficultyLabel,
        n: usize,
        cfg: &SamplerConfig,
    ) -> Result<Vec<Exercise>, GenerateError> {
        self.generate_jobs(class, n, 0, cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub class: DifficultyLabel,
    pub index: usize,
    pub seed: u64,
    pub prompt_type: PromptType,
    pub prompt: String,
    pub degenerate: bool,
    pub attempts: usize,
    pub stop: StopReason,
    pub measures: usize,
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub descriptors: Option<BTreeMap<String, f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gnb_posterior: Option<BTreeMap<String, f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predicted: Option<DifficultyLabel>,
}

pub fn sidecar(e: &Exercise, labeler: Option<&Labeler>) -> Sidecar {
    let desc = e.fragment.as_ref().map(extract_descriptors);
    let descriptors = desc.as_ref().map(|d| FEATURE_NAMES.iter().map(|n| n.to_string()).zip(d.0).collect());
    let (gnb_posterior, predicted) = match (labeler, &desc) {
        (Some(l), Some(d)) => (
            Some(DifficultyLabel::ALL.iter().map(|c| c.name().to_string()).zip(l.posterior(d)).collect()),
            Some(l.label(d)),
        ),
        _ => (None, None),
    };
    Sidecar {
        class: e.class,
        index: e.index,
        seed: e.seed,
        prompt_type: e.prompt.prompt_type,
        prompt: e.prompt.text.clone(),
        degenerate: e.is_degenerate(),
        attempts: e.attempts,
        stop: e.stop,
        measures: e.fragment.as_ref().map_or(0, |f| f.measures.len()),
        warnings: e.warnings.iter().map(|w| w.to_string()).collect(),
        descriptors,
        gnb_posterior,
        predicted,
    }
}

/// Writes `<class>_<index>.musicxml` for each parsed exercise and a
/// `<class>_<index>.json` sidecar for every exercise. Returns the paths.
pub fn write_exercises(dir: &Path, exercises: &[Exercise], labeler: Option<&Labeler>) -> Result<Vec<PathBuf>, GenerateError> {
    let io = |p: &Path, e: std::io::Error| GenerateError::Io(format!("{}: {e}", p.display()));
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let mut paths = Vec::new();
    for e in exercises {
        let stem = format!("{}_{}", e.class.name(), e.index);
        if let Some(f) = &e.fragment {
            let xml = serialize(f).map_err(|err| GenerateError::Io(err.to_string()))?;
            let p = dir.join(format!("{stem}.musicxml"));
            std::fs::write(&p, xml).map_err(|err| io(&p, err))?;
            paths.push(p);
        }
        let p = dir.join(format!("{stem}.json"));
        let json = serde_json::to_string_pretty(&sidecar(e, labeler)).expect("sidecar serializes");
        std::fs::write(&p, json + "\n").map_err(|err| io(&p, err))?;
        paths.push(p);
    }
    Ok(paths)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub accuracy: f64,
    pub per_class_accuracy: BTreeMap<String, f64>,
    /// Mean squared difference of class indices, prompted vs predicted.
    pub mse: f64,
    pub degenerate: usize,
    pub degeneration: f64,
    /// `confusion[prompted][predicted]` over non-degenerate samples.
    pub confusion: [[usize; 3]; 3],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_ce: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

/// Accuracy and class-index MSE of predictions; `None` marks a degenerate
/// sample, scored wrong with squared error 4.
pub fn score_predictions(prompted: &[DifficultyLabel], predicted: &[Option<DifficultyLabel>]) -> EvalReport {
    let n = prompted.len();
    let mut correct = [0usize; 3];
    let mut totals = [0usize; 3];
    let mut confusion = [[0usize; 3]; 3];
    let mut sq = 0.0;
    let mut degenerate = 0;
    for (p, q) in prompted.iter().zip(predicted) {
        totals[p.index()] += 1;
        match q {
            Some(q) => {
                confusion[p.index()][q.index()] += 1;
                correct[p.index()] += (p == q) as usize;
                let d = p.index() as f64 - q.index() as f64;
                sq += d * d;
            }
            None => {
                degenerate += 1;
                sq += DEGENERATE_SQUARED_ERROR;
            }
        }
    }
    let per_class_accuracy = DifficultyLabel::ALL
        .iter()
        .filter(|c| totals[c.index()] > 0)
        .map(|c| (c.name().to_string(), correct[c.index()] as f64 / totals[c.index()] as f64))
        .collect();
    let frac = |x: f64| if n == 0 { 0.0 } else { x / n as f64 };
    EvalReport {
        samples: n,
        accuracy: frac(correct.iter().sum::<usize>() as f64),
        per_class_accuracy,
        mse: frac(sq),
        degenerate,
        degeneration: frac(degenerate as f64),
        confusion,
        val_ce: None,
        config: None,
    }
}

/// Generates `n_per_class` samples per class and classifies each with the
/// labeling pipeline. Job seeds run consecutively over classes.
pub fn eval_conditioning(
    generator: &Generator,
    labeler: &Labeler,
    n_per_class: usize,
    cfg: &SamplerConfig,
) -> Result<EvalReport, GenerateError> {
    let mut prompted = Vec::new();
    let mut predicted = Vec::new();
    for class in DifficultyLabel::ALL {
        let first = (class.index() * n_per_class) as u64;
        for e in generator.generate_jobs(class, n_per_class, first, cfg)? {
            prompted.push(class);
            predicted.push(e.fragment.as_ref().map(|f| labeler.label(&extract_descriptors(f))));
        }
    }
    Ok(score_predictions(&prompted, &predicted))
}

/// Training sequence of a manifest record: prompt, SEP, music tokens.
pub fn encode_record(r: &ManifestRecord, vocab: &Vocabulary, prompt_type: PromptType) -> Result<Example, NnError> {
    let mut ids = build_prompt(&r.features, r.label, prompt_type).ids(vocab);
    ids.extend(encode(&r.token_sequence(), vocab));
    Example::new(ids, r.label.index())
}

/// Mean masked CE over validation records.
pub fn eval_val_loss(model: &Model, examples: &[Example]) -> Result<f64, NnError> {
    Ok(model.evaluate(examples)?.ce)
}
