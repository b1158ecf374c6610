use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sightgen::corpus::{
    build_dataset, class_means, read_manifest, segment, write_manifest, DatasetConfig, ManifestRecord, SourcePiece,
    SplitName,
};
use sightgen::difficulty::{
    extract_descriptors, group_level, read_descriptor_csv, write_descriptor_csv, DescriptorRow, DifficultyLabel, Labeler,
};
use sightgen::generate::{encode_record, eval_conditioning, eval_val_loss, write_exercises, Generator, SamplerConfig};
use sightgen::musicxml::{parse, serialize, ParseReport};
use sightgen::nn::{
    grad_check as run_grad_check, load_checkpoint, save_checkpoint, train_with, CheckpointMeta, LogSummary, ModelConfig,
    TrainConfig,
};
use sightgen::prompt::PromptType;
use sightgen::synth::exercise_piece;
use sightgen::tokenizer::{build_vocab, Vocabulary};

use crate::config::{data, echo_beside, flags_of, read_text, require, resolve, switch, write_echo, write_file, CliError};
use crate::{
    DatasetArgs, DescriptorsArgs, EvalArgs, FitGnbArgs, GenerateArgs, GradCheckArgs, IngestArgs, SamplerArgs, SynthArgs,
    TrainArgs,
};

const MANIFEST_FILE: &str = "manifest.jsonl";
const VOCAB_FILE: &str = "vocab.txt";
const CHECKPOINT_FILE: &str = "model.ckpt";

/// MusicXML files under `dir`, sorted, with ids relative to `dir` and
/// without extension.
fn score_files(dir: &Path) -> Result<Vec<(String, PathBuf)>, CliError> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_dir() {
                walk(&path, out)?;
            } else if matches!(path.extension().and_then(|e| e.to_str()), Some("musicxml" | "xml")) {
                out.push(path);
            }
        }
        Ok(())
    }
    let mut paths = Vec::new();
    walk(dir, &mut paths).map_err(data(dir.display()))?;
    let mut files: Vec<(String, PathBuf)> = paths
        .into_iter()
        .map(|p| {
            let rel = p.strip_prefix(dir).unwrap_or(&p).with_extension("");
            let id = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            (id, p)
        })
        .collect();
    files.sort();
    Ok(files)
}

fn parse_all(files: &[(String, PathBuf)]) -> Vec<Result<ParseReport, String>> {
    files
        .par_iter()
        .map(|(_, p)| {
            let bytes = std::fs::read(p).map_err(|e| e.to_string())?;
            parse(&bytes).map_err(|e| e.to_string())
        })
        .collect()
}

fn load_labeler(path: &Path) -> Result<Labeler, CliError> {
    Labeler::from_json(&read_text(path)?).map_err(data(path.display()))
}

fn load_vocab(path: &Path) -> Result<Vocabulary, CliError> {
    Vocabulary::from_file_str(&read_text(path)?).map_err(data(path.display()))
}

fn load_manifest(dataset: &Path) -> Result<Vec<ManifestRecord>, CliError> {
    let path = dataset.join(MANIFEST_FILE);
    Ok(read_manifest(&read_text(&path)?).map_err(data(path.display()))?.1)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct IngestConfig {
    input: Option<PathBuf>,
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct FileReport {
    file: String,
    measures: usize,
    warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

pub fn ingest(a: IngestArgs) -> Result<Value, CliError> {
    let cfg: IngestConfig = resolve(a.common.config.as_deref(), flags_of(&a))?;
    let input = require(cfg.input.clone(), "input")?;
    let out = require(cfg.out.clone(), "out")?;
    let files = score_files(&input)?;
    let mut skipped: BTreeMap<String, usize> = BTreeMap::new();
    let mut per_file = Vec::new();
    for ((id, _), r) in files.iter().zip(parse_all(&files)) {
        per_file.push(match r {
            Ok(r) => {
                for (k, n) in r.skipped_elements {
                    *skipped.entry(k).or_default() += n;
                }
                FileReport {
                    file: id.clone(),
                    measures: r.score.measures.len(),
                    warnings: r.warnings.iter().map(|w| w.to_string()).collect(),
                    error: None,
                }
            }
            Err(e) => FileReport { file: id.clone(), measures: 0, warnings: Vec::new(), error: Some(e) },
        });
    }
    let parsed = per_file.iter().filter(|f| f.error.is_none()).count();
    let summary = json!({
        "files": per_file.len(),
        "parsed": parsed,
        "failed": per_file.len() - parsed,
        "measures": per_file.iter().map(|f| f.measures).sum::<usize>(),
        "warnings": per_file.iter().map(|f| f.warnings.len()).sum::<usize>(),
    });
    let report = json!({ "summary": summary, "skipped_elements": skipped, "files": per_file });
    write_file(&out, (serde_json::to_string_pretty(&report).expect("report serializes") + "\n").as_bytes())?;
    write_echo(&echo_beside(&out), &cfg)?;
    Ok(summary)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct DescriptorsConfig {
    input: Option<PathBuf>,
    levels: Option<PathBuf>,
    out: Option<PathBuf>,
}

pub fn descriptors(a: DescriptorsArgs) -> Result<Value, CliError> {
    let cfg: DescriptorsConfig = resolve(a.common.config.as_deref(), flags_of(&a))?;
    let input = require(cfg.input.clone(), "input")?;
    let out = require(cfg.out.clone(), "out")?;
    let levels: BTreeMap<String, i64> = match &cfg.levels {
        Some(p) => serde_json::from_str(&read_text(p)?).map_err(data(p.display()))?,
        None => BTreeMap::new(),
    };
    let files = score_files(&input)?;
    let parsed = parse_all(&files);
    let mut rows = Vec::new();
    let mut failed = 0;
    for ((id, _), r) in files.iter().zip(parsed) {
        let Ok(r) = r else {
            failed += 1;
            continue;
        };
        let label = levels.get(id).map(|&l| group_level(l)).transpose().map_err(data(id))?;
        for f in segment(&r.score).0 {
            rows.push(DescriptorRow { descriptors: extract_descriptors(&f), label });
        }
    }
    write_file(&out, write_descriptor_csv(&rows).as_bytes())?;
    write_echo(&echo_beside(&out), &cfg)?;
    Ok(json!({
        "pieces": files.len(),
        "failed": failed,
        "fragments": rows.len(),
        "labeled": rows.iter().filter(|r| r.label.is_some()).count(),
    }))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FitGnbConfig {
    input: Option<PathBuf>,
    out: Option<PathBuf>,
}

pub fn fit_gnb(a: FitGnbArgs) -> Result<Value, CliError> {
    let cfg: FitGnbConfig = resolve(a.common.config.as_deref(), flags_of(&a))?;
    let input = require(cfg.input.clone(), "input")?;
    let out = require(cfg.out.clone(), "out")?;
    let rows = read_descriptor_csv(&read_text(&input)?).map_err(data(input.display()))?;
    let (x, y): (Vec<_>, Vec<_>) = rows.iter().filter_map(|r| r.label.map(|l| (r.descriptors.0, l))).unzip();
    let labeler = Labeler::fit(&x, &y).map_err(data(input.display()))?;
    write_file(&out, (labeler.to_json() + "\n").as_bytes())?;
    write_echo(&echo_beside(&out), &cfg)?;
    let counts: BTreeMap<&str, usize> =
        DifficultyLabel::ALL.iter().map(|c| (c.name(), y.iter().filter(|l| *l == c).count())).collect();
    Ok(json!({ "rows": rows.len(), "labeled": y.len(), "class_counts": counts }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct DatasetRun {
    input: Option<PathBuf>,
    labeler: Option<PathBuf>,
    out: Option<PathBuf>,
    min_count: u64,
    split_ratio: f64,
    augment: bool,
    balance: bool,
    seed: u64,
}

impl Default for DatasetRun {
    fn default() -> Self {
        let d = DatasetConfig::default();
        DatasetRun {
            input: None,
            labeler: None,
            out: None,
            min_count: d.min_count,
            split_ratio: d.split_ratio,
            augment: d.augment,
            balance: d.balance,
            seed: d.seed,
        }
    }
}

pub fn dataset(a: DatasetArgs) -> Result<Value, CliError> {
    let mut flags = flags_of(&a);
    flags.insert("augment".into(), switch(a.augment, a.no_augment));
    flags.insert("balance".into(), switch(a.balance, a.no_balance));
    let cfg: DatasetRun = resolve(a.common.config.as_deref(), flags)?;
    let input = require(cfg.input.clone(), "input")?;
    let out = require(cfg.out.clone(), "out")?;
    let labeler = load_labeler(&require(cfg.labeler.clone(), "labeler")?)?;
    if !(cfg.split_ratio > 0.0 && cfg.split_ratio < 1.0) {
        return Err(CliError::Usage("split_ratio must be in (0, 1)".into()));
    }

    let files = score_files(&input)?;
    let mut sources = Vec::new();
    let mut skipped = Vec::new();
    for ((id, _), r) in files.iter().zip(parse_all(&files)) {
        match r {
            Ok(r) => sources.push(SourcePiece { id: id.clone(), score: r.score }),
            Err(e) => skipped.push(json!({ "source": id, "error": e })),
        }
    }
    let dcfg = DatasetConfig {
        min_count: cfg.min_count,
        seed: cfg.seed,
        split_ratio: cfg.split_ratio,
        augment: cfg.augment,
        balance: cfg.balance,
    };
    let (split, log) = build_dataset(&sources, &labeler, &dcfg).map_err(data("dataset"))?;
    let vocab = build_vocab(split.train.iter().map(|r| &r.tokens), cfg.min_count).map_err(data("vocabulary"))?;

    write_file(&out.join(MANIFEST_FILE), write_manifest(&split).as_bytes())?;
    write_file(&out.join(VOCAB_FILE), vocab.to_file_string().as_bytes())?;
    let count = |records: &[sightgen::corpus::FragmentRecord]| -> BTreeMap<&str, usize> {
        DifficultyLabel::ALL.iter().map(|c| (c.name(), records.iter().filter(|r| r.label == *c).count())).collect()
    };
    let summary = json!({
        "sources": sources.len(),
        "skipped_sources": skipped.len(),
        "train": split.train.len(),
        "validation": split.validation.len(),
        "train_classes": count(&split.train),
        "validation_classes": count(&split.validation),
        "vocab_size": vocab.len(),
    });
    let build_log = json!({
        "summary": summary,
        "train_counts_before_balance": log.train_counts,
        "discarded_transpositions": log.discarded_transpositions,
        "untokenizable": log.untokenizable,
        "skipped_sources": skipped,
        "warnings": log.warnings.iter().map(|(s, w)| format!("{s}: {w}")).collect::<Vec<_>>(),
    });
    write_file(&out.join("build_log.json"), (serde_json::to_string_pretty(&build_log).unwrap() + "\n").as_bytes())?;
    write_echo(&out.join("dataset.config.json"), &cfg)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainRun {
    dataset: Option<PathBuf>,
    out: Option<PathBuf>,
    prompt_type: PromptType,
    beta: f64,
    detach: bool,
    d_model: usize,
    layers: usize,
    heads: usize,
    d_ff: usize,
    max_len: usize,
    dropout: f64,
    lr: f64,
    batch_size: usize,
    epochs: usize,
    warmup_steps: usize,
    weight_decay: f64,
    grad_clip: f64,
    eval_every: usize,
    patience: usize,
    seed: u64,
    labeler: Option<PathBuf>,
    select_samples: usize,
}

impl Default for TrainRun {
    fn default() -> Self {
        let m = ModelConfig::default();
        let t = TrainConfig::default();
        TrainRun {
            dataset: None,
            out: None,
            prompt_type: PromptType::Diff,
            beta: t.beta,
            detach: t.detach_aux,
            d_model: m.d_model,
            layers: m.layers,
            heads: m.heads,
            d_ff: m.d_ff,
            max_len: m.max_len,
            dropout: m.dropout,
            lr: t.lr,
            batch_size: t.batch_size,
            epochs: t.epochs,
            warmup_steps: t.warmup_steps,
            weight_decay: t.weight_decay,
            grad_clip: t.grad_clip,
            eval_every: t.eval_every,
            patience: t.patience,
            seed: t.seed,
            labeler: None,
            select_samples: 150,
        }
    }
}

impl TrainRun {
    fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            d_model: self.d_model,
            layers: self.layers,
            heads: self.heads,
            d_ff: self.d_ff,
            max_len: self.max_len,
            dropout: self.dropout,
            num_classes: DifficultyLabel::COUNT,
        }
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            beta: self.beta,
            detach_aux: self.detach,
            lr: self.lr,
            batch_size: self.batch_size,
            epochs: self.epochs,
            warmup_steps: self.warmup_steps,
            weight_decay: self.weight_decay,
            grad_clip: self.grad_clip,
            eval_every: self.eval_every,
            patience: self.patience,
            seed: self.seed,
        }
    }
}

pub fn train(a: TrainArgs) -> Result<Value, CliError> {
    let mut flags = flags_of(&a);
    flags.insert("detach".into(), switch(a.detach, a.no_detach));
    let cfg: TrainRun = resolve(a.common.config.as_deref(), flags)?;
    let dataset = require(cfg.dataset.clone(), "dataset")?;
    let out = require(cfg.out.clone(), "out")?;
    let vocab_path = dataset.join(VOCAB_FILE);
    let vocab = load_vocab(&vocab_path)?;
    let records = load_manifest(&dataset)?;
    let encode = |split: SplitName| -> Result<Vec<_>, CliError> {
        records
            .iter()
            .filter(|r| r.split == split)
            .map(|r| encode_record(r, &vocab, cfg.prompt_type).map_err(data(format!("record {}", r.source))))
            .collect()
    };
    let (train_set, val_set) = (encode(SplitName::Train)?, encode(SplitName::Validation)?);
    let model_cfg = cfg.model_config(vocab.len());
    model_cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let tcfg = cfg.train_config();
    tcfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let longest = train_set.iter().chain(&val_set).map(|e| e.ids.len()).max().unwrap_or(0);
    if longest > model_cfg.max_len {
        return Err(CliError::Usage(format!("longest sequence has {longest} tokens; raise --max-len")));
    }

    let means = class_means(records.iter().filter(|r| r.split == SplitName::Train).map(|r| (&r.features, r.label)));
    let labeler = cfg.labeler.as_deref().map(load_labeler).transpose()?;
    let per_class = cfg.select_samples.div_ceil(DifficultyLabel::COUNT);
    if labeler.is_some() && per_class == 0 {
        return Err(CliError::Usage("select_samples must be >= 1".into()));
    }
    let sampler = SamplerConfig { seed: cfg.seed, ..Default::default() };
    let mut select = |model: &sightgen::Model| {
        let g = Generator { model, vocab: &vocab, prompt_type: cfg.prompt_type, class_means: means };
        // a sampling failure scores as zero accuracy
        eval_conditioning(&g, labeler.as_ref().expect("labeler"), per_class, &sampler).map_or(0.0, |r| r.accuracy)
    };
    let scorer: Option<sightgen::nn::Scorer<'_, f32>> = if labeler.is_some() { Some(&mut select) } else { None };

    let mut log = Vec::new();
    let outcome = train_with::<f32>(&train_set, &val_set, &model_cfg, &tcfg, scorer, &mut |r| log.push(r.clone()))
        .map_err(data("training"))?;
    let best_val_ce = log.iter().map(|r| r.val_ce).fold(f64::INFINITY, f64::min);
    let meta = CheckpointMeta {
        model: model_cfg,
        train: tcfg,
        vocab_hash: vocab.hash(),
        prompt_type: cfg.prompt_type,
        class_means: means.to_vec(),
        log_summary: LogSummary {
            best_epoch: outcome.best_epoch,
            epochs_run: outcome.epochs_run,
            steps: outcome.steps,
            best_val_ce,
            evaluations: log.len(),
        },
    };
    write_file(&out.join(VOCAB_FILE), vocab.to_file_string().as_bytes())?;
    save_checkpoint(&out.join(CHECKPOINT_FILE), &outcome.model, &meta).map_err(data("checkpoint"))?;
    let lines: String = log.iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect();
    write_file(&out.join("train_log.jsonl"), lines.as_bytes())?;
    write_echo(&out.join("train.config.json"), &cfg)?;
    Ok(serde_json::to_value(&meta.log_summary).unwrap())
}

/// Sampler settings as they appear in generate and eval configs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SamplerRun {
    temperature: f64,
    greedy: bool,
    top_k: usize,
    max_tokens: usize,
    bar_limit: usize,
    grammar_filter: bool,
    seed: u64,
}

impl SamplerRun {
    fn with_filter(grammar_filter: bool) -> Self {
        let s = SamplerConfig::default();
        SamplerRun {
            temperature: s.temperature,
            greedy: s.greedy,
            top_k: s.top_k,
            max_tokens: s.max_tokens,
            bar_limit: s.bar_limit,
            grammar_filter,
            seed: s.seed,
        }
    }

    fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            temperature: self.temperature,
            greedy: self.greedy,
            top_k: self.top_k,
            max_tokens: self.max_tokens,
            seed: self.seed,
            bar_limit: self.bar_limit,
            grammar_filter: self.grammar_filter,
        }
    }
}

fn sampler_flags(flags: &mut serde_json::Map<String, Value>, s: &SamplerArgs) {
    flags.insert("greedy".into(), if s.greedy { Value::Bool(true) } else { Value::Null });
    flags.insert("grammar_filter".into(), switch(s.grammar_filter, s.no_grammar_filter));
}

/// Splits a flat config object into the sampler part and the rest.
fn split_sampler(
    file: Option<&Path>,
    mut flags: serde_json::Map<String, Value>,
    default_filter: bool,
) -> Result<(serde_json::Map<String, Value>, SamplerRun), CliError> {
    let merged: serde_json::Map<String, Value> = resolve(file, std::mem::take(&mut flags))?;
    let default = serde_json::to_value(SamplerRun::with_filter(default_filter)).unwrap();
    let keys: Vec<String> = default.as_object().unwrap().keys().cloned().collect();
    let (mut sampler, rest): (serde_json::Map<_, _>, serde_json::Map<_, _>) =
        merged.into_iter().partition(|(k, _)| keys.contains(k));
    for (k, v) in default.as_object().unwrap() {
        sampler.entry(k.clone()).or_insert_with(|| v.clone());
    }
    let sampler: SamplerRun =
        serde_json::from_value(Value::Object(sampler)).map_err(|e| CliError::Usage(format!("configuration: {e}")))?;
    Ok((rest, sampler))
}

/// One flat object holding a command's own settings and its sampler settings.
fn merged(cfg: &impl Serialize, sampler: &SamplerRun) -> Value {
    let mut m = match serde_json::to_value(cfg).unwrap() {
        Value::Object(m) => m,
        _ => unreachable!("configs are structs"),
    };
    m.extend(serde_json::to_value(sampler).unwrap().as_object().unwrap().clone());
    Value::Object(m)
}

fn load_model(
    checkpoint: &Path,
    vocab: Option<PathBuf>,
) -> Result<(sightgen::Model, CheckpointMeta, Vocabulary), CliError> {
    let vocab_path = vocab.unwrap_or_else(|| checkpoint.with_file_name(VOCAB_FILE));
    let vocab = load_vocab(&vocab_path)?;
    let (model, meta) = load_checkpoint(checkpoint, Some(&vocab.hash())).map_err(data(checkpoint.display()))?;
    Ok((model, meta, vocab))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenerateRun {
    #[serde(default)]
    checkpoint: Option<PathBuf>,
    #[serde(default)]
    vocab: Option<PathBuf>,
    #[serde(default)]
    labeler: Option<PathBuf>,
    #[serde(default)]
    class: Option<DifficultyLabel>,
    #[serde(default = "one")]
    n: usize,
    #[serde(default)]
    out: Option<PathBuf>,
}

fn one() -> usize {
    1
}

pub fn generate(a: GenerateArgs) -> Result<Value, CliError> {
    let mut flags = flags_of(&a);
    sampler_flags(&mut flags, &a.sampler);
    let (rest, sampler) = split_sampler(a.common.config.as_deref(), flags, true)?;
    let cfg: GenerateRun =
        serde_json::from_value(Value::Object(rest)).map_err(|e| CliError::Usage(format!("configuration: {e}")))?;
    let checkpoint = require(cfg.checkpoint.clone(), "checkpoint")?;
    let class = require(cfg.class, "class")?;
    let out = require(cfg.out.clone(), "out")?;
    let labeler = cfg.labeler.as_deref().map(load_labeler).transpose()?;
    let (model, meta, vocab) = load_model(&checkpoint, cfg.vocab.clone())?;
    let g = Generator::new(&model, &vocab, &meta).map_err(data("generator"))?;
    let echo = merged(&cfg, &sampler);
    let sampler = sampler.sampler();
    sampler.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let exercises = g.generate_exercises(class, cfg.n, &sampler).map_err(data("generation"))?;
    write_exercises(&out, &exercises, labeler.as_ref()).map_err(data("writing exercises"))?;
    write_echo(&out.join(format!("generate_{}.config.json", class.name())), &echo)?;
    let degenerate = exercises.iter().filter(|e| e.is_degenerate()).count();
    Ok(json!({ "class": class, "generated": exercises.len() - degenerate, "degenerate": degenerate }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalRun {
    #[serde(default)]
    checkpoint: Option<PathBuf>,
    #[serde(default)]
    vocab: Option<PathBuf>,
    #[serde(default)]
    labeler: Option<PathBuf>,
    #[serde(default)]
    dataset: Option<PathBuf>,
    #[serde(default = "hundred")]
    n_per_class: usize,
    #[serde(default)]
    out: Option<PathBuf>,
}

fn hundred() -> usize {
    100
}

pub fn eval(a: EvalArgs) -> Result<Value, CliError> {
    let mut flags = flags_of(&a);
    sampler_flags(&mut flags, &a.sampler);
    let (rest, sampler) = split_sampler(a.common.config.as_deref(), flags, false)?;
    let cfg: EvalRun =
        serde_json::from_value(Value::Object(rest)).map_err(|e| CliError::Usage(format!("configuration: {e}")))?;
    let checkpoint = require(cfg.checkpoint.clone(), "checkpoint")?;
    let labeler = load_labeler(&require(cfg.labeler.clone(), "labeler")?)?;
    let out = require(cfg.out.clone(), "out")?;
    let (model, meta, vocab) = load_model(&checkpoint, cfg.vocab.clone())?;
    let g = Generator::new(&model, &vocab, &meta).map_err(data("generator"))?;
    let echo = merged(&cfg, &sampler);
    let sampler = sampler.sampler();
    sampler.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let mut report = eval_conditioning(&g, &labeler, cfg.n_per_class, &sampler).map_err(data("evaluation"))?;
    if let Some(ds) = &cfg.dataset {
        let examples = load_manifest(ds)?
            .iter()
            .filter(|r| r.split == SplitName::Validation)
            .map(|r| encode_record(r, &vocab, meta.prompt_type))
            .collect::<Result<Vec<_>, _>>()
            .map_err(data("validation records"))?;
        if !examples.is_empty() {
            report.val_ce = Some(eval_val_loss(&model, &examples).map_err(data("validation loss"))?);
        }
    }
    report.config = Some(echo.clone());
    write_file(&out, (serde_json::to_string_pretty(&report).unwrap() + "\n").as_bytes())?;
    write_echo(&echo_beside(&out), &echo)?;
    Ok(json!({
        "samples": report.samples,
        "accuracy": report.accuracy,
        "mse": report.mse,
        "degeneration": report.degeneration,
        "val_ce": report.val_ce,
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GradCheckRun {
    precision: String,
    tolerance: Option<f64>,
    seed: u64,
    out: Option<PathBuf>,
}

impl Default for GradCheckRun {
    fn default() -> Self {
        GradCheckRun { precision: "f64".into(), tolerance: None, seed: 0, out: None }
    }
}

/// Vocabulary size of the grad-check model.
const GRAD_CHECK_VOCAB: usize = 12;

pub fn grad_check(a: GradCheckArgs) -> Result<Value, CliError> {
    let cfg: GradCheckRun = resolve(a.common.config.as_deref(), flags_of(&a))?;
    let out = require(cfg.out.clone(), "out")?;
    let model = ModelConfig::tiny(GRAD_CHECK_VOCAB);
    let report = match cfg.precision.as_str() {
        "f64" => run_grad_check::<f64>(&model, cfg.tolerance.unwrap_or(1e-5), cfg.seed),
        "f32" => run_grad_check::<f32>(&model, cfg.tolerance.unwrap_or(1e-3), cfg.seed),
        p => return Err(CliError::Usage(format!("precision must be f64 or f32, got {p:?}"))),
    }
    .map_err(data("gradient check"))?;
    write_file(&out, (serde_json::to_string_pretty(&report).unwrap() + "\n").as_bytes())?;
    write_echo(&echo_beside(&out), &cfg)?;
    if !report.passed {
        return Err(CliError::Data(format!(
            "gradient check failed: relative error {:.3e} >= {:.0e}",
            report.max_rel_error, report.tolerance
        )));
    }
    Ok(json!({ "passed": true, "max_rel_error": report.max_rel_error, "checked": report.checked }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SynthRun {
    pieces: usize,
    bars: usize,
    seed: u64,
    out: Option<PathBuf>,
}

impl Default for SynthRun {
    fn default() -> Self {
        SynthRun { pieces: 30, bars: 32, seed: 0, out: None }
    }
}

pub fn synth(a: SynthArgs) -> Result<Value, CliError> {
    let cfg: SynthRun = resolve(a.common.config.as_deref(), flags_of(&a))?;
    let out = require(cfg.out.clone(), "out")?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut levels = BTreeMap::new();
    for i in 0..cfg.pieces {
        let level = i % DifficultyLabel::COUNT;
        let mut score = exercise_piece(&mut rng, DifficultyLabel::ALL[level], cfg.bars);
        let stem = format!("piece_{i:04}");
        score.title = Some(stem.clone());
        let xml = serialize(&score).map_err(data(&stem))?;
        write_file(&out.join(format!("{stem}.musicxml")), &xml)?;
        levels.insert(stem, level);
    }
    write_file(&out.join("levels.json"), (serde_json::to_string_pretty(&levels).unwrap() + "\n").as_bytes())?;
    write_echo(&out.join("synth.config.json"), &cfg)?;
    Ok(json!({ "pieces": cfg.pieces, "bars": cfg.bars }))
}
