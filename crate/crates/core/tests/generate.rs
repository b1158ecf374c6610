use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sightgen::difficulty::{extract_descriptors, DifficultyLabel, Labeler, NUM_FEATURES};
use sightgen::generate::{
    encode_record, eval_conditioning, eval_val_loss, sample, score_predictions, sidecar, write_exercises, GenerateError,
    Generator, SamplerConfig, StopReason,
};
use sightgen::nn::{CheckpointMeta, LogSummary, ModelConfig, TrainConfig};
use sightgen::prompt::{build_prompt, format_value, PromptType};
use sightgen::score::validate;
use sightgen::synth::exercise_piece;
use sightgen::tokenizer::{build_vocab, tokenize, Vocabulary, END_ID};
use sightgen::Model;

use DifficultyLabel::{Advanced, Easy, Medium};

fn vocab() -> Vocabulary {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let seqs: Vec<_> =
        (0..30).map(|i| tokenize(&exercise_piece(&mut rng, DifficultyLabel::ALL[i % 3], 16)).unwrap()).collect();
    build_vocab(&seqs, 1).unwrap()
}

fn model(v: &Vocabulary, seed: u64) -> Model {
    let cfg = ModelConfig {
        vocab_size: v.len(),
        d_model: 16,
        layers: 1,
        heads: 2,
        d_ff: 32,
        max_len: 1024,
        dropout: 0.0,
        num_classes: 3,
    };
    Model::new(cfg, seed).unwrap()
}

fn meta(v: &Vocabulary, m: &Model, prompt_type: PromptType) -> CheckpointMeta {
    CheckpointMeta {
        model: m.cfg.clone(),
        train: TrainConfig::default(),
        vocab_hash: v.hash(),
        prompt_type,
        class_means: vec![[0.2; NUM_FEATURES], [0.5; NUM_FEATURES], [0.8; NUM_FEATURES]],
        log_summary: LogSummary::default(),
    }
}

fn filtered(seed: u64) -> SamplerConfig {
    SamplerConfig { grammar_filter: true, seed, ..Default::default() }
}

#[test]
fn greedy_is_deterministic_and_seed_independent() {
    let v = vocab();
    let m = model(&v, 1);
    let p = build_prompt(&[0.5; NUM_FEATURES], Easy, PromptType::Diff);
    let cfg = SamplerConfig { greedy: true, max_tokens: 64, ..Default::default() };
    let a = sample(&m, &v, &p, &cfg).unwrap();
    let b = sample(&m, &v, &p, &SamplerConfig { seed: 99, ..cfg }).unwrap();
    assert_eq!(a.ids, b.ids);
}

#[test]
fn seeded_sampling_is_reproducible() {
    let v = vocab();
    let m = model(&v, 1);
    let p = build_prompt(&[0.5; NUM_FEATURES], Medium, PromptType::Diff);
    let cfg = SamplerConfig { max_tokens: 128, seed: 4, ..Default::default() };
    let a = sample(&m, &v, &p, &cfg).unwrap();
    assert_eq!(a.ids, sample(&m, &v, &p, &cfg).unwrap().ids);
    assert_ne!(a.ids, sample(&m, &v, &p, &SamplerConfig { seed: 5, ..cfg }).unwrap().ids);
}

#[test]
fn filtered_untrained_model_yields_valid_scores() {
    let v = vocab();
    let m = model(&v, 3);
    let g = Generator::new(&m, &v, &meta(&v, &m, PromptType::Diff)).unwrap();
    let out = g.generate_exercises(Easy, 10, &filtered(0)).unwrap();
    assert_eq!(out.len(), 10);
    for e in &out {
        let f = e.fragment.as_ref().expect("filtered output parses");
        assert!(validate(f).is_empty());
        assert!(e.warnings.is_empty(), "{:?}", e.warnings);
        assert!(f.measures.len() <= 16 && !f.measures.is_empty());
        assert_eq!(e.stop, StopReason::End);
        assert_eq!(e.attempts, 1);
        assert_eq!(*e.tokens.tokens().last().unwrap(), v.parsed()[END_ID as usize]);
    }
    let seeds: Vec<u64> = out.iter().map(|e| e.seed).collect();
    assert_eq!(seeds, (0..10).collect::<Vec<_>>());
    assert_eq!(out.iter().map(|e| e.tokens.clone()).collect::<Vec<_>>(), {
        let again = g.generate_exercises(Easy, 10, &filtered(0)).unwrap();
        again.into_iter().map(|e| e.tokens).collect::<Vec<_>>()
    });
}

#[test]
fn bar_limit_is_respected_without_filter() {
    let v = vocab();
    let m = model(&v, 3);
    let p = build_prompt(&[0.5; NUM_FEATURES], Easy, PromptType::Diff);
    for seed in 0..5 {
        let s = sample(&m, &v, &p, &SamplerConfig { seed, bar_limit: 2, ..Default::default() }).unwrap();
        let bars = s.tokens.tokens().iter().filter(|t| t.to_string() == "bar").count();
        assert!(bars <= 2);
        if s.stop == StopReason::BarLimit {
            assert_eq!(*s.ids.last().unwrap(), END_ID);
        }
    }
}

#[test]
fn unfiltered_untrained_model_degenerates_without_crashing() {
    let v = vocab();
    let m = model(&v, 3);
    let g = Generator::new(&m, &v, &meta(&v, &m, PromptType::Diff)).unwrap();
    let out = g.generate_exercises(Advanced, 6, &SamplerConfig { max_tokens: 200, ..Default::default() }).unwrap();
    assert_eq!(out.len(), 6);
    assert!(out.iter().any(|e| e.is_degenerate()));
    for e in out.iter().filter(|e| e.is_degenerate()) {
        assert_eq!(e.attempts, 4);
    }
}

#[test]
fn feature_prompts_carry_class_means() {
    let v = vocab();
    let m = model(&v, 3);
    let mut md = meta(&v, &m, PromptType::Feats);
    md.class_means[2] = std::array::from_fn(|j| j as f64 / 20.0 + 0.004);
    let g = Generator::new(&m, &v, &md).unwrap();
    let p = g.prompt(Advanced);
    for j in 0..NUM_FEATURES {
        let s = format_value(j as f64 / 20.0 + 0.004);
        assert!(p.text.contains(&s), "{s} missing from {}", p.text);
    }
    assert_eq!(p, build_prompt(&md.class_means[2], Advanced, PromptType::Feats));
}

#[test]
fn vocabulary_hash_is_checked() {
    let v = vocab();
    let m = model(&v, 3);
    let mut md = meta(&v, &m, PromptType::Diff);
    md.vocab_hash = "0".repeat(64);
    assert!(matches!(Generator::new(&m, &v, &md), Err(GenerateError::VocabMismatch(_))));
}

#[test]
fn prediction_scoring() {
    let r = score_predictions(&[Easy, Easy, Medium], &[Some(Easy), Some(Medium), Some(Medium)]);
    assert!((r.accuracy - 2.0 / 3.0).abs() < 1e-15);
    assert!((r.mse - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(r.per_class_accuracy["easy"], 0.5);
    assert_eq!(r.per_class_accuracy["medium"], 1.0);
    assert_eq!(r.confusion[0], [1, 1, 0]);

    let r = score_predictions(&[Easy, Advanced], &[None, Some(Easy)]);
    assert_eq!(r.accuracy, 0.0);
    assert_eq!(r.degenerate, 1);
    assert_eq!(r.degeneration, 0.5);
    assert_eq!(r.mse, (4.0 + 4.0) / 2.0);
}

#[test]
fn conditioning_eval_runs_end_to_end() {
    let v = vocab();
    let m = model(&v, 3);
    let g = Generator::new(&m, &v, &meta(&v, &m, PromptType::Diff)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut raw, mut y) = (Vec::new(), Vec::new());
    for i in 0..30 {
        raw.push(extract_descriptors(&exercise_piece(&mut rng, DifficultyLabel::ALL[i % 3], 16)).0);
        y.push(DifficultyLabel::ALL[i % 3]);
    }
    let lab = Labeler::fit(&raw, &y).unwrap();
    let r = eval_conditioning(&g, &lab, 3, &filtered(1)).unwrap();
    assert_eq!(r.samples, 9);
    assert_eq!(r.degenerate, 0);
    assert_eq!(r.confusion.iter().flatten().sum::<usize>(), 9);
    assert_eq!(r, eval_conditioning(&g, &lab, 3, &filtered(1)).unwrap());
}

#[test]
fn untrained_uniform_model_has_log_vocab_loss() {
    let v = vocab();
    let cfg = model(&v, 0).cfg.clone();
    let m = Model::zeroed(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let f = exercise_piece(&mut rng, Easy, 16);
    let features = extract_descriptors(&f).0.map(|x| x.clamp(0.0, 1.0));
    let rec = sightgen::corpus::ManifestRecord {
        split: sightgen::corpus::SplitName::Validation,
        source: "x".into(),
        start_measure: 0,
        transpose: 0,
        label: Easy,
        features,
        tokens: tokenize(&f).unwrap().to_text(),
    };
    let ex = encode_record(&rec, &v, PromptType::FeatsCot).unwrap();
    let ce = eval_val_loss(&m, &[ex]).unwrap();
    assert!((ce - (v.len() as f64).ln()).abs() < 1e-5, "{ce}");
}

#[test]
fn exercises_are_written_with_sidecars() {
    let v = vocab();
    let m = model(&v, 3);
    let g = Generator::new(&m, &v, &meta(&v, &m, PromptType::Diff)).unwrap();
    let out = g.generate_exercises(Medium, 2, &filtered(0)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let paths = write_exercises(dir.path(), &out, None).unwrap();
    assert!(paths.iter().any(|p| p.ends_with("medium_0.musicxml")));
    assert!(dir.path().join("medium_1.json").exists());
    let s = sidecar(&out[0], None);
    assert_eq!(s.class, Medium);
    assert!(!s.degenerate);
    assert!(s.predicted.is_none());
}
