use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sightgen::nn::{
    checkpoint_bytes, checkpoint_from_bytes, grad_check, load_checkpoint, loss_aux, loss_ce, loss_total, random_batch,
    save_checkpoint, shift_targets, train, AdamW, CheckpointMeta, Decoder, Example, LogSummary, ModelConfig, NnError,
    TrainConfig, Transformer,
};
use sightgen::prompt::PromptType;
use sightgen::tokenizer::{END_ID, SEP_ID};
use sightgen::{Model, Model64};

fn small_cfg(vocab: usize) -> ModelConfig {
    ModelConfig { vocab_size: vocab, d_model: 32, layers: 2, heads: 4, d_ff: 64, max_len: 48, dropout: 0.0, num_classes: 3 }
}

fn seq(rng: &mut ChaCha8Rng, vocab: u32, len: usize) -> Vec<u32> {
    let mut ids: Vec<u32> = (0..len).map(|_| rng.gen_range(4..vocab)).collect();
    ids[2] = SEP_ID;
    ids[len - 1] = END_ID;
    ids
}

#[test]
fn strict_causality() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for layers in 1..=3 {
        let cfg = ModelConfig { layers, ..small_cfg(30) };
        let m = Model64::new(cfg, 7).unwrap();
        let a = seq(&mut rng, 30, 20);
        let base = m.logits(&a).unwrap();
        for j in [0usize, 5, 12, 19] {
            let mut b = a.clone();
            b[j] = if b[j] == 4 { 5 } else { 4 };
            let pert = m.logits(&b).unwrap();
            for t in 0..20 {
                let same = base[t * 30..(t + 1) * 30] == pert[t * 30..(t + 1) * 30];
                assert_eq!(same, t < j, "layers {layers}, perturb {j}, position {t}");
            }
        }
    }
}

#[test]
fn padding_does_not_change_logits() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let m = Model::new(small_cfg(30), 3).unwrap();
    let a = seq(&mut rng, 30, 10);
    let b = seq(&mut rng, 30, 25);
    let single = m.forward(&[a.clone()], &[10]).unwrap();
    let mut padded = a.clone();
    padded.resize(25, 0);
    let batch = m.forward(&[padded, b], &[10, 25]).unwrap();
    assert_eq!(single[0].logits.len(), batch[0].logits.len());
    for (x, y) in single[0].logits.iter().zip(&batch[0].logits) {
        assert!((x - y).abs() <= 1e-5);
    }
    assert_eq!(single[0].end_hidden, batch[0].end_hidden);
}

#[test]
fn forward_errors() {
    let m = Model::new(small_cfg(30), 3).unwrap();
    let long = vec![5u32; 49];
    assert_eq!(m.logits(&long), Err(NnError::SequenceTooLong { len: 49, max: 48 }));
    assert!(matches!(m.forward(&[vec![5, 6, 7]], &[3]), Err(NnError::MissingEnd)));
    assert!(matches!(m.logits(&[5, 31]), Err(NnError::TokenOutOfRange(31))));
}

#[test]
fn zero_output_projection_gives_uniform_distribution() {
    let mut m = Model64::new(small_cfg(25), 1).unwrap();
    for t in &mut m.lm.tensors {
        if t.name.starts_with("out.") {
            t.data.fill(0.0);
        }
    }
    let ids = vec![4, 5, SEP_ID, 6, END_ID];
    let logits = m.logits(&ids).unwrap();
    let (targets, mask) = shift_targets(&ids, &[true; 5]);
    let ce = loss_ce(&logits, 25, &targets[..4], &mask[..4]).unwrap();
    assert!((ce - 25f64.ln()).abs() < 1e-12);
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let m = Model::new(small_cfg(40), 2).unwrap();
    let logits = m.logits(&seq(&mut rng, 40, 30)).unwrap();
    for row in logits.chunks(40) {
        let mx = row.iter().cloned().fold(f32::MIN, f32::max) as f64;
        let z: f64 = row.iter().map(|&v| (v as f64 - mx).exp()).sum();
        let s: f64 = row.iter().map(|&v| (v as f64 - mx).exp() / z).sum();
        assert!((s - 1.0).abs() < 1e-6);
    }
}

#[test]
fn cross_entropy_values() {
    let v = 7;
    let uniform = vec![0.3f64; 2 * v];
    assert_eq!(loss_ce(&uniform, v, &[1, 5], &[true, true]).unwrap(), (v as f64).ln());
    let mut sharp = vec![0.0f64; 2 * v];
    sharp[3] = 60.0;
    sharp[v + 2] = 60.0;
    assert!(loss_ce(&sharp, v, &[3, 2], &[true, true]).unwrap() < 1e-20);
    assert_eq!(loss_ce(&sharp, v, &[3, 2], &[false, false]), Err(NnError::EmptyMask));

    // two positions, three tokens, against a direct softmax
    let logits = [1.0f64, 2.0, 0.5, -1.0, 0.0, 3.0];
    let p0 = 2f64.exp() / (1f64.exp() + 2f64.exp() + 0.5f64.exp());
    let p1 = (-1f64).exp() / ((-1f64).exp() + 1.0 + 3f64.exp());
    let want = -(p0.ln() + p1.ln()) / 2.0;
    assert!((loss_ce(&logits, 3, &[1, 0], &[true, true]).unwrap() - want).abs() < 1e-12);
    // masked rows are ignored whatever their target
    let only_first = loss_ce(&logits, 3, &[1, 2], &[true, false]).unwrap();
    assert!((only_first + p0.ln()).abs() < 1e-12);
}

#[test]
fn aux_and_total_losses() {
    let m = Model64::zeroed(small_cfg(20)).unwrap();
    let h = vec![0.7; 32];
    for label in 0..3 {
        let out = loss_aux(&m.aux, &h, label, true);
        assert!((out.loss - 3f64.ln()).abs() < 1e-15);
        assert!(out.grad_hidden.is_none());
    }
    assert!(loss_aux(&m.aux, &h, 1, false).grad_hidden.is_some());
    assert!((loss_total(1.30, 0.5, 0.1) - 1.35).abs() < 1e-15);
    assert_eq!(loss_total(1.3, 0.5, 0.0), 1.3);
    assert_eq!(loss_total(0.8, 0.8, 1.0), 1.6);
}

fn batch(seed: u64, cfg: &ModelConfig, n: usize) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_batch(&mut rng, cfg, n)
}

#[test]
fn detached_aux_leaves_lm_gradients_untouched() {
    let cfg = ModelConfig { dropout: 0.1, ..small_cfg(30) };
    let m = Model::new(cfg.clone(), 4).unwrap();
    let b = batch(5, &cfg, 6);
    let (_, g0) = m.batch_gradients(&b, 0.0, true, Some(11)).unwrap();
    let (_, g1) = m.batch_gradients(&b, 0.1, true, Some(11)).unwrap();
    assert_eq!(g0.lm, g1.lm);
    assert!(g1.aux.norm() > 0.0);
    assert_eq!(g0.aux.norm(), 0.0);

    let (_, u0) = m.batch_gradients(&b, 0.0, false, Some(11)).unwrap();
    let (_, u1) = m.batch_gradients(&b, 0.1, false, Some(11)).unwrap();
    assert_eq!(u0.lm, g0.lm);
    assert_ne!(u0.lm, u1.lm);

    // one optimizer step keeps the language-model parameters identical
    let step = |g: &sightgen::nn::Gradients<f32>| {
        let mut p = m.lm.clone();
        AdamW::new(&p, 0.01).step(&mut p, &g.lm, 1e-3);
        p
    };
    assert_eq!(step(&g0), step(&g1));
}

#[test]
fn ce_ignores_prompt_targets() {
    let cfg = small_cfg(30);
    let m = Model64::new(cfg.clone(), 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for b in batch(6, &cfg, 8) {
        let logits = m.logits(&b.ids).unwrap();
        let (targets, mask) = shift_targets(&b.ids, &b.mask);
        let base = loss_ce(&logits, 30, &targets, &mask).unwrap();
        let mut corrupted = targets.clone();
        for (t, &keep) in corrupted.iter_mut().zip(&mask) {
            if !keep {
                *t = rng.gen_range(0..30);
            }
        }
        assert_eq!(loss_ce(&logits, 30, &corrupted, &mask).unwrap(), base);
    }
}

#[test]
fn decoder_matches_full_forward() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let m = Model64::new(small_cfg(30), 5).unwrap();
    let ids = seq(&mut rng, 30, 40);
    let full = m.logits(&ids).unwrap();
    let mut dec = Decoder::new(&m);
    for (t, &id) in ids.iter().enumerate() {
        let step = dec.step(id).unwrap();
        for (a, b) in step.iter().zip(&full[t * 30..(t + 1) * 30]) {
            assert!((a - b).abs() < 1e-10);
        }
    }
    assert!(matches!(dec.step(4), Ok(_)));
    let mut dec = Decoder::new(&m);
    for _ in 0..48 {
        dec.step(4).unwrap();
    }
    assert!(matches!(dec.step(4), Err(NnError::SequenceTooLong { .. })));
}

fn memorize_set(cfg: &ModelConfig) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    (0..8)
        .map(|i| {
            let ids = seq(&mut rng, cfg.vocab_size as u32, 24);
            Example::new(ids, i % 3).unwrap()
        })
        .collect()
}

#[test]
fn overfits_a_tiny_set() {
    let cfg = small_cfg(24);
    let data = memorize_set(&cfg);
    let tc = TrainConfig {
        lr: 3e-3,
        batch_size: 8,
        epochs: 500,
        warmup_steps: 20,
        eval_every: 500,
        patience: 1,
        seed: 1,
        ..TrainConfig::default()
    };
    let out = train::<f32>(&data, &data, &cfg, &tc).unwrap();
    assert_eq!(out.steps, 500);
    let ce = out.model.evaluate(&data).unwrap().ce;
    assert!(ce < 0.05, "train CE {ce}");
}

#[test]
fn training_is_deterministic_and_keeps_best() {
    let cfg = ModelConfig { dropout: 0.1, ..small_cfg(24) };
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let data: Vec<Example> = (0..200).map(|i| Example::new(seq(&mut rng, 24, 12 + i % 10), i % 3).unwrap()).collect();
    let (tr, va) = data.split_at(160);
    let tc = TrainConfig { batch_size: 16, epochs: 30, warmup_steps: 10, seed: 3, ..TrainConfig::default() };
    let a = train::<f32>(tr, va, &cfg, &tc).unwrap();
    let b = train::<f32>(tr, va, &cfg, &tc).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.log, b.log);
    for w in a.log.windows(2) {
        assert!(w[1].best_val_ce <= w[0].best_val_ce);
    }
    assert!(a.log.iter().all(|r| r.epoch % 2 == 0 || r.epoch == 30));
}

#[test]
fn non_finite_loss_aborts() {
    let cfg = small_cfg(24);
    let data = memorize_set(&cfg);
    let tc = TrainConfig { lr: f64::MAX, epochs: 2, ..TrainConfig::default() };
    assert!(matches!(train::<f32>(&data, &data, &cfg, &tc), Err(NnError::NonFiniteLoss { .. })));
}

fn meta(cfg: &ModelConfig, hash: &str) -> CheckpointMeta {
    CheckpointMeta {
        model: cfg.clone(),
        train: TrainConfig::default(),
        vocab_hash: hash.into(),
        prompt_type: PromptType::Diff,
        class_means: vec![[0.5; 12]; 3],
        log_summary: LogSummary::default(),
    }
}

#[test]
fn checkpoint_round_trip() {
    let cfg = small_cfg(30);
    let m = Model::new(cfg.clone(), 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&path, &m, &meta(&cfg, "abc")).unwrap();
    let (back, md) = load_checkpoint(&path, Some("abc")).unwrap();
    assert_eq!(back, m);
    assert_eq!(md, meta(&cfg, "abc"));
    let ids = vec![4, 5, SEP_ID, 9, END_ID];
    assert_eq!(back.logits(&ids).unwrap(), m.logits(&ids).unwrap());

    let bytes = checkpoint_bytes(&m, &meta(&cfg, "abc"));
    for cut in [3, 20, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(checkpoint_from_bytes(&bytes[..cut], None), Err(NnError::CorruptCheckpoint(_))));
    }
    assert!(matches!(checkpoint_from_bytes(&bytes, Some("xyz")), Err(NnError::VocabMismatch { .. })));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(checkpoint_from_bytes(&bad, None), Err(NnError::CorruptCheckpoint(_))));
}

#[test]
fn gradients_match_finite_differences() {
    let r = grad_check::<f64>(&ModelConfig::tiny(20), 1e-5, 1).unwrap();
    assert!(r.passed, "{r:?}");
    assert_eq!(r.cases.len(), 6);
    let r = grad_check::<f32>(&ModelConfig::tiny(20), 1e-3, 2).unwrap();
    assert!(r.passed, "{r:?}");
}

#[test]
fn generic_over_precision() {
    let m32 = Transformer::<f32>::new(small_cfg(20), 1).unwrap();
    let m64: Transformer<f64> = m32.cast();
    let ids = vec![4, 5, SEP_ID, 9, 11, END_ID];
    let (a, b) = (m32.logits(&ids).unwrap(), m64.logits(&ids).unwrap());
    for (x, y) in a.iter().zip(&b) {
        assert!((*x as f64 - y).abs() < 1e-5);
    }
}
