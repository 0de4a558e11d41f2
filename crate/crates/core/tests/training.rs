//! Training-loop, memory and checkpoint properties on synthetic data.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spaneit::autodiff::Tape;
use spaneit::config::{AblationFlags, ExperimentConfig, ModelConfig};
use spaneit::corpus::{synth_corpus, tokenize, AnnotatedExample, ClassWeights, Sentiment};
use spaneit::head::LossWeights;
use spaneit::model::{PreparedExample, SpanEit};
use spaneit::trainer::{build_model, encode_checkpoint, evaluate, load_model, train_multi, train_seed, Trainer};

fn small(flags: AblationFlags) -> ExperimentConfig {
    let mut exp = ExperimentConfig::default();
    exp.model =
        ModelConfig { hidden_dim: 8, heads: 2, gat_heads: 2, enc_layers: 1, ablation: flags, ..ModelConfig::default() };
    exp.train.epochs = 3;
    exp.train.seeds = vec![42];
    exp.train.bootstrap = 0;
    exp
}

#[test]
fn same_seed_gives_identical_metrics_and_checkpoints() {
    let data = synth_corpus(40, 1);
    let exp = small(AblationFlags::FULL);
    let a = train_seed(&data, &exp, 42).unwrap();
    let b = train_seed(&data, &exp, 42).unwrap();
    assert_eq!(a.summary, b.summary);
    assert_eq!(a.history, b.history);
    assert_eq!(encode_checkpoint(&a.model), encode_checkpoint(&b.model));
}

#[test]
fn degenerate_run_without_aux_losses_or_structure() {
    let mut exp = small(AblationFlags::ONLY_TEXT);
    exp.model.loss = LossWeights::ZERO;
    exp.train.seeds = vec![42, 43];
    let run = train_multi(&synth_corpus(30, 2), &exp).unwrap();
    for s in &run.report.per_seed {
        for k in 0..3 {
            assert!((0.0..=1.0).contains(&s.test.get(k)));
        }
        assert_eq!(s.test.micro_f1, s.test.accuracy);
    }
}

#[test]
fn batch_order_does_not_change_the_update_without_memory() {
    let data = synth_corpus(24, 3);
    let mut exp = small(AblationFlags { use_memory: false, ..AblationFlags::FULL });
    exp.model.dropout = 0.0;
    let (model, w) = build_model(&data, &exp, 5).unwrap();
    let prepared = model.prepare_all(&data[..8]).unwrap();
    let forward: Vec<&PreparedExample> = prepared.iter().collect();
    let backward: Vec<&PreparedExample> = prepared.iter().rev().collect();
    let mut a = Trainer::new(model.clone(), exp.train.clone(), w, 5).unwrap();
    let mut b = Trainer::new(model, exp.train.clone(), w, 5).unwrap();
    let la = a.train_batch(&forward).unwrap();
    let lb = b.train_batch(&backward).unwrap();
    assert!((la - lb).abs() <= 1e-12);
    for ((name, pa), (_, pb)) in a.model.params.iter().zip(b.model.params.iter()) {
        for (x, y) in pa.value.data().iter().zip(pb.value.data()) {
            assert!((x - y).abs() <= 1e-12, "{name}: {x} vs {y}");
        }
    }
}

#[test]
fn full_model_overfits_the_synthetic_corpus() {
    let data = synth_corpus(200, 11);
    let exp = ExperimentConfig::default();
    let (model, w) = build_model(&data, &exp, 42).unwrap();
    let prepared = model.prepare_all(&data).unwrap();
    let mut trainer = Trainer::new(model, exp.train.clone(), w, 42).unwrap();
    let first_loss = trainer.train_epoch(&prepared).unwrap();
    let mut reached = None;
    let mut loss = first_loss;
    for epoch in 2..=50 {
        loss = trainer.train_epoch(&prepared).unwrap();
        if reached.is_none() && trainer.evaluate(&prepared).unwrap().metrics.accuracy >= 0.95 {
            reached = Some(epoch);
        }
    }
    assert!(reached.is_some(), "train accuracy stayed below 0.95 for 50 epochs");
    assert!(loss <= 0.5 * first_loss, "loss {first_loss} -> {loss}");
}

#[test]
fn checkpoint_roundtrip_preserves_eval_metrics() {
    let data = synth_corpus(60, 4);
    let exp = small(AblationFlags::FULL);
    let run = train_seed(&data, &exp, 42).unwrap();
    let restored = load_model(&encode_checkpoint(&run.model)).unwrap();
    let prepared = run.model.prepare_all(&data).unwrap();
    let a = evaluate(&run.model, &prepared, &run.class_weights).unwrap();
    let b = evaluate(&restored, &restored.prepare_all(&data).unwrap(), &run.class_weights).unwrap();
    for k in 0..3 {
        assert!((a.metrics.get(k) - b.metrics.get(k)).abs() < 1e-4);
    }
    assert!((a.loss - b.loss).abs() < 1e-4);
}

fn example(text: &str, entity: &str, coref: u64, label: Sentiment) -> AnnotatedExample {
    AnnotatedExample {
        tokens: tokenize(text),
        entity_surface: entity.into(),
        entity_type: "ORG".into(),
        coref_id: coref,
        label,
    }
}

fn eval_logits(model: &SpanEit, data: &[PreparedExample]) -> Vec<Vec<f64>> {
    let mut bank = model.new_memory_bank();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    data.iter()
        .enumerate()
        .map(|(i, ex)| {
            let mut tape = Tape::new();
            let out = model.forward(&mut tape, ex, &mut bank, i as u64, false, &mut rng).unwrap();
            tape.value(out.logits).data().to_vec()
        })
        .collect()
}

#[test]
fn memory_makes_evaluation_order_sensitive() {
    let data = vec![
        example("tesla posted great results", "tesla", 0, Sentiment::Positive),
        example("apple saw weak sales", "apple", 1, Sentiment::Negative),
        example("tesla had terrible news", "tesla", 0, Sentiment::Negative),
    ];
    let reordered = vec![data[2].clone(), data[1].clone(), data[0].clone()];
    for (flags, sensitive) in
        [(AblationFlags::FULL, true), (AblationFlags { use_memory: false, ..AblationFlags::FULL }, false)]
    {
        let (model, _) = build_model(&data, &small(flags), 9).unwrap();
        let fwd = eval_logits(&model, &model.prepare_all(&data).unwrap());
        let rev = eval_logits(&model, &model.prepare_all(&reordered).unwrap());
        // the other cluster's example sits in the middle in both orders
        assert_eq!(fwd[1], rev[1]);
        assert_eq!(fwd[2] != rev[0], sensitive);
        assert_eq!(fwd[0] != rev[2], sensitive);
    }
}

#[test]
fn second_same_cluster_example_sees_the_first() {
    let data = vec![
        example("amazon delivered strong earnings", "amazon", 4, Sentiment::Positive),
        example("amazon reported poor service", "amazon", 4, Sentiment::Negative),
    ];
    let (model, _) = build_model(&data, &small(AblationFlags::FULL), 3).unwrap();
    let prepared = model.prepare_all(&data).unwrap();
    let together = eval_logits(&model, &prepared);
    let cold: Vec<Vec<f64>> =
        prepared.iter().map(|p| eval_logits(&model, std::slice::from_ref(p))[0].clone()).collect();
    assert_eq!(together[0], cold[0]);
    assert_ne!(together[1], cold[1]);
}

#[test]
fn uniform_class_weights_are_used_when_a_class_is_missing() {
    let data: Vec<_> = synth_corpus(60, 5).into_iter().filter(|e| e.label != Sentiment::Neutral).collect();
    let (_, w) = build_model(&data, &small(AblationFlags::FULL), 1).unwrap();
    assert_eq!(w, ClassWeights::uniform());
}
