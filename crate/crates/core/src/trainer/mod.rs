//! Training loop, evaluation, multi-seed aggregation and checkpoints.

mod checkpoint;
mod metrics;
mod optim;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_into, load_model, save_checkpoint, DecodedCheckpoint,
    FORMAT_VERSION, MAGIC,
};
pub use metrics::{
    bootstrap_ci, confusion, mean_std, metrics, BootstrapCi, Interval, Metrics, MetricsReport, SeedMetrics, METRIC_KEYS,
};
pub use optim::AdamW;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamStore, Tape};
use crate::config::{ExperimentConfig, TrainConfig};
use crate::corpus::{class_counts, AnnotatedExample, ClassWeights, Vocabulary};
use crate::error::{Error, Result};
use crate::interaction_memory::MemoryBank;
use crate::model::{argmax, PreparedExample, SpanEit};
use crate::span_extract::PolarityLexicon;
use crate::span_graph::build_cooccurrence;

const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;
const SPLIT_STREAM: u64 = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Vec<AnnotatedExample>,
    pub val: Vec<AnnotatedExample>,
    pub test: Vec<AnnotatedExample>,
}

/// Shuffle with `seed`, then cut 80/10/10 (validation and test take
/// `floor(n / 10)` each, training keeps the rest).
pub fn split_dataset(examples: &[AnnotatedExample], seed: u64) -> Result<Splits> {
    let n = examples.len();
    let n_eval = n / 10;
    if n_eval == 0 {
        return Err(Error::contract(format!("{n} examples leave an empty validation/test split (need >= 10)")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SPLIT_STREAM);
    idx.shuffle(&mut rng);
    let take = |r: &[usize]| r.iter().map(|&i| examples[i].clone()).collect::<Vec<_>>();
    Ok(Splits { train: take(&idx[2 * n_eval..]), val: take(&idx[..n_eval]), test: take(&idx[n_eval..2 * n_eval]) })
}

/// Inverse-frequency weights from the training split; uniform when a class
/// is missing.
pub fn train_class_weights(train: &[AnnotatedExample]) -> ClassWeights {
    match ClassWeights::from_counts(class_counts(train)) {
        Ok(w) => w,
        Err(e) => {
            log::warn!("{e}; using uniform class weights");
            ClassWeights::uniform()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    /// Mean total loss per example.
    pub loss: f64,
    pub preds: Vec<usize>,
    pub golds: Vec<usize>,
    pub metrics: Metrics,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Optimizer state and RNG streams for one model.
pub struct Trainer {
    pub model: SpanEit,
    pub config: TrainConfig,
    pub class_weights: ClassWeights,
    opt: AdamW,
    shuffle_rng: ChaCha8Rng,
    dropout_rng: ChaCha8Rng,
    bank: MemoryBank,
    step: u64,
}

impl Trainer {
    pub fn new(model: SpanEit, config: TrainConfig, class_weights: ClassWeights, seed: u64) -> Result<Self> {
        config.validate()?;
        let opt = AdamW::new(&model.params, &config);
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed);
        shuffle_rng.set_stream(SHUFFLE_STREAM);
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(seed);
        dropout_rng.set_stream(DROPOUT_STREAM);
        let bank = model.new_memory_bank();
        Ok(Self { model, config, class_weights, opt, shuffle_rng, dropout_rng, bank, step: 0 })
    }

    pub fn optimizer_steps(&self) -> i32 {
        self.opt.steps()
    }

    /// One pass over `data` in shuffled order; returns the mean training loss.
    /// The memory bank starts empty.
    pub fn train_epoch(&mut self, data: &[PreparedExample]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::contract("empty training split"));
        }
        self.bank.reset();
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.shuffle_rng);
        let mut total = 0.0;
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<&PreparedExample> = chunk.iter().map(|&i| &data[i]).collect();
            total += self.train_batch(&batch)?;
        }
        Ok(total / data.len() as f64)
    }

    /// Sum gradients over the batch, average by its size and take one
    /// optimizer step. Returns the summed loss.
    pub fn train_batch(&mut self, batch: &[&PreparedExample]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::contract("empty batch"));
        }
        self.model.params.zero_grad();
        let mut total = 0.0;
        for ex in batch {
            let mut tape = Tape::new();
            let out = self.model.forward(&mut tape, ex, &mut self.bank, self.step, true, &mut self.dropout_rng)?;
            self.step += 1;
            let loss = self.model.loss(&mut tape, &out, ex.label, &self.class_weights)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::contract(format!("non-finite training loss {value}")));
            }
            total += value;
            tape.backward(loss)?.accumulate_into(&tape, &mut self.model.params);
        }
        self.model.params.scale_grads(1.0 / batch.len() as f64);
        self.opt.step(&mut self.model.params);
        Ok(total)
    }

    pub fn evaluate(&self, data: &[PreparedExample]) -> Result<EvalResult> {
        evaluate(&self.model, data, &self.class_weights)
    }
}

/// Eval-mode pass in dataset order with a fresh memory bank.
pub fn evaluate(model: &SpanEit, data: &[PreparedExample], weights: &ClassWeights) -> Result<EvalResult> {
    if data.is_empty() {
        return Err(Error::contract("empty evaluation split"));
    }
    let mut bank = model.new_memory_bank();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut loss = 0.0;
    let mut preds = Vec::with_capacity(data.len());
    let mut golds = Vec::with_capacity(data.len());
    for (step, ex) in data.iter().enumerate() {
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, ex, &mut bank, step as u64, false, &mut rng)?;
        let l = model.loss(&mut tape, &out, ex.label, weights)?;
        loss += tape.value(l).item();
        preds.push(argmax(tape.value(out.logits).data()));
        golds.push(ex.label);
    }
    let metrics = metrics(&preds, &golds)?;
    Ok(EvalResult { loss: loss / data.len() as f64, preds, golds, metrics })
}

/// Build vocabulary, co-occurrence table and class weights from `train`
/// and initialise a model with `seed`.
pub fn build_model(train: &[AnnotatedExample], exp: &ExperimentConfig, seed: u64) -> Result<(SpanEit, ClassWeights)> {
    let vocab = Vocabulary::build(train, exp.train.min_count);
    let cooc = build_cooccurrence(train, &PolarityLexicon::builtin());
    let model = SpanEit::new(exp.model.clone(), vocab, cooc, seed)?;
    Ok((model, train_class_weights(train)))
}

pub struct SeedRun {
    pub seed: u64,
    /// Model restored to the best validation epoch.
    pub model: SpanEit,
    pub class_weights: ClassWeights,
    pub history: Vec<EpochRecord>,
    pub test: EvalResult,
    pub summary: SeedMetrics,
}

/// Train one seed with early stopping on validation loss and evaluate the
/// restored best parameters on the test split.
pub fn train_seed(examples: &[AnnotatedExample], exp: &ExperimentConfig, seed: u64) -> Result<SeedRun> {
    exp.validate()?;
    let splits = split_dataset(examples, seed)?;
    let (model, weights) = build_model(&splits.train, exp, seed)?;
    let train = model.prepare_all(&splits.train)?;
    let val = model.prepare_all(&splits.val)?;
    let test = model.prepare_all(&splits.test)?;
    let mut trainer = Trainer::new(model, exp.train.clone(), weights, seed)?;

    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut history = Vec::new();
    let mut since_best = 0;
    for epoch in 1..=exp.train.epochs {
        let train_loss = trainer.train_epoch(&train)?;
        let val_loss = trainer.evaluate(&val)?.loss;
        log::info!("seed {seed} epoch {epoch}: train loss {train_loss:.4}, val loss {val_loss:.4}");
        history.push(EpochRecord { epoch, train_loss, val_loss });
        if best.as_ref().is_none_or(|(b, _, _)| val_loss < *b) {
            best = Some((val_loss, epoch, trainer.model.params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= exp.train.patience {
                break;
            }
        }
    }
    let (best_val_loss, best_epoch, params) = best.ok_or_else(|| Error::config("epochs must be >= 1"))?;
    trainer.model.params = params;
    let test_eval = trainer.evaluate(&test)?;
    let summary = SeedMetrics { seed, test: test_eval.metrics, best_epoch, epochs_run: history.len(), best_val_loss };
    Ok(SeedRun { seed, model: trainer.model, class_weights: trainer.class_weights, history, test: test_eval, summary })
}

pub struct MultiRun {
    pub runs: Vec<SeedRun>,
    pub report: MetricsReport,
}

/// Train every seed in `exp.train.seeds` and aggregate the test metrics.
pub fn train_multi(examples: &[AnnotatedExample], exp: &ExperimentConfig) -> Result<MultiRun> {
    exp.validate()?;
    let mut runs = Vec::with_capacity(exp.train.seeds.len());
    for &seed in &exp.train.seeds {
        runs.push(train_seed(examples, exp, seed)?);
    }
    let preds: Vec<usize> = runs.iter().flat_map(|r| r.test.preds.iter().copied()).collect();
    let golds: Vec<usize> = runs.iter().flat_map(|r| r.test.golds.iter().copied()).collect();
    let per_seed = runs.iter().map(|r| r.summary.clone()).collect();
    let report = MetricsReport::aggregate(per_seed, (&preds, &golds), exp.train.bootstrap)?;
    Ok(MultiRun { runs, report })
}
