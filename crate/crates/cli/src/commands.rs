use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use spaneit::config::{AblationFlags, ExperimentConfig};
use spaneit::corpus::{load_csv, stats, synth_corpus, write_csv, AnnotatedExample, ClassWeights};
use spaneit::model::SpanEit;
use spaneit::span_extract::PolarityLexicon;
use spaneit::span_graph::build_cooccurrence;
use spaneit::trainer::{
    bootstrap_ci, encode_checkpoint, evaluate, load_checkpoint, train_multi, MultiRun, METRIC_KEYS,
};
use spaneit::Error;

use crate::args::{AblateArgs, DataArgs, EvalArgs, ModelArgs, PreprocessArgs, SynthArgs, TrainArgs};
use crate::manifest::{blob_sha256, run_manifest};

/// Failure with its process exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Runtime(m) => m,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Config(_) => CliError::Usage(msg),
            Error::Io { .. } | Error::Format(_) | Error::Row { .. } | Error::Shape { .. } => CliError::Data(msg),
            Error::Contract(_) | Error::Dimension(_) => CliError::Runtime(msg),
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| CliError::from(Error::io(path, e)))
}

/// Loaded examples plus a description and the raw bytes used for hashing.
pub struct Dataset {
    pub examples: Vec<AnnotatedExample>,
    pub source: String,
    pub bytes: Vec<u8>,
}

pub fn load_data(args: &DataArgs) -> CliResult<Dataset> {
    if let Some(path) = &args.data {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let loaded = load_csv(path)?;
        for s in &loaded.skipped {
            log::warn!("skipped line {}: {}", s.line, s.reason);
        }
        if loaded.examples.is_empty() {
            return Err(CliError::Data(format!("{} contains no usable examples", path.display())));
        }
        return Ok(Dataset { examples: loaded.examples, source: path.display().to_string(), bytes });
    }
    let n = args.synth.ok_or_else(|| CliError::Usage("one of --data or --synth is required".into()))?;
    if n == 0 {
        return Err(CliError::Usage("--synth needs at least one example".into()));
    }
    let examples = synth_corpus(n, args.synth_seed);
    let mut bytes = Vec::new();
    write_csv(&mut bytes, &examples)?;
    Ok(Dataset { examples, source: format!("synth n={n} seed={}", args.synth_seed), bytes })
}

/// Defaults, then `--config`, then explicit flags.
pub fn experiment_config(args: &ModelArgs) -> CliResult<ExperimentConfig> {
    let mut exp = ExperimentConfig::default();
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        exp.apply_text(&text)?;
    }
    let overrides = args.overrides();
    exp.apply(overrides.iter().map(|(k, v)| (*k, v.as_str())))?;
    exp.validate()?;
    Ok(exp)
}

pub fn cmd_stats(args: &DataArgs) -> CliResult<String> {
    Ok(stats(&load_data(args)?.examples).to_string())
}

pub fn cmd_synth(args: &SynthArgs) -> CliResult<String> {
    if args.synth == 0 {
        return Err(CliError::Usage("--synth needs at least one example".into()));
    }
    let examples = synth_corpus(args.synth, args.synth_seed);
    let mut bytes = Vec::new();
    write_csv(&mut bytes, &examples)?;
    write_file(&args.out, bytes)?;
    Ok(format!("wrote {} examples to {}\n", examples.len(), args.out.display()))
}

pub fn cmd_preprocess(args: &PreprocessArgs) -> CliResult<String> {
    let data = load_data(&args.data)?;
    let mut exp = ExperimentConfig::default();
    if let Some(w) = args.window {
        exp.set("window", &w.to_string())?;
    }
    if let Some(k) = args.num_spans {
        exp.set("num_spans", &k.to_string())?;
    }
    exp.model.validate()?;
    let vocab = spaneit::corpus::Vocabulary::build(&data.examples, 1);
    let cooc = build_cooccurrence(&data.examples, &PolarityLexicon::builtin());
    let model = SpanEit::new(exp.model, vocab, cooc, 0)?;
    let mut out = String::new();
    for (i, ex) in data.examples.iter().enumerate() {
        let p = model.prepare(ex)?;
        let spans: Vec<String> = p.sentiment_spans.iter().map(|s| s.label()).collect();
        let _ = writeln!(out, "# example {i}");
        let _ = writeln!(out, "label\t{}", ex.label.display_name());
        let _ = writeln!(out, "tokens\t{}", p.tokens.join(" "));
        let _ = writeln!(out, "entity\t{}\t{}", ex.entity_surface, p.entity_span.label());
        let _ = writeln!(out, "spans\t{}", spans.join(" "));
        out.push_str(&p.graph.dump());
    }
    match &args.out {
        Some(path) => {
            write_file(path, &out)?;
            Ok(format!("wrote {} examples to {}\n", data.examples.len(), path.display()))
        }
        None => Ok(out),
    }
}

fn checkpoint_name(seed: u64) -> String {
    format!("model_seed{seed}.ckpt")
}

pub fn cmd_train(args: &TrainArgs) -> CliResult<String> {
    let data = load_data(&args.data)?;
    let exp = experiment_config(&args.model)?;
    let multi = train_multi(&data.examples, &exp)?;
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    for run in &multi.runs {
        write_file(&args.out.join(checkpoint_name(run.seed)), encode_checkpoint(&run.model))?;
    }
    let report = multi.report.to_string();
    write_file(&args.out.join("metrics.txt"), &report)?;
    write_file(&args.out.join("run_manifest.txt"), run_manifest("train", &data.source, &data.bytes, &exp))?;
    Ok(format!("{report}\nwrote {}\n", args.out.display()))
}

pub fn cmd_eval(args: &EvalArgs) -> CliResult<String> {
    let model = load_checkpoint(&args.ckpt)?;
    let data = load_data(&args.data)?;
    let prepared = model.prepare_all(&data.examples)?;
    let result = evaluate(&model, &prepared, &ClassWeights::uniform())?;
    let mut out = String::new();
    let _ = writeln!(out, "n={}", prepared.len());
    let _ = writeln!(out, "loss={}", result.loss);
    for (k, key) in METRIC_KEYS.iter().enumerate() {
        let _ = writeln!(out, "{key}={}", result.metrics.get(k));
    }
    if args.bootstrap > 0 {
        let ci = bootstrap_ci(&result.preds, &result.golds, args.bootstrap, args.seed)
            .map_err(|e| CliError::Usage(e.to_string()))?;
        for (k, key) in METRIC_KEYS.iter().enumerate() {
            let _ = writeln!(out, "{key}_ci={},{}", ci.get(k).lower, ci.get(k).upper);
        }
    }
    let _ = writeln!(out, "input_sha256={}", blob_sha256(&data.bytes));
    if let Some(path) = &args.out {
        write_file(path, &out)?;
    }
    Ok(out)
}

/// One row of the ablation table.
pub struct AblationRow {
    pub name: &'static str,
    pub params: usize,
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

pub fn ablation_rows(
    examples: &[AnnotatedExample],
    base: &ExperimentConfig,
    names: &[&str],
) -> CliResult<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for (name, flags) in AblationFlags::variants() {
        if !names.contains(&name) {
            continue;
        }
        let mut exp = base.clone();
        exp.model.ablation = flags;
        let MultiRun { runs, report } = train_multi(examples, &exp)?;
        let mean = [0, 1, 2].map(|k| report.mean.get(k));
        let std = [0, 1, 2].map(|k| report.std.get(k));
        rows.push(AblationRow { name, params: runs[0].model.param_count(), mean, std });
    }
    Ok(rows)
}

pub fn render_ablation(rows: &[AblationRow], seeds: &[u64]) -> String {
    let seeds: Vec<String> = seeds.iter().map(u64::to_string).collect();
    let mut out = String::new();
    let _ = writeln!(out, "# mean ± population std over seeds {}", seeds.join(","));
    let _ =
        writeln!(out, "{:<14} {:>9}  {:<17} {:<17} {:<17}", "variant", "params", "accuracy", "micro-F1", "macro-F1");
    for r in rows {
        let _ = write!(out, "{:<14} {:>9}", r.name, r.params);
        for k in 0..3 {
            let _ = write!(out, "  {:<17}", format!("{:.4} ± {:.4}", r.mean[k], r.std[k]));
        }
        out.push('\n');
    }
    out
}

pub fn cmd_ablate(args: &AblateArgs) -> CliResult<String> {
    let data = load_data(&args.data)?;
    let mut base = experiment_config(&args.model)?;
    if base.model.ablation != AblationFlags::FULL {
        return Err(CliError::Usage("ablate runs every variant; drop the --no-*/--only-text flags".into()));
    }
    base.train.bootstrap = 0;
    let all: Vec<&str> = AblationFlags::variants().iter().map(|(n, _)| *n).collect();
    let names: Vec<&str> = match &args.grid {
        None => all.clone(),
        Some(g) => {
            let names: Vec<&str> = g.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
            if let Some(bad) = names.iter().find(|n| !all.contains(n)) {
                return Err(CliError::Usage(format!("unknown variant `{bad}`; expected one of {}", all.join(", "))));
            }
            names
        }
    };
    let rows = ablation_rows(&data.examples, &base, &names)?;
    let table = render_ablation(&rows, &base.train.seeds);
    if let Some(path) = &args.out {
        write_file(path, &table)?;
    }
    Ok(table)
}
